from dataclasses import dataclass
from functools import cached_property

import numpy as np

from domefactory.utils.exceptions import NonWatertightMeshError


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangle mesh with optional per-vertex colors in [0, 1]."""

    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray = None

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle indices must lie in [0, vertex count)")
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        if self.colors is not None:
            colors = np.array(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(colors) != len(vertices):
                raise ValueError("need one color per vertex")
            colors.setflags(write=False)
            object.__setattr__(self, "colors", colors)

    def __len__(self):
        return len(self.triangles)

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    @cached_property
    def corners(self):
        """(M, 3, 3) triangle corner positions."""
        return self.vertices[self.triangles]

    @cached_property
    def face_normals(self):
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    @cached_property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def edge_use_counts(self):
        edges = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]], axis=0
        )
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return counts

    @cached_property
    def is_watertight(self):
        return bool(len(self.triangles) > 0 and np.all(self.edge_use_counts == 2))

    def require_watertight(self, what="mesh"):
        if not self.is_watertight:
            bad = int(np.sum(self.edge_use_counts != 2))
            raise NonWatertightMeshError(
                what + " is not watertight: " + str(bad) + " edges are not shared by exactly 2 triangles"
            )
        return self

    def transformed(self, pose):
        return TriMesh(pose.apply(self.vertices), self.triangles, self.colors)

    def sample_surface(self, n_per_face=1):
        """Deterministic surface points: vertices plus fixed barycentric samples per face."""
        if n_per_face <= 0:
            return self.vertices.copy()
        grid = _barycentric_grid(n_per_face)
        c = self.corners
        samples = np.einsum("kb,mbd->mkd", grid, c).reshape(-1, 3)
        return np.concatenate([self.vertices, samples], axis=0)

    def interpolate_colors(self, triangle_ids, bary_u, bary_v):
        if self.colors is None:
            return np.full((len(triangle_ids), 3), 0.5)
        tri = self.triangles[triangle_ids]
        w = 1.0 - bary_u - bary_v
        return (
            w[:, None] * self.colors[tri[:, 0]]
            + bary_u[:, None] * self.colors[tri[:, 1]]
            + bary_v[:, None] * self.colors[tri[:, 2]]
        )


def _barycentric_grid(n):
    side = 1
    while side * (side + 1) // 2 < n:
        side += 1
    pts = []
    for i in range(side):
        for j in range(side - i):
            u = (i + 1.0 / 3.0) / side
            v = (j + 1.0 / 3.0) / side
            pts.append([1.0 - u - v, u, v])
    return np.array(pts[:n])


def orient_outward_convex(vertices, triangles):
    """Flip faces whose normal points towards the centroid (convex shapes only)."""
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.array(triangles, dtype=np.int64)
    center = vertices.mean(axis=0)
    c = vertices[triangles]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", n, c.mean(axis=1) - center) < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def subdivide(mesh):
    """Midpoint subdivision; shared edges share midpoints so watertightness is kept."""
    vertices = list(mesh.vertices)
    colors = None if mesh.colors is None else list(mesh.colors)
    midpoint = {}

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            midpoint[key] = len(vertices)
            vertices.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
            if colors is not None:
                colors.append(0.5 * (mesh.colors[a] + mesh.colors[b]))
        return midpoint[key]

    triangles = []
    for a, b, c in mesh.triangles:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        triangles.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    return TriMesh(np.array(vertices), np.array(triangles), None if colors is None else np.array(colors))


def make_box(size=(1.0, 1.0, 1.0), subdivisions=0):
    hx, hy, hz = 0.5 * np.asarray(size, dtype=np.float64)
    vertices = np.array(
        [
            [-hx, -hy, -hz],
            [hx, -hy, -hz],
            [hx, hy, -hz],
            [-hx, hy, -hz],
            [-hx, -hy, hz],
            [hx, -hy, hz],
            [hx, hy, hz],
            [-hx, hy, hz],
        ]
    )
    triangles = np.array(
        [
            [0, 3, 2], [0, 2, 1],
            [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4],
            [3, 7, 6], [3, 6, 2],
            [0, 4, 7], [0, 7, 3],
            [1, 2, 6], [1, 6, 5],
        ]
    )
    mesh = TriMesh(vertices, triangles)
    for _ in range(subdivisions):
        mesh = subdivide(mesh)
    return mesh


def make_icosphere(radius=1.0, subdivisions=2):
    t = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    triangles = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    triangles = orient_outward_convex(vertices, triangles)
    mesh = TriMesh(vertices / np.linalg.norm(vertices, axis=1, keepdims=True), triangles)
    for _ in range(subdivisions):
        mesh = subdivide(mesh)
        mesh = TriMesh(mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True), mesh.triangles)
    return TriMesh(mesh.vertices * radius, mesh.triangles)


def make_tetrahedron(size=1.0):
    vertices = size * np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    triangles = orient_outward_convex(vertices, [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    return TriMesh(vertices, triangles)


def with_colors(mesh, colors):
    return TriMesh(mesh.vertices, mesh.triangles, colors)


def save_obj(path, mesh):
    """Write the v/f subset of Wavefront OBJ; colors as `v x y z r g b`."""
    lines = []
    for i, v in enumerate(mesh.vertices):
        if mesh.colors is not None:
            c = mesh.colors[i]
            lines.append("v %.9g %.9g %.9g %.6g %.6g %.6g" % (v[0], v[1], v[2], c[0], c[1], c[2]))
        else:
            lines.append("v %.9g %.9g %.9g" % (v[0], v[1], v[2]))
    for tri in mesh.triangles:
        lines.append("f %d %d %d" % (tri[0] + 1, tri[1] + 1, tri[2] + 1))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_obj(path):
    vertices, colors, triangles = [], [], []
    with open(path, "r") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
                if len(parts) >= 7:
                    colors.append([float(x) for x in parts[4:7]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                # fan-triangulate polygons
                for k in range(1, len(idx) - 1):
                    triangles.append([idx[0], idx[k], idx[k + 1]])
    if colors and len(colors) != len(vertices):
        raise ValueError("OBJ file " + str(path) + " mixes colored and uncolored vertices")
    return TriMesh(
        np.array(vertices).reshape(-1, 3),
        np.array(triangles, dtype=np.int64).reshape(-1, 3),
        np.array(colors) if colors else None,
    )

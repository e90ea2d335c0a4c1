"""Ray queries against boxes and triangle meshes (Moller-Trumbore, crossing parity)."""

from dataclasses import dataclass

import numpy as np

GEOM_EPS = 1e-9
_PARALLEL_EPS = 1e-15
_MAX_PAIRS = 2_000_000

# Fixed cast direction for inside tests, irrational-ish so it rarely grazes axis-aligned edges.
PARITY_DIRECTION = np.array([0.5377397, 0.7913152, 0.2908617])
PARITY_DIRECTION = PARITY_DIRECTION / np.linalg.norm(PARITY_DIRECTION)
_RECAST_COUNT = 16


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        direction = np.array(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(direction) - 1.0) > GEOM_EPS:
            raise ValueError("ray direction must have unit length, got |d| = " + str(np.linalg.norm(direction)))
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    @classmethod
    def towards(cls, origin, direction):
        direction = np.asarray(direction, dtype=np.float64)
        return cls(origin, direction / np.linalg.norm(direction))

    def at(self, depth):
        return self.origin + np.multiply.outer(depth, self.direction)


def ray_aabb_intersect_batch(origins, dirs, box_min, box_max):
    """Slab test for many rays. Returns (near, far, hit) with near clamped to >= 0."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    box_min = np.asarray(box_min, dtype=np.float64)
    box_max = np.asarray(box_max, dtype=np.float64)
    if np.any(box_min > box_max):
        raise ValueError("box min must be <= box max componentwise")

    parallel = dirs == 0.0
    safe = np.where(parallel, 1.0, dirs)
    t1 = (box_min - origins) / safe
    t2 = (box_max - origins) / safe
    t_lo = np.minimum(t1, t2)
    t_hi = np.maximum(t1, t2)
    inside_slab = (origins >= box_min) & (origins <= box_max)
    t_lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t_lo)
    t_hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t_hi)

    near = np.maximum(t_lo.max(axis=1), 0.0)
    far = t_hi.min(axis=1)
    hit = far >= near
    return near, far, hit


def ray_aabb_intersect(ray, box_min, box_max):
    """Entry/exit depths of `ray` through the box, or None if the forward half-line misses."""
    near, far, hit = ray_aabb_intersect_batch(ray.origin[None], ray.direction[None], box_min, box_max)
    if not hit[0]:
        return None
    return float(near[0]), float(far[0])


def _moller_trumbore(origins, dirs, corners):
    """Pairwise ray/triangle test. Shapes (R,3), (R,3), (M,3,3) -> t, u, v, det of shape (R, M)."""
    v0 = corners[None, :, 0, :]
    e1 = corners[None, :, 1, :] - v0
    e2 = corners[None, :, 2, :] - v0
    d = dirs[:, None, :]
    pvec = np.cross(d, e2)
    det = np.einsum("rmk,rmk->rm", e1, pvec)
    ok = np.abs(det) > _PARALLEL_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - v0
    u = np.einsum("rmk,rmk->rm", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = np.einsum("rmk,rmk->rm", d, qvec) * inv
    t = np.einsum("rmk,rmk->rm", e2, qvec) * inv
    return t, u, v, det, ok


def ray_mesh_first_hit_batch(origins, dirs, mesh, bary_eps=1e-12):
    """Nearest forward hit per ray. Returns depth (inf on miss), triangle id (-1), u, v."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(origins)
    depth = np.full(n, np.inf)
    tri_id = np.full(n, -1, dtype=np.int64)
    bu = np.zeros(n)
    bv = np.zeros(n)
    if mesh.is_empty or n == 0:
        return depth, tri_id, bu, bv

    lo, hi = mesh.bounds
    pad = 1e-9 * max(1.0, float(np.max(hi - lo)))
    _, _, box_hit = ray_aabb_intersect_batch(origins, dirs, lo - pad, hi + pad)
    candidates = np.nonzero(box_hit)[0]
    corners = mesh.corners
    chunk = max(1, _MAX_PAIRS // max(1, len(corners)))
    for start in range(0, len(candidates), chunk):
        idx = candidates[start : start + chunk]
        t, u, v, _, ok = _moller_trumbore(origins[idx], dirs[idx], corners)
        valid = ok & (u >= -bary_eps) & (v >= -bary_eps) & (u + v <= 1.0 + bary_eps) & (t >= 0.0)
        t = np.where(valid, t, np.inf)
        # argmin returns the first minimum: lowest triangle index on exact ties
        best = np.argmin(t, axis=1)
        rows = np.arange(len(idx))
        best_t = t[rows, best]
        found = np.isfinite(best_t)
        depth[idx[found]] = best_t[found]
        tri_id[idx[found]] = best[found]
        bu[idx[found]] = u[rows, best][found]
        bv[idx[found]] = v[rows, best][found]
    return depth, tri_id, bu, bv


def ray_mesh_first_hit(ray, mesh):
    """Nearest forward intersection as (depth, triangle index), or None."""
    if mesh.is_empty:
        raise ValueError("mesh must be nonempty")
    depth, tri_id, _, _ = ray_mesh_first_hit_batch(ray.origin[None], ray.direction[None], mesh)
    if tri_id[0] < 0:
        return None
    return float(depth[0]), int(tri_id[0])


def _recast_directions():
    rng = np.random.default_rng(20230301)
    dirs = rng.normal(size=(_RECAST_COUNT, 3))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


_RECAST_DIRECTIONS = _recast_directions()


def points_inside_mesh(points, mesh, surface_eps=GEOM_EPS):
    """Crossing-parity inside test for many points against a watertight mesh.

    Points within `surface_eps` of a face count as inside. Casts that graze an
    edge or vertex are repeated along jittered directions.
    """
    mesh.require_watertight("mesh used for inside/outside tests")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inside = np.zeros(len(points), dtype=bool)
    pending = np.arange(len(points))
    corners = mesh.corners
    normals = mesh.face_normals
    chunk = max(1, _MAX_PAIRS // max(1, len(corners)))

    for attempt in range(_RECAST_COUNT + 1):
        if len(pending) == 0:
            break
        direction = PARITY_DIRECTION if attempt == 0 else _RECAST_DIRECTIONS[attempt - 1]
        cos_n = np.abs(normals @ direction)
        still = []
        for start in range(0, len(pending), chunk):
            idx = pending[start : start + chunk]
            dirs = np.broadcast_to(direction, (len(idx), 3))
            t, u, v, _, ok = _moller_trumbore(points[idx], dirs, corners)
            w = 1.0 - u - v
            in_tri = ok & (u >= -GEOM_EPS) & (v >= -GEOM_EPS) & (w >= -GEOM_EPS)
            on_surface = np.any(in_tri & (np.abs(t) * cos_n[None, :] <= surface_eps), axis=1)
            forward = in_tri & (t > 0.0)
            grazing = np.any(forward & (np.minimum(np.minimum(u, v), w) <= GEOM_EPS), axis=1)
            crossings = np.sum(forward, axis=1)
            inside[idx] = on_surface | (crossings % 2 == 1)
            retry = ~on_surface & grazing
            still.append(idx[retry])
        pending = np.concatenate(still) if still else np.array([], dtype=np.int64)
    return inside


def point_inside_mesh(p, mesh):
    return bool(points_inside_mesh(np.asarray(p, dtype=np.float64)[None], mesh)[0])

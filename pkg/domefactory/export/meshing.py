"""Density level sets to triangle meshes (marching cubes over slabs of a regular grid)."""

import logging

import mcubes
import numpy as np
import torch

from domefactory.geometry.mesh import TriMesh
from domefactory.geometry.skeleton import bone_transforms, point_segment_distance
from domefactory.synth.scene import HUMAN, OBJECT

logger = logging.getLogger(__name__)

MIN_RESOLUTION = 16


def sample_density_grid(density_fn, bounds, resolution, slab=8):
    """Density on a resolution^3 grid spanning `bounds`, evaluated one x-slab at a time."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(3)]
    grid = np.empty((resolution, resolution, resolution))
    yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
    for start in range(0, resolution, slab):
        xs = axes[0][start : start + slab]
        points = np.stack(
            [
                np.repeat(xs, yy.size),
                np.tile(yy.reshape(-1), len(xs)),
                np.tile(zz.reshape(-1), len(xs)),
            ],
            axis=-1,
        )
        grid[start : start + len(xs)] = np.asarray(density_fn(points), dtype=np.float64).reshape(len(xs), resolution, resolution)
    return grid


def extract_level_set(density_fn, bounds, resolution=64, iso_level=10.0, slab=8):
    """Marching cubes of {density = iso_level} inside `bounds`.

    The grid is padded with one layer of zero density so surfaces touching the
    box are closed. Returns an empty mesh (with a warning) when the level set
    is empty.
    """
    if resolution < MIN_RESOLUTION:
        raise ValueError("grid resolution must be >= " + str(MIN_RESOLUTION) + ", got " + str(resolution))
    if iso_level <= 0:
        raise ValueError("iso_level must be > 0 for a density field, got " + str(iso_level))
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    grid = sample_density_grid(density_fn, (lo, hi), resolution, slab)
    if not np.any(grid >= iso_level):
        logger.warning("empty level set at iso %.3g; returning an empty mesh", iso_level)
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    padded = np.pad(grid, 1, mode="constant", constant_values=0.0)
    vertices, triangles = mcubes.marching_cubes(padded, float(iso_level))
    cell = (hi - lo) / (resolution - 1)
    vertices = lo + (vertices - 1.0) * cell
    triangles = np.asarray(triangles, dtype=np.int64)

    # outward orientation: positive signed volume
    corners = vertices[triangles]
    signed_volume = np.sum(np.einsum("ij,ij->i", corners[:, 0], np.cross(corners[:, 1], corners[:, 2]))) / 6.0
    if signed_volume < 0:
        triangles = triangles[:, ::-1].copy()
    logger.debug("level set: %d vertices, %d triangles", len(vertices), len(triangles))
    return TriMesh(vertices, triangles)


def _torch_density(layer):
    dtype = next(layer.parameters()).dtype

    def density(points):
        with torch.no_grad():
            sigma, _ = layer.canonical_density(torch.as_tensor(points, dtype=dtype))
            return sigma.numpy()

    return density


def extract_mesh(field, entity, resolution=64, iso_level=10.0):
    """Canonical mesh of one layer of a LayeredField."""
    layer = field.human if entity == HUMAN else field.obj if entity == OBJECT else None
    if entity not in (HUMAN, OBJECT):
        raise ValueError("entity must be HUMAN (0) or OBJECT (1), got " + str(entity))
    if layer is None:
        logger.warning("layer %d is empty; returning an empty mesh", entity)
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return extract_level_set(_torch_density(layer), layer.canonical_bounds, resolution, iso_level)


def pose_human_mesh(mesh, proxy, body):
    """Forward-pose canonical vertices with the rigid motion of their nearest rest-pose bone."""
    if mesh.is_empty:
        return mesh
    bt = bone_transforms(proxy, body)
    bone = np.argmin(point_segment_distance(mesh.vertices, bt["rest_a"], bt["rest_b"]), axis=1)
    local = mesh.vertices - bt["rest_a"][bone]
    posed = np.einsum("nij,nj->ni", bt["rotation"][bone], local) + bt["posed_a"][bone]
    return TriMesh(posed, mesh.triangles, mesh.colors)

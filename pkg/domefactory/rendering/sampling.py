"""Per-entity ray segments, stratified depth samples and depth-sorted merging."""

import logging
from dataclasses import dataclass

import numpy as np

from domefactory.geometry.rays import ray_aabb_intersect_batch, ray_mesh_first_hit_batch
from domefactory.synth.scene import HUMAN, OBJECT

logger = logging.getLogger(__name__)

ENTITIES = (HUMAN, OBJECT)


@dataclass(frozen=True)
class RaySegment:
    entity: int
    near: float
    far: float
    n_bins: int

    def __post_init__(self):
        if self.entity not in ENTITIES:
            raise ValueError("entity must be HUMAN (0) or OBJECT (1), got " + str(self.entity))
        if not (0.0 <= self.near <= self.far):
            raise ValueError("segment needs 0 <= near <= far, got [" + str(self.near) + ", " + str(self.far) + "]")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1, got " + str(self.n_bins))


@dataclass(frozen=True, eq=False)
class RaySampleSet:
    """Merged samples of one ray: depths ascending, entity per sample, spacing delta."""

    depths: np.ndarray
    entities: np.ndarray
    deltas: np.ndarray

    def __len__(self):
        return len(self.depths)


def segment_rays_batch(origins, dirs, human_box=None, posed_template=None, cfg=None):
    """Per-ray entity segments for many rays.

    Returns a dict of (R,) arrays: human_near/far/hit and object_near/far/hit.
    The human segment is the ray interval inside `human_box` grown by
    `human_margin` on every side. The object segment is a window of
    half-width `object_window` around the first hit with the posed template.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(origins)
    out = {
        "human_near": np.zeros(n),
        "human_far": np.zeros(n),
        "human_hit": np.zeros(n, dtype=bool),
        "object_near": np.zeros(n),
        "object_far": np.zeros(n),
        "object_hit": np.zeros(n, dtype=bool),
    }
    if human_box is not None:
        margin = 0.0 if cfg is None else float(cfg.get("human_margin", 0.0))
        if margin < 0:
            raise ValueError("human_margin must be >= 0, got " + str(margin))
        lo = np.asarray(human_box[0], dtype=np.float64) - margin
        hi = np.asarray(human_box[1], dtype=np.float64) + margin
        near, far, hit = ray_aabb_intersect_batch(origins, dirs, lo, hi)
        out["human_hit"] = hit
        out["human_near"] = np.where(hit, near, 0.0)
        out["human_far"] = np.where(hit, far, 0.0)
    if posed_template is not None and not posed_template.is_empty:
        w = float(cfg["object_window"])
        depth, tri_id, _, _ = ray_mesh_first_hit_batch(origins, dirs, posed_template)
        hit = tri_id >= 0
        out["object_hit"] = hit
        out["object_near"] = np.where(hit, np.maximum(depth - w, 0.0), 0.0)
        out["object_far"] = np.where(hit, depth + w, 0.0)
    return out


def segment_rays(ray, human_box, posed_template, cfg):
    """List of RaySegment for one ray; empty when it misses both entities."""
    seg = segment_rays_batch(ray.origin[None], ray.direction[None], human_box, posed_template, cfg)
    segments = []
    if seg["human_hit"][0]:
        segments.append(RaySegment(HUMAN, float(seg["human_near"][0]), float(seg["human_far"][0]), int(cfg["human_bins"])))
    if seg["object_hit"][0]:
        segments.append(
            RaySegment(OBJECT, float(seg["object_near"][0]), float(seg["object_far"][0]), int(cfg["object_bins"]))
        )
    return segments


def stratified_sample_batch(near, far, n_bins, rng=None, midpoint=False):
    """(R, n_bins) depths, sample j uniform inside bin j of [near, far]."""
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1, got " + str(n_bins))
    if midpoint:
        u = np.full(near.shape + (n_bins,), 0.5)
    else:
        if rng is None:
            raise ValueError("stochastic sampling needs an rng (or midpoint=True)")
        u = rng.random(near.shape + (n_bins,))
    t = (np.arange(n_bins) + u) / n_bins
    return near[..., None] + t * (far - near)[..., None]


def stratified_sample(seg, rng=None, midpoint=False):
    return stratified_sample_batch(np.array(seg.near), np.array(seg.far), seg.n_bins, rng, midpoint)


def merge_sample_batch(depths, entities, valid, far_delta):
    """Sort padded per-ray samples by (depth, entity).

    Invalid slots move to the end with delta 0; the last valid sample of each
    ray gets `far_delta`. Returns (order, sorted depths, sorted entities,
    sorted valid, deltas).
    """
    depths = np.where(valid, depths, np.inf)
    order = np.lexsort((entities, depths), axis=-1)
    d = np.take_along_axis(depths, order, axis=-1)
    e = np.take_along_axis(entities, order, axis=-1)
    v = np.take_along_axis(valid, order, axis=-1)
    next_valid = np.concatenate([v[:, 1:], np.zeros((len(v), 1), dtype=bool)], axis=1)
    next_depth = np.concatenate([d[:, 1:], np.full((len(d), 1), np.inf)], axis=1)
    with np.errstate(invalid="ignore"):
        deltas = np.where(next_valid, next_depth - d, far_delta)
    deltas = np.where(v, deltas, 0.0)
    return order, d, e, v, deltas


def merge_samples(sample_lists, far_delta=0.01):
    """Merge per-segment (depths, entity) lists of one ray into a RaySampleSet."""
    if len(sample_lists) == 0:
        return RaySampleSet(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0))
    depths = np.concatenate([np.asarray(d, dtype=np.float64).reshape(-1) for d, _ in sample_lists])
    entities = np.concatenate([np.full(np.size(d), e, dtype=np.int64) for d, e in sample_lists])
    _, d, e, _, deltas = merge_sample_batch(depths[None], entities[None], np.ones((1, len(depths)), dtype=bool), far_delta)
    return RaySampleSet(d[0], e[0], deltas[0])

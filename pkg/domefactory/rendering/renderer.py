"""Layered volume rendering: segment -> sample -> eval fields -> merge -> composite.

Every ray carries a fixed slot layout of `human_bins` human samples followed by
`object_bins` object samples. Slots of an absent or dropped layer are marked
invalid instead of removed, so all modes share one code path and the same
random stream.
"""

import logging

import numpy as np
import torch

from domefactory.rendering.compositing import composite_all
from domefactory.rendering.sampling import merge_sample_batch, segment_rays_batch, stratified_sample_batch
from domefactory.synth.scene import HUMAN, OBJECT

logger = logging.getLogger(__name__)

MODES = ("full", "human", "object", "labels")


def _segments(field, origins, dirs, frame_ids, cfg):
    n = len(origins)
    seg = {
        key: np.zeros(n, dtype=bool if key.endswith("hit") else np.float64)
        for key in ("human_near", "human_far", "human_hit", "object_near", "object_far", "object_hit")
    }
    for frame in np.unique(frame_ids):
        rows = np.nonzero(frame_ids == frame)[0]
        human_box = field.human.frame_bounds[frame] if field.human is not None else None
        posed = field.obj.posed_template(frame) if field.obj is not None else None
        part = segment_rays_batch(origins[rows], dirs[rows], human_box, posed, cfg)
        for key, value in part.items():
            seg[key][rows] = value
    return seg


def _eval_layer(layer, points, dirs, frames, valid, dtype):
    """Query `layer` on the valid slots only; invalid slots get sigma = 0, rgb = 0."""
    n_rays, n_slots = valid.shape
    sigma = torch.zeros(n_rays, n_slots, dtype=dtype)
    rgb = torch.zeros(n_rays, n_slots, 3, dtype=dtype)
    if layer is None or not np.any(valid):
        return sigma, rgb
    mask = torch.as_tensor(valid)
    s, c = layer.query(
        torch.as_tensor(points[valid], dtype=dtype),
        torch.as_tensor(dirs[valid], dtype=dtype),
        torch.as_tensor(frames[valid], dtype=torch.long),
    )
    sigma = sigma.masked_scatter(mask, s)
    rgb = rgb.masked_scatter(mask[..., None].expand(n_rays, n_slots, 3), c)
    return sigma, rgb


def render_rays(field, origins, dirs, frame_ids, cfg, rng=None, mode="full", midpoint=False):
    """Render a batch of rays. Returns a dict of torch tensors rgb (R, 3), alpha (R,), labels (R, 2)."""
    if mode not in MODES:
        raise ValueError("mode must be one of " + str(MODES) + ", got " + str(mode))
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    frame_ids = np.broadcast_to(np.asarray(frame_ids, dtype=np.int64), (len(origins),))
    n_h, n_o = int(cfg["human_bins"]), int(cfg["object_bins"])
    dtype = field.dtype

    seg = _segments(field, origins, dirs, frame_ids, cfg)
    # both layers always draw their samples so the random stream does not depend on the mode
    depth_h = stratified_sample_batch(seg["human_near"], seg["human_far"], n_h, rng, midpoint)
    depth_o = stratified_sample_batch(seg["object_near"], seg["object_far"], n_o, rng, midpoint)
    keep_h = mode != "object" and field.human is not None
    keep_o = mode != "human" and field.obj is not None
    valid_h = np.repeat((seg["human_hit"] & keep_h)[:, None], n_h, axis=1)
    valid_o = np.repeat((seg["object_hit"] & keep_o)[:, None], n_o, axis=1)

    def positions(depths):
        return origins[:, None, :] + depths[..., None] * dirs[:, None, :]

    frames_slots = lambda k: np.repeat(frame_ids[:, None], k, axis=1)
    dirs_slots = lambda k: np.repeat(dirs[:, None, :], k, axis=1)
    sigma_h, rgb_h = _eval_layer(field.human, positions(depth_h), dirs_slots(n_h), frames_slots(n_h), valid_h, dtype)
    sigma_o, rgb_o = _eval_layer(field.obj, positions(depth_o), dirs_slots(n_o), frames_slots(n_o), valid_o, dtype)

    depths = np.concatenate([depth_h, depth_o], axis=1)
    entities = np.concatenate(
        [np.full(depth_h.shape, HUMAN, dtype=np.int64), np.full(depth_o.shape, OBJECT, dtype=np.int64)], axis=1
    )
    valid = np.concatenate([valid_h, valid_o], axis=1)
    order, _, sorted_entities, _, deltas = merge_sample_batch(depths, entities, valid, float(cfg["far_delta"]))

    order_t = torch.as_tensor(order)
    sigma = torch.gather(torch.cat([sigma_h, sigma_o], dim=1), 1, order_t)
    rgb = torch.gather(torch.cat([rgb_h, rgb_o], dim=1), 1, order_t[..., None].expand(-1, -1, 3))
    color, alpha, labels = composite_all(
        sigma, torch.as_tensor(deltas, dtype=dtype), rgb, torch.as_tensor(sorted_entities)
    )
    return {"rgb": color, "alpha": alpha, "labels": labels}


def render_view(field, camera, frame, cfg, mode="full", rng=None, midpoint=True):
    """Render a whole view as numpy arrays.

    Returns (H, W, 3) colors for full / human / object modes and (H, W, 2)
    label maps for mode "labels"; the alpha map comes along as the second
    return value.
    """
    origins, dirs = camera.pixel_rays()
    chunk = int(cfg["chunk"])
    colors, alphas, labels = [], [], []
    with torch.no_grad():
        for start in range(0, len(origins), chunk):
            out = render_rays(
                field, origins[start : start + chunk], dirs[start : start + chunk], frame, cfg, rng, mode, midpoint
            )
            colors.append(out["rgb"].numpy())
            alphas.append(out["alpha"].numpy())
            labels.append(out["labels"].numpy())
    h, w = camera.height, camera.width
    alpha = np.concatenate(alphas).reshape(h, w)
    if mode == "labels":
        return np.concatenate(labels).reshape(h, w, 2), alpha
    return np.concatenate(colors).reshape(h, w, 3), alpha

"""Training objectives of the layered field.

All losses are means over their rays / sample points, not sums, so the
weights stay comparable across batch sizes and sample counts. Repeating a
batch leaves every loss unchanged.
"""

import logging

import numpy as np
import torch

from domefactory.fields.human import eval_human
from domefactory.geometry.rays import points_inside_mesh

logger = logging.getLogger(__name__)

LOSS_TERMS = ("L_c", "L_o", "L_h", "L_s")
WEIGHT_KEYS = {"L_c": "w_c", "L_o": "w_o", "L_h": "w_h", "L_s": "w_s"}


def validate_loss_config(cfg):
    for key in ("w_c", "w_o", "w_h", "w_s", "tau_s"):
        if float(cfg[key]) < 0:
            raise ValueError("loss config '" + key + "' must be >= 0, got " + str(cfg[key]))
    for key in ("n_object_samples", "n_human_samples"):
        if int(cfg[key]) < 0:
            raise ValueError("loss config '" + key + "' must be >= 0, got " + str(cfg[key]))
    if not 0.0 <= float(cfg["pseudo_seg_fraction"]) <= 1.0:
        raise ValueError("pseudo_seg_fraction must lie in [0, 1], got " + str(cfg["pseudo_seg_fraction"]))
    return cfg


def loss_photometric(rendered, observed):
    """Mean over rays of |C - C_hat|^2."""
    observed = torch.as_tensor(observed, dtype=rendered.dtype)
    if rendered.shape != observed.shape:
        raise ValueError("rendered and observed colors differ in shape: " + str(tuple(rendered.shape)) + " vs " + str(tuple(observed.shape)))
    if len(rendered) == 0:
        return rendered.sum() * 0.0
    return torch.mean(torch.sum((rendered - observed) ** 2, dim=-1))


def sample_box_points(bounds, n, rng):
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    return lo + rng.random((n, 3)) * (hi - lo)


def object_template_samples(field, n, rng):
    """Uniform points in the object's canonical box with their inside flags w.r.t. the template."""
    points = sample_box_points(field.canonical_bounds, n, rng)
    return points, points_inside_mesh(points, field.template)


def loss_object_template(field, points, inside=None, template=None):
    """Mean over canonical points of inside * exp(-sigma)^2 + outside * sigma^2.

    `inside` defaults to the crossing-parity test against `template` (the
    field's own canonical template unless given).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if inside is None:
        inside = points_inside_mesh(points, field.template if template is None else template)
    inside = np.asarray(inside, dtype=bool)
    dtype = next(field.parameters()).dtype
    sigma, _ = field.canonical_density(torch.as_tensor(points, dtype=dtype))
    omega_in = torch.as_tensor(inside, dtype=dtype)
    per_point = omega_in * torch.exp(-sigma) ** 2 + (1.0 - omega_in) * sigma**2
    if len(per_point) == 0:
        return sigma.sum() * 0.0
    return torch.mean(per_point)


def human_contact_samples(field, posed_template, frame, n, rng):
    """Uniform points in the frame's human box with inside flags w.r.t. the posed template."""
    points = sample_box_points(field.frame_bounds[frame], n, rng)
    return points, points_inside_mesh(points, posed_template)


def loss_human_contact(field, posed_template, points, frame, inside=None):
    """Mean over sample points of inside(posed template) * sigma_human^2."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if inside is None:
        inside = points_inside_mesh(points, posed_template)
    inside = np.asarray(inside, dtype=bool)
    dtype = next(field.parameters()).dtype
    n = max(len(points), 1)
    if not np.any(inside):
        return torch.zeros((), dtype=dtype)
    x = torch.as_tensor(points[inside], dtype=dtype)
    # density does not depend on the view direction
    dirs = torch.zeros_like(x)
    dirs[:, 2] = 1.0
    sigma, _ = eval_human(x, dirs, frame, field)
    return torch.sum(sigma**2) / n


def loss_semantic(labels, pseudo_labels, object_rays=None):
    """Mean over pseudo-labelled object rays of |s - s_hat|^2; 0 with a warning when there are none."""
    pseudo_labels = torch.as_tensor(pseudo_labels, dtype=labels.dtype)
    if object_rays is not None:
        select = torch.as_tensor(np.asarray(object_rays, dtype=bool))
        labels = labels[select]
        pseudo_labels = pseudo_labels[select]
    if len(labels) == 0:
        logger.warning("no pseudo-labelled object rays in batch; semantic loss is 0")
        return labels.sum() * 0.0
    return torch.mean(torch.sum((labels - pseudo_labels) ** 2, dim=-1))


def total_loss(terms, cfg):
    """Weighted sum of the loss terms present in `terms`, plus the float breakdown."""
    total = None
    breakdown = {}
    for name in LOSS_TERMS:
        if name not in terms:
            breakdown[name] = 0.0
            continue
        weighted = float(cfg[WEIGHT_KEYS[name]]) * terms[name]
        total = weighted if total is None else total + weighted
        breakdown[name] = float(terms[name].detach())
    if total is None:
        raise ValueError("total_loss needs at least one loss term")
    breakdown["total"] = float(total.detach())
    return total, breakdown

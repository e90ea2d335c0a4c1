"""Emission-absorption compositing of merged layer samples.

weight_i = T_i (1 - exp(-sigma_i delta_i)),  T_i = exp(-sum_{k<i} sigma_k delta_k)
"""

import torch

N_LABELS = 2


def composite_weights(sigma, delta):
    """Per-sample weights and transmittance for (..., M) densities and spacings."""
    optical = sigma * delta
    # samples with zero spacing contribute nothing, whatever their density
    optical = torch.where(delta > 0, optical, torch.zeros_like(optical))
    # exclusive running sum: T of the first sample is exactly 1
    accumulated = torch.cumsum(optical, dim=-1)[..., :-1]
    accumulated = torch.cat([torch.zeros_like(optical[..., :1]), accumulated], dim=-1)
    transmittance = torch.exp(-accumulated)
    weights = transmittance * (1.0 - torch.exp(-optical))
    return weights, transmittance


def _label_alphas(weights, entities):
    one_hot = torch.nn.functional.one_hot(entities.to(torch.long), N_LABELS).to(weights.dtype)
    return torch.sum(weights[..., None] * one_hot, dim=-2)


def composite_label(sigma, delta, entities):
    """Label vector (..., 2): accumulated weight per layer (human, object)."""
    weights, _ = composite_weights(sigma, delta)
    return _label_alphas(weights, entities)


def composite_color(sigma, delta, rgb, entities=None):
    """Composited color (..., 3) and alpha (...,).

    With `entities` the alpha is the sum of the two label components, so it
    matches `composite_label` exactly.
    """
    weights, _ = composite_weights(sigma, delta)
    color = torch.sum(weights[..., None] * rgb, dim=-2)
    if entities is None:
        alpha = torch.sum(weights, dim=-1)
    else:
        labels = _label_alphas(weights, entities)
        alpha = labels[..., 0] + labels[..., 1]
    return color, alpha


def composite_all(sigma, delta, rgb, entities):
    """Color, alpha and labels from one set of weights."""
    weights, _ = composite_weights(sigma, delta)
    labels = _label_alphas(weights, entities)
    color = torch.sum(weights[..., None] * rgb, dim=-2)
    return color, labels[..., 0] + labels[..., 1], labels

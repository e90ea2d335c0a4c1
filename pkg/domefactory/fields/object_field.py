import logging

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from domefactory.fields.encoding import PosEncoding
from domefactory.fields.human import _frame_index
from domefactory.fields.torch_mlp import TorchMLP

logger = logging.getLogger(__name__)


class ObjectField(nn.Module):
    """Static canonical object field, posed per frame by the tracked rigid poses."""

    def __init__(self, network_config, template, poses):
        super(ObjectField, self).__init__()
        if len(poses) == 0:
            raise ValueError("ObjectField needs the object pose of at least one frame")
        template.require_watertight("object template")
        self.network_config = network_config
        self.template = template
        self.poses = list(poses)
        self.n_frames = len(self.poses)
        self.latent_dim = int(network_config["latent_dim"])

        self.register_buffer(
            "pose_rotation", torch.as_tensor(np.stack([p.rotation for p in self.poses]), dtype=torch.float64)
        )
        self.register_buffer(
            "pose_translation", torch.as_tensor(np.stack([p.translation for p in self.poses]), dtype=torch.float64)
        )

        lo, hi = template.bounds
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) * float(network_config["bounds_scale"])
        self.canonical_bounds = (center - half, center + half)
        self.register_buffer("bounds_center", torch.as_tensor(center, dtype=torch.float64))
        self.register_buffer("bounds_half", torch.as_tensor(half, dtype=torch.float64))
        self._posed_templates = [None] * self.n_frames

        self.pos_encoding = PosEncoding(network_config["pos_freqs"])
        self.dir_encoding = PosEncoding(network_config["dir_freqs"])
        self.density_mlp = TorchMLP(
            network_config,
            input_shape=self.pos_encoding.output_dim,
            layer_key="density_layer_sizes",
            activation_key="density_activations",
        )
        self.density_head = nn.Linear(network_config["density_layer_sizes"][-1], 1)
        self.color_mlp = TorchMLP(
            network_config,
            input_shape=network_config["density_layer_sizes"][-1] + self.dir_encoding.output_dim + self.latent_dim,
            layer_key="color_layer_sizes",
            activation_key="color_activations",
        )
        self.latents = nn.Parameter(torch.zeros(self.n_frames, self.latent_dim))

    def parameter_groups(self):
        return {
            "object_canonical": [p for m in (self.density_mlp, self.density_head, self.color_mlp) for p in m.parameters()],
            "object_latents": [self.latents],
        }

    def layer_widths(self):
        return {
            "object_density": [self.pos_encoding.output_dim] + self.density_mlp.layer_sizes + [1],
            "object_color": [self.color_mlp.input_shape] + self.color_mlp.layer_sizes,
        }

    def posed_template(self, frame):
        if self._posed_templates[frame] is None:
            self._posed_templates[frame] = self.template.transformed(self.poses[frame])
        return self._posed_templates[frame]

    def to_canonical(self, x, dirs, frame_ids):
        # row vectors: R^T (x - T) == (x - T) @ R
        rotation = self.pose_rotation[frame_ids]
        x_c = torch.einsum("nj,nji->ni", x - self.pose_translation[frame_ids], rotation)
        d_c = torch.einsum("nj,nji->ni", dirs, rotation)
        return x_c, d_c

    def canonical_density(self, x_c):
        features = self.density_mlp(self.pos_encoding((x_c - self.bounds_center) / self.bounds_half))
        return F.softplus(self.density_head(features)[..., 0]), features

    def canonical(self, x_c, d_c, latent):
        sigma, features = self.canonical_density(x_c)
        rgb = self.color_mlp(torch.cat([features, self.dir_encoding(d_c), latent], dim=-1))
        return sigma, rgb

    def query(self, x, dirs, frame_ids):
        x_c, d_c = self.to_canonical(x, dirs, frame_ids)
        return self.canonical(x_c, d_c, self.latents[frame_ids])

    def forward(self, x, dirs, frame_ids):
        return self.query(x, dirs, frame_ids)


def eval_object(x, dirs, frame, field):
    """Density (N,) and color (N, 3) of the object layer: canonical lookup at pose^-1(x)."""
    x = torch.atleast_2d(x)
    dirs = torch.atleast_2d(dirs)
    frame_ids = _frame_index(frame, len(x))
    if torch.any(frame_ids < 0) or torch.any(frame_ids >= field.n_frames):
        raise IndexError("frame index out of range for a field with " + str(field.n_frames) + " frames")
    return field.query(x, dirs, frame_ids)

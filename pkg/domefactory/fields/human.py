"""Pose-conditioned human radiance field.

World samples are pulled into the rest pose by inverting the rigid motion of
the nearest capsule bone, nudged by a bounded deformation network conditioned
on the frame's pose embedding, and then looked up in the canonical MLPs.
"""

import logging

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from domefactory.fields.encoding import PosEncoding
from domefactory.fields.torch_mlp import TorchMLP
from domefactory.geometry.skeleton import (
    BodyParams,
    bone_transforms,
    human_bounds,
    point_segment_distance,
)

logger = logging.getLogger(__name__)


def warp_to_canonical_human(points, body, proxy):
    """Map world points (N, 3) into the rest pose of `body`.

    Returns (canonical points, bone index). Each point follows its nearest posed
    bone segment; exact distance ties go to the lower bone index.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    bt = bone_transforms(proxy, body)
    bone = np.argmin(point_segment_distance(points, bt["posed_a"], bt["posed_b"]), axis=1)
    local = points - bt["posed_a"][bone]
    canonical = np.einsum("nji,nj->ni", bt["rotation"][bone], local) + bt["rest_a"][bone]
    return canonical, bone


def _segment_distance_torch(points, a, b):
    ab = b - a
    ap = points[:, None, :] - a
    denom = torch.clamp(torch.sum(ab * ab, dim=-1), min=1e-300)
    h = torch.clamp(torch.sum(ap * ab, dim=-1) / denom, 0.0, 1.0)
    return torch.linalg.norm(ap - h[..., None] * ab, dim=-1)


class HumanField(nn.Module):
    """Canonical human density/color MLPs, deformation MLP and per-frame latents.

    `bodies` holds the tracked BodyParams of every frame; their bone transforms
    and pose embeddings are stored as buffers so they travel with the module.
    """

    def __init__(self, network_config, proxy, bodies):
        super(HumanField, self).__init__()
        if len(bodies) == 0:
            raise ValueError("HumanField needs the body parameters of at least one frame")
        self.network_config = network_config
        self.proxy = proxy
        self.bodies = list(bodies)
        self.n_frames = len(self.bodies)
        self.latent_dim = int(network_config["latent_dim"])
        self.max_deformation = float(network_config["max_deformation"])

        transforms = [bone_transforms(proxy, body) for body in self.bodies]
        stack = lambda key: torch.as_tensor(np.stack([t[key] for t in transforms]), dtype=torch.float64)
        self.register_buffer("rest_a", stack("rest_a"))
        self.register_buffer("posed_a", stack("posed_a"))
        self.register_buffer("posed_b", stack("posed_b"))
        self.register_buffer("bone_rotation", stack("rotation"))
        self.register_buffer(
            "pose_embedding",
            torch.as_tensor(np.stack([b.pose_embedding() for b in self.bodies]), dtype=torch.float64),
        )

        # canonical box: union of every frame's rest-pose capsules
        margin = float(network_config["bounds_margin"])
        rest_boxes = [human_bounds(proxy, BodyParams(np.zeros_like(b.pose), b.shape, np.zeros(3)), margin) for b in self.bodies]
        lo = np.min([box[0] for box in rest_boxes], axis=0)
        hi = np.max([box[1] for box in rest_boxes], axis=0)
        self.canonical_bounds = (lo, hi)
        self.register_buffer("bounds_center", torch.as_tensor(0.5 * (lo + hi), dtype=torch.float64))
        self.register_buffer("bounds_half", torch.as_tensor(0.5 * (hi - lo), dtype=torch.float64))
        # world-space boxes used by the renderer to segment rays
        self.frame_bounds = [human_bounds(proxy, b, margin) for b in self.bodies]

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
        self.deform_mlp = TorchMLP(
            network_config,
            input_shape=self.pos_encoding.output_dim + 3 * proxy.n_joints,
            layer_key="deform_layer_sizes",
            activation_key="deform_activations",
            zero_output_layer=True,
        )
        self.latents = nn.Parameter(torch.zeros(self.n_frames, self.latent_dim))

    def parameter_groups(self):
        return {
            "human_canonical": [p for m in (self.density_mlp, self.density_head, self.color_mlp) for p in m.parameters()],
            "human_deformation": list(self.deform_mlp.parameters()),
            "human_latents": [self.latents],
        }

    def layer_widths(self):
        return {
            "human_density": [self.pos_encoding.output_dim] + self.density_mlp.layer_sizes + [1],
            "human_color": [self.color_mlp.input_shape] + self.color_mlp.layer_sizes,
            "human_deform": [self.deform_mlp.input_shape] + self.deform_mlp.layer_sizes,
        }

    def _normalize(self, x):
        return (x - self.bounds_center) / self.bounds_half

    def warp(self, x, dirs, frame_ids):
        """Torch inverse skinning for a batch: (canonical points, canonical dirs)."""
        with torch.no_grad():
            a = self.posed_a[frame_ids]
            bone = torch.argmin(_segment_distance_torch(x, a, self.posed_b[frame_ids]), dim=1)
        rows = torch.arange(len(x))
        rotation = self.bone_rotation[frame_ids, bone]
        x_c = torch.einsum("nji,nj->ni", rotation, x - a[rows, bone]) + self.rest_a[frame_ids, bone]
        d_c = torch.einsum("nji,nj->ni", rotation, dirs)
        return x_c, d_c

    def deformation(self, x_c, frame_ids):
        features = torch.cat([self.pos_encoding(self._normalize(x_c)), self.pose_embedding[frame_ids]], dim=-1)
        return self.max_deformation * torch.tanh(self.deform_mlp(features))

    def canonical_density(self, x_c):
        features = self.density_mlp(self.pos_encoding(self._normalize(x_c)))
        return F.softplus(self.density_head(features)[..., 0]), features

    def canonical(self, x_c, d_c, latent):
        """Raw canonical field: softplus density (N,) and sigmoid color (N, 3)."""
        sigma, features = self.canonical_density(x_c)
        rgb = self.color_mlp(torch.cat([features, self.dir_encoding(d_c), latent], dim=-1))
        return sigma, rgb

    def query(self, x, dirs, frame_ids):
        x_c, d_c = self.warp(x, dirs, frame_ids)
        x_c = x_c + self.deformation(x_c, frame_ids)
        return self.canonical(x_c, d_c, self.latents[frame_ids])

    def forward(self, x, dirs, frame_ids):
        return self.query(x, dirs, frame_ids)


def _frame_index(frame, n):
    if isinstance(frame, torch.Tensor):
        return frame.to(torch.long).expand(n) if frame.dim() == 0 else frame.to(torch.long)
    frame = np.asarray(frame)
    if frame.ndim == 0:
        return torch.full((n,), int(frame), dtype=torch.long)
    return torch.as_tensor(frame, dtype=torch.long)


def eval_human(x, dirs, frame, field):
    """Density (N,) and color (N, 3) of the human layer at world points for frame(s) `frame`."""
    x = torch.atleast_2d(x)
    dirs = torch.atleast_2d(dirs)
    frame_ids = _frame_index(frame, len(x))
    if torch.any(frame_ids < 0) or torch.any(frame_ids >= field.n_frames):
        raise IndexError("frame index out of range for a field with " + str(field.n_frames) + " frames")
    return field.query(x, dirs, frame_ids)

"""Per-frame tracking energy: joints, contact, soft silhouettes and markers.

E = E_smpl + lambda_contact E_contact + lambda_homask E_homask + lambda_marker E_marker

All terms are torch expressions of the body tensors (pose, shape, translation)
and the object rotation / translation so the optimizer gets exact gradients.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from domefactory.geometry.registration import MarkerSet
from domefactory.geometry.skeleton import (
    BodyProxy,
    body_tensors,
    capsule_surface_samples,
    pose_capsule_samples,
)
from domefactory.tracking.body_fit import smpl_energy

logger = logging.getLogger(__name__)

TERMS = ("smpl", "contact", "homask", "marker")


@dataclass
class TrackingFrame:
    """Everything observed at one frame plus the models being fitted."""

    frame: int
    proxy: BodyProxy
    template: object
    cameras: list
    joints_3d: np.ndarray
    joints_valid: np.ndarray
    markers: MarkerSet
    homasks: np.ndarray = None

    @classmethod
    def from_truth(cls, truth, scene, joints_3d=None, joints_valid=None):
        """Observations of a synthetic frame; `joints_3d` defaults to the exact 3D joints."""
        if joints_3d is None:
            joints_3d = truth.joints_3d
            joints_valid = np.ones(len(joints_3d), dtype=bool)
        return cls(
            frame=truth.frame,
            proxy=scene.proxy,
            template=scene.template,
            cameras=scene.cameras,
            joints_3d=np.asarray(joints_3d, dtype=np.float64),
            joints_valid=np.asarray(joints_valid, dtype=bool),
            markers=truth.markers,
            homasks=truth.union_masks,
        )


@dataclass
class EnergyBreakdown:
    smpl: float
    contact: float
    homask: float
    marker: float
    weights: dict = field(default_factory=dict)
    homask_available: bool = True

    @property
    def weighted(self):
        return {
            "smpl": self.smpl,
            "contact": self.weights["lambda_contact"] * self.contact,
            "homask": self.weights["lambda_homask"] * self.homask,
            "marker": self.weights["lambda_marker"] * self.marker,
        }

    @property
    def total(self):
        w = self.weighted
        return w["smpl"] + w["contact"] + w["homask"] + w["marker"]

    def to_dict(self):
        out = {"total": self.total}
        out.update({k: getattr(self, k) for k in TERMS})
        return out


def resample_mask(mask, resolution):
    """Area-average a binary mask down (or up) to resolution x resolution, values in [0, 1]."""
    pil = Image.fromarray((np.asarray(mask, dtype=np.float64) * 255.0).astype(np.uint8))
    pil = pil.resize((resolution, resolution), resample=Image.BOX)
    return np.asarray(pil, dtype=np.float64) / 255.0


class EnergyContext:
    """Constant tensors shared by every energy evaluation of one frame."""

    def __init__(self, frame, cfg, dtype=torch.float64):
        self.frame = frame
        self.proxy = frame.proxy
        self.dtype = dtype
        self.weights = {k: float(cfg[k]) for k in ("lambda_contact", "lambda_homask", "lambda_marker")}
        if any(v < 0 for v in self.weights.values()):
            raise ValueError("tracking weights must be >= 0, got " + str(self.weights))
        self.sigma = float(cfg["splat_sigma"])
        self.resolution = int(cfg["homask_resolution"])

        self.body_samples = capsule_surface_samples(self.proxy, cfg["body_samples_around"], cfg["body_samples_along"])
        template = frame.template
        self.template_vertices = torch.as_tensor(np.array(template.vertices), dtype=dtype)
        self.template_samples = torch.as_tensor(template.sample_surface(cfg["object_samples_per_face"]), dtype=dtype)

        # marker ids are template vertex indices
        self.marker_model = torch.as_tensor(template.vertices[frame.markers.ids], dtype=dtype)
        self.marker_target = torch.as_tensor(np.array(frame.markers.positions), dtype=dtype)

        joints = np.where(frame.joints_valid[:, None], frame.joints_3d, 0.0)
        self.joints = torch.as_tensor(joints, dtype=dtype)
        self.joints_valid = torch.as_tensor(frame.joints_valid)

        cams = [cam.scaled(self.resolution, self.resolution) for cam in frame.cameras]
        self.cam_rotation = torch.as_tensor(np.stack([c.pose.rotation for c in cams]), dtype=dtype)
        self.cam_translation = torch.as_tensor(np.stack([c.pose.translation for c in cams]), dtype=dtype)
        self.cam_focal = torch.as_tensor([[c.fx, c.fy] for c in cams], dtype=dtype)
        self.cam_center = torch.as_tensor([[c.cx, c.cy] for c in cams], dtype=dtype)
        self.pixel_centers = torch.arange(self.resolution, dtype=dtype) + 0.5

        self.homask_available = frame.homasks is not None
        if self.homask_available:
            self.homask_target = torch.as_tensor(
                np.stack([resample_mask(m, self.resolution) for m in frame.homasks]), dtype=dtype
            )
        else:
            self.homask_target = None
            if self.weights["lambda_homask"] > 0:
                logger.warning("frame %d has no human-object masks; E_homask omitted", frame.frame)


def soft_silhouette(points, ctx):
    """Splat points with an isotropic Gaussian footprint into every view: (V, R, R) in [0, 1)."""
    cam = torch.einsum("vij,nj->vni", ctx.cam_rotation, points) + ctx.cam_translation[:, None, :]
    z = cam[..., 2]
    in_front = (z > 1e-6).to(points.dtype)
    safe_z = torch.where(z > 1e-6, z, torch.ones_like(z))
    uv = ctx.cam_focal[:, None, :] * cam[..., :2] / safe_z[..., None] + ctx.cam_center[:, None, :]
    two_s2 = 2.0 * ctx.sigma * ctx.sigma
    gu = torch.exp(-((ctx.pixel_centers[None, None, :] - uv[..., 0:1]) ** 2) / two_s2) * in_front[..., None]
    gv = torch.exp(-((ctx.pixel_centers[None, None, :] - uv[..., 1:2]) ** 2) / two_s2)
    density = torch.einsum("vnh,vnw->vhw", gv, gu)
    return 1.0 - torch.exp(-density)


def energy_terms(ctx, pose, shape, translation, obj_rotation, obj_translation, contact):
    """Unweighted energy terms as torch scalars."""
    zero = torch.zeros((), dtype=pose.dtype)
    terms = {"smpl": smpl_energy(ctx.proxy, pose, shape, translation, ctx.joints, ctx.joints_valid)}

    need_body_points = (contact is not None and len(contact) > 0) or ctx.homask_available
    body_points = pose_capsule_samples(ctx.proxy, ctx.body_samples, pose, shape, translation) if need_body_points else None

    if contact is not None and len(contact) > 0:
        obj_v = ctx.template_vertices[torch.as_tensor(contact.object_indices.copy())] @ obj_rotation.T + obj_translation
        diff = obj_v - body_points[torch.as_tensor(contact.body_indices.copy())]
        terms["contact"] = torch.sum(diff * diff)
    else:
        terms["contact"] = zero

    if ctx.homask_available:
        obj_points = ctx.template_samples @ obj_rotation.T + obj_translation
        rendered = soft_silhouette(torch.cat([body_points, obj_points], dim=0), ctx)
        terms["homask"] = torch.mean((ctx.homask_target - rendered) ** 2)
    else:
        terms["homask"] = zero

    diff = ctx.marker_model @ obj_rotation.T + obj_translation - ctx.marker_target
    terms["marker"] = torch.sum(diff * diff)
    return terms


def weighted_total(ctx, terms):
    w = ctx.weights
    return (
        terms["smpl"]
        + w["lambda_contact"] * terms["contact"]
        + w["lambda_homask"] * terms["homask"]
        + w["lambda_marker"] * terms["marker"]
    )


def breakdown_from_terms(ctx, terms):
    return EnergyBreakdown(
        smpl=float(terms["smpl"]),
        contact=float(terms["contact"]),
        homask=float(terms["homask"]),
        marker=float(terms["marker"]),
        weights=dict(ctx.weights),
        homask_available=ctx.homask_available,
    )


def energy_total(body, obj, frame, cfg, contact=None, ctx=None):
    """Evaluate the tracking energy at (body, obj) and return its per-term breakdown."""
    if ctx is None:
        ctx = EnergyContext(frame, cfg)
    with torch.no_grad():
        terms = energy_terms(
            ctx,
            *body_tensors(body, ctx.dtype),
            torch.as_tensor(np.array(obj.rotation), dtype=ctx.dtype),
            torch.as_tensor(np.array(obj.translation), dtype=ctx.dtype),
            contact,
        )
    return breakdown_from_terms(ctx, terms)


def body_surface_points(ctx, body):
    with torch.no_grad():
        return pose_capsule_samples(ctx.proxy, ctx.body_samples, *body_tensors(body, ctx.dtype)).numpy()

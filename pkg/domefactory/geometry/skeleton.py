"""Capsule-skeleton body proxy: kinematic tree, forward kinematics and capsule queries.

Bone b connects joint `b + 1` to its parent. The rotation of joint `b + 1` turns
bone b (and everything below it); the shape factor b scales its rest offset.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import torch

DEFAULT_JOINT_NAMES = ("pelvis", "spine", "neck", "head", "l_elbow", "l_wrist", "r_elbow", "r_wrist")
DEFAULT_PARENTS = (-1, 0, 1, 2, 2, 4, 2, 6)
DEFAULT_OFFSETS = (
    (0.0, 0.95, 0.0),
    (0.0, 0.25, 0.0),
    (0.0, 0.22, 0.0),
    (0.0, 0.20, 0.0),
    (0.30, -0.05, 0.0),
    (0.26, 0.0, 0.0),
    (-0.30, -0.05, 0.0),
    (-0.26, 0.0, 0.0),
)
# one radius per bone (bone b ends at joint b + 1)
DEFAULT_RADII = (0.13, 0.07, 0.10, 0.05, 0.045, 0.05, 0.045)
DEFAULT_BONE_COLORS = (
    (0.80, 0.45, 0.30),
    (0.85, 0.65, 0.50),
    (0.90, 0.75, 0.60),
    (0.30, 0.45, 0.80),
    (0.90, 0.75, 0.60),
    (0.30, 0.70, 0.45),
    (0.90, 0.75, 0.60),
)

SHAPE_MIN = 0.5
SHAPE_MAX = 2.0


@dataclass(frozen=True, eq=False)
class BodyProxy:
    """Kinematic tree of J joints with capsule bones."""

    joint_names: tuple = DEFAULT_JOINT_NAMES
    parents: tuple = DEFAULT_PARENTS
    offsets: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_OFFSETS))
    radii: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_RADII))
    bone_colors: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_BONE_COLORS))

    def __post_init__(self):
        offsets = np.array(self.offsets, dtype=np.float64).reshape(-1, 3)
        radii = np.array(self.radii, dtype=np.float64).reshape(-1)
        colors = np.array(self.bone_colors, dtype=np.float64).reshape(-1, 3)
        parents = tuple(int(p) for p in self.parents)
        n = len(parents)
        if len(self.joint_names) != n or len(offsets) != n:
            raise ValueError("joint names, parents and offsets must all have one entry per joint")
        if parents[0] != -1 or any(p == -1 for p in parents[1:]):
            raise ValueError("joint 0 must be the only root")
        if any(not (0 <= parents[j] < j) for j in range(1, n)):
            raise ValueError("parents must precede their children (connected, acyclic tree)")
        if len(radii) != n - 1 or np.any(radii <= 0):
            raise ValueError("need one positive capsule radius per bone")
        if len(colors) != n - 1:
            raise ValueError("need one color per bone")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "bone_colors", colors)

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def n_bones(self):
        return len(self.parents) - 1

    @cached_property
    def bone_parent_joint(self):
        return np.array(self.parents[1:], dtype=np.int64)

    @cached_property
    def bone_child_joint(self):
        return np.arange(1, self.n_joints, dtype=np.int64)

    def to_dict(self):
        return {
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "radii": self.radii.tolist(),
            "bone_colors": self.bone_colors.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["joint_names"]), tuple(d["parents"]), d["offsets"], d["radii"], d["bone_colors"])


@dataclass(frozen=True, eq=False)
class BodyParams:
    """Per-frame body state: axis-angle pose (J, 3), bone scales (J - 1,), translation (3,)."""

    pose: np.ndarray
    shape: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pose", np.array(self.pose, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "shape", np.array(self.shape, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def rest(cls, proxy):
        return cls(np.zeros((proxy.n_joints, 3)), np.ones(proxy.n_bones), np.zeros(3))

    def validate(self, proxy=None):
        if proxy is not None and (len(self.pose) != proxy.n_joints or len(self.shape) != proxy.n_bones):
            raise ValueError("body params do not match the proxy's joint / bone counts")
        if np.any(self.shape <= SHAPE_MIN) or np.any(self.shape >= SHAPE_MAX):
            raise ValueError("bone scales must lie in (" + str(SHAPE_MIN) + ", " + str(SHAPE_MAX) + ")")
        if np.any(np.linalg.norm(self.pose, axis=1) >= np.pi):
            raise ValueError("axis-angle magnitudes must be < pi")
        return self

    def pose_embedding(self):
        return self.pose.reshape(-1).copy()

    def to_vector(self):
        return np.concatenate([self.pose.reshape(-1), self.shape, self.translation])

    @classmethod
    def from_vector(cls, vec, proxy):
        j, b = proxy.n_joints, proxy.n_bones
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[: 3 * j].reshape(j, 3), vec[3 * j : 3 * j + b], vec[3 * j + b : 3 * j + b + 3])

    def to_dict(self):
        return {"pose": self.pose.tolist(), "shape": self.shape.tolist(), "translation": self.translation.tolist()}


def axis_angle_to_matrix(rotvec):
    """Rodrigues formula in torch, smooth through the zero rotation. (..., 3) -> (..., 3, 3)."""
    theta2 = torch.sum(rotvec * rotvec, dim=-1, keepdim=True)
    small = theta2 < 1e-8
    safe2 = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(safe2)
    a = torch.where(small, 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0, (1.0 - torch.cos(theta)) / safe2)
    x, y, z = rotvec[..., 0], rotvec[..., 1], rotvec[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], dim=-1).reshape(rotvec.shape[:-1] + (3, 3))
    eye = torch.eye(3, dtype=rotvec.dtype, device=rotvec.device).expand(k.shape)
    return eye + a[..., None] * k + b[..., None] * (k @ k)


def forward_kinematics(proxy, pose, shape, translation):
    """Posed joint positions (J, 3) and global joint rotations (J, 3, 3), differentiable."""
    dtype = pose.dtype
    offsets = torch.as_tensor(proxy.offsets, dtype=dtype)
    local = axis_angle_to_matrix(pose)
    positions = [offsets[0] + translation]
    rotations = [local[0]]
    for j in range(1, proxy.n_joints):
        q = proxy.parents[j]
        rotation = rotations[q] @ local[j]
        positions.append(positions[q] + rotation @ (shape[j - 1] * offsets[j]))
        rotations.append(rotation)
    return torch.stack(positions), torch.stack(rotations)


def rest_joint_positions(proxy, shape):
    """Joint positions at theta = 0, gamma = 0 for the given bone scales (numpy)."""
    shape = np.asarray(shape, dtype=np.float64)
    positions = np.zeros((proxy.n_joints, 3))
    positions[0] = proxy.offsets[0]
    for j in range(1, proxy.n_joints):
        positions[j] = positions[proxy.parents[j]] + shape[j - 1] * proxy.offsets[j]
    return positions


def body_tensors(body, dtype=torch.float64):
    return (
        torch.as_tensor(body.pose, dtype=dtype),
        torch.as_tensor(body.shape, dtype=dtype),
        torch.as_tensor(body.translation, dtype=dtype),
    )


def posed_joints(proxy, body):
    """Numpy forward kinematics: (positions (J, 3), rotations (J, 3, 3))."""
    with torch.no_grad():
        pos, rot = forward_kinematics(proxy, *body_tensors(body))
    return pos.numpy(), rot.numpy()


def bone_transforms(proxy, body):
    """Per-bone rigid map rest -> posed: x = R_b (c - a_rest_b) + a_b.

    Returns a dict of numpy arrays: rest segment ends, posed segment ends and R_b.
    """
    pos, rot = posed_joints(proxy, body)
    rest = rest_joint_positions(proxy, body.shape)
    parent = proxy.bone_parent_joint
    child = proxy.bone_child_joint
    return {
        "rest_a": rest[parent],
        "rest_b": rest[child],
        "posed_a": pos[parent],
        "posed_b": pos[child],
        "rotation": rot[child],
    }


def point_segment_distance(points, a, b):
    """Distances (N, B) from points (N, 3) to segments a (B, 3) -> b (B, 3)."""
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-300)
    ap = points[:, None, :] - a[None]
    h = np.clip(np.sum(ap * ab[None], axis=-1) / denom[None], 0.0, 1.0)
    diff = ap - h[..., None] * ab[None]
    return np.linalg.norm(diff, axis=-1)


def human_bounds(proxy, body, margin=0.05):
    """Axis-aligned box around every posed capsule, padded by `margin`."""
    pos, _ = posed_joints(proxy, body)
    parent = proxy.bone_parent_joint
    child = proxy.bone_child_joint
    ends = np.concatenate([pos[parent], pos[child]], axis=0)
    radii = np.concatenate([proxy.radii, proxy.radii])
    lo = np.min(ends - radii[:, None], axis=0) - margin
    hi = np.max(ends + radii[:, None], axis=0) + margin
    return lo, hi



@dataclass(frozen=True, eq=False)
class CapsuleSamples:
    """Surface points bound to bones: x = a_b + h (b_b - a_b) + R_b @ offset.

    `offset` is the rest-frame displacement from the bone axis, so the binding
    stays on the surface for any pose and any bone scale.
    """

    bone_ids: np.ndarray
    fractions: np.ndarray
    offsets: np.ndarray

    def __len__(self):
        return len(self.bone_ids)


def capsule_surface_samples(proxy, n_around=8, n_along=4):
    """Deterministic samples on every capsule wall plus one point on each cap."""
    if n_around < 1 or n_along < 1:
        raise ValueError("n_around and n_along must be >= 1")
    angles = 2.0 * np.pi * (np.arange(n_around) + 0.5) / n_around
    bones, fractions, offsets = [], [], []
    for b in range(proxy.n_bones):
        axis = proxy.offsets[b + 1] / np.linalg.norm(proxy.offsets[b + 1])
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(axis, helper)
        u /= np.linalg.norm(u)
        v = np.cross(axis, u)
        r = proxy.radii[b]
        ring = r * (np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * v)
        for s in (np.arange(n_along) + 0.5) / n_along:
            offsets.append(ring)
            fractions.append(np.full(n_around, s))
        offsets.append(np.stack([-r * axis, r * axis]))
        fractions.append(np.array([0.0, 1.0]))
        bones.append(np.full(n_around * n_along + 2, b))
    return CapsuleSamples(
        np.concatenate(bones).astype(np.int64), np.concatenate(fractions), np.concatenate(offsets, axis=0)
    )


def pose_capsule_samples(proxy, samples, pose, shape, translation):
    """Posed sample positions (K, 3) as a differentiable function of the body tensors."""
    dtype = pose.dtype
    positions, rotations = forward_kinematics(proxy, pose, shape, translation)
    parent = torch.as_tensor(proxy.bone_parent_joint[samples.bone_ids])
    child = torch.as_tensor(proxy.bone_child_joint[samples.bone_ids])
    h = torch.as_tensor(samples.fractions, dtype=dtype)[:, None]
    offsets = torch.as_tensor(samples.offsets, dtype=dtype)
    a = positions[parent]
    return a + h * (positions[child] - a) + torch.einsum("nij,nj->ni", rotations[child], offsets)


def capsule_sample_points(proxy, body, samples):
    """Numpy version of `pose_capsule_samples` for a fixed BodyParams."""
    with torch.no_grad():
        return pose_capsule_samples(proxy, samples, *body_tensors(body)).numpy()


def ray_capsule_intersect(origins, dirs, a, b, radius):
    """Nearest forward hit of many rays with one capsule; returns depth (inf on miss)."""
    ba = b - a
    oa = origins - a
    baba = ba @ ba
    bard = dirs @ ba
    baoa = oa @ ba
    rdoa = np.sum(dirs * oa, axis=1)
    oaoa = np.sum(oa * oa, axis=1)
    qa = baba - bard * bard
    qb = baba * rdoa - baoa * bard
    qc = baba * oaoa - baoa * baoa - radius * radius * baba
    h = qb * qb - qa * qc
    depth = np.full(len(origins), np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        body_ok = (h >= 0) & (np.abs(qa) > 1e-15)
        t_body = (-qb - np.sqrt(np.where(h >= 0, h, 0.0))) / np.where(np.abs(qa) > 1e-15, qa, 1.0)
        y = baoa + t_body * bard
        wall = body_ok & (y > 0) & (y < baba) & (t_body >= 0)
        depth = np.where(wall, t_body, depth)

        for cap in (a, b):
            oc = origins - cap
            cb = np.sum(dirs * oc, axis=1)
            cc = np.sum(oc * oc, axis=1) - radius * radius
            ch = cb * cb - cc
            t_cap = -cb - np.sqrt(np.where(ch >= 0, ch, 0.0))
            ok = (ch >= 0) & (t_cap >= 0)
            depth = np.where(ok & (t_cap < depth), t_cap, depth)
    return depth


def capsule_normals(points, a, b):
    ab = b - a
    ap = points - a
    h = np.clip(ap @ ab / (ab @ ab), 0.0, 1.0)
    n = ap - h[:, None] * ab
    return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)

"""Closed-form rigid fitting and point-to-point ICP."""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from domefactory.geometry.rigid import RigidPose
from domefactory.utils.exceptions import DegenerateConfigurationError

logger = logging.getLogger(__name__)

COLLINEAR_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MarkerSet:
    """Labelled 3D marker positions; ids are stable integer labels."""

    positions: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        ids = np.array(self.ids, dtype=np.int64).reshape(-1)
        if len(ids) != len(positions):
            raise ValueError("need one id per marker position")
        if len(positions) < 3:
            raise ValueError("a marker set needs at least 3 markers, got " + str(len(positions)))
        if len(np.unique(ids)) != len(ids):
            raise ValueError("marker ids must be unique")
        positions.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.ids)

    def transformed(self, pose):
        return MarkerSet(pose.apply(self.positions), self.ids)

    def sorted_by_id(self):
        order = np.argsort(self.ids, kind="stable")
        return MarkerSet(self.positions[order], self.ids[order])

    def to_frame(self):
        return pd.DataFrame(
            {
                "id": self.ids,
                "x": self.positions[:, 0],
                "y": self.positions[:, 1],
                "z": self.positions[:, 2],
            }
        )

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path):
        df = pd.read_csv(path)
        return cls(df[["x", "y", "z"]].to_numpy(dtype=np.float64), df["id"].to_numpy(dtype=np.int64))


@dataclass
class RegistrationResult:
    pose: RigidPose
    rms: float
    n_iterations: int = 0
    rms_history: list = field(default_factory=list)
    converged: bool = True


def rigid_fit_points(source, target):
    """Least-squares rotation + translation (no scale) mapping source rows onto target rows."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ValueError("source and target must both be (N, 3) arrays of equal shape")
    if len(source) < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences, got " + str(len(source)))

    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    src_c = source - mu_s
    tgt_c = target - mu_t

    sing = np.linalg.svd(src_c, compute_uv=False)
    if sing[0] <= 0 or sing[1] <= COLLINEAR_TOL * max(1.0, sing[0]):
        raise DegenerateConfigurationError("source points are collinear or coincident")

    cov = tgt_c.T @ src_c
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    rotation = u @ np.diag([1.0, 1.0, d]) @ vt
    translation = mu_t - rotation @ mu_s
    return RigidPose(rotation, translation)


def _rms(a, b):
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def umeyama_rigid_fit(source, target):
    """Rigid pose taking `source` markers onto `target` markers, matched by id."""
    src = source.sorted_by_id()
    tgt = target.sorted_by_id()
    if len(src) != len(tgt) or np.any(src.ids != tgt.ids):
        raise ValueError(
            "marker ids do not match: source "
            + str(src.ids.tolist())
            + " vs target "
            + str(tgt.ids.tolist())
        )
    pose = rigid_fit_points(src.positions, tgt.positions)
    return RegistrationResult(pose=pose, rms=_rms(pose.apply(src.positions), tgt.positions))


def icp_rigid(source, target, init=None, max_iters=50, tol=1e-12):
    """Point-to-point ICP: nearest-neighbour matching alternated with rigid fits.

    The returned `rms_history` is non-increasing: a new pose is only taken when it
    lowers the matched RMS.
    """
    source = np.atleast_2d(np.asarray(source, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both point clouds must be nonempty")
    pose = RigidPose.identity() if init is None else init

    tree = cKDTree(target)
    dist, nn = tree.query(pose.apply(source))
    rms = float(np.sqrt(np.mean(dist**2)))
    history = [rms]
    converged = False
    n_iterations = 0

    for _ in range(max_iters):
        matched = target[nn]
        if len(np.unique(nn)) < 3:
            raise DegenerateConfigurationError("fewer than 3 distinct nearest-neighbour correspondences")
        candidate = rigid_fit_points(source, matched)
        dist, cand_nn = tree.query(candidate.apply(source))
        cand_rms = float(np.sqrt(np.mean(dist**2)))
        if not cand_rms < rms:
            converged = True
            break
        improvement = rms - cand_rms
        pose, nn, rms = candidate, cand_nn, cand_rms
        history.append(rms)
        n_iterations += 1
        if improvement < tol:
            converged = True
            break

    if not converged:
        logger.warning("ICP stopped at max_iters=%d with rms=%.3e", max_iters, rms)
    return RegistrationResult(pose=pose, rms=rms, n_iterations=n_iterations, rms_history=history, converged=converged)

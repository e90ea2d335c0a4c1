import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MIN_VIEWS = 2


@dataclass
class TriangulationResult:
    """3D joints with per-joint validity; invalid joints are NaN."""

    joints: np.ndarray
    valid: np.ndarray
    reprojection_rms: np.ndarray
    n_views: np.ndarray

    @property
    def rms(self):
        if not np.any(self.valid):
            return float("nan")
        return float(np.sqrt(np.mean(self.reprojection_rms[self.valid] ** 2)))

    def to_frame(self, names=None):
        df = pd.DataFrame(self.joints, columns=["x", "y", "z"])
        df.insert(0, "index", np.arange(len(self.joints)))
        if names is not None:
            df.insert(1, "name", list(names))
        df["valid"] = self.valid
        df["n_views"] = self.n_views
        df["reprojection_rms"] = self.reprojection_rms
        return df


def _dlt_point(uv, projections):
    rows = []
    for (u, v), p in zip(uv, projections):
        rows.append(u * p[2] - p[0])
        rows.append(v * p[2] - p[1])
    a = np.array(rows)
    # row scaling keeps the homogeneous system well conditioned in pixel units
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    _, _, vt = np.linalg.svd(a)
    x = vt[-1]
    return x[:3] / x[3]


def triangulate_joints(joints_2d, cameras, visible=None):
    """Linear (DLT) triangulation of every joint from its visible views.

    joints_2d: (V, J, 2) pixel coordinates, visible: optional (V, J) booleans.
    Joints seen by fewer than two views are flagged invalid.
    """
    joints_2d = np.asarray(joints_2d, dtype=np.float64)
    n_views, n_joints = joints_2d.shape[:2]
    if n_views != len(cameras):
        raise ValueError("joints_2d has " + str(n_views) + " views but " + str(len(cameras)) + " cameras were given")
    if visible is None:
        visible = np.isfinite(joints_2d).all(axis=-1)
    visible = np.asarray(visible, dtype=bool)
    projections = np.stack([cam.projection_matrix for cam in cameras])

    joints = np.full((n_joints, 3), np.nan)
    valid = np.zeros(n_joints, dtype=bool)
    rms = np.full(n_joints, np.nan)
    counts = visible.sum(axis=0)
    for j in range(n_joints):
        views = np.nonzero(visible[:, j])[0]
        if len(views) < MIN_VIEWS:
            logger.warning("joint %d seen in %d view(s); marked invalid", j, len(views))
            continue
        x = _dlt_point(joints_2d[views, j], projections[views])
        residuals = [cameras[v].project(x[None])[0][0] - joints_2d[v, j] for v in views]
        joints[j] = x
        valid[j] = True
        rms[j] = float(np.sqrt(np.mean(np.sum(np.square(residuals), axis=1))))
    return TriangulationResult(joints=joints, valid=valid, reprojection_rms=rms, n_views=counts)

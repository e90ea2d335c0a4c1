import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 8
# stabilizers for unit dynamic range
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("images differ in shape: " + str(a.shape) + " vs " + str(b.shape))
    return a, b


def metric_psnr(a, b):
    """10 log10(1 / MSE) in dB, capped at 99 dB (identical images)."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def metric_ssim(a, b, window=SSIM_WINDOW):
    """Mean SSIM over all window x window patches (stride 1) and channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError("image " + str(a.shape[:2]) + " is smaller than the " + str(window) + "x" + str(window) + " window")
    wa = sliding_window_view(a, (window, window), axis=(0, 1))
    wb = sliding_window_view(b, (window, window), axis=(0, 1))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    ssim = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    return float(np.mean(ssim))


def metric_pose(estimate, truth):
    """(geodesic rotation error in degrees, translation error) between two RigidPose."""
    cos = (np.trace(estimate.rotation.T @ truth.rotation) - 1.0) / 2.0
    angle = float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return angle, float(np.linalg.norm(estimate.translation - truth.translation))


def metric_iou(a, b):
    """Intersection over union of two boolean masks; two empty masks count as 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("masks differ in shape: " + str(a.shape) + " vs " + str(b.shape))
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


def metric_precision(predicted, truth):
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    n = np.count_nonzero(predicted)
    if n == 0:
        return float("nan")
    return float(np.count_nonzero(predicted & truth) / n)


def joint_rms(estimate, truth):
    """Root mean square Euclidean joint error; rows with NaN are ignored."""
    diff = np.asarray(estimate, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    ok = np.all(np.isfinite(diff), axis=-1)
    if not np.any(ok):
        return float("nan")
    return float(np.sqrt(np.mean(np.sum(diff[ok] ** 2, axis=-1))))


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    mask_iou: float
    rotation_error_deg: float
    translation_error: float
    joint_rms: float
    config_hash: str = ""
    details: dict = field(default_factory=dict)

    HEADLINE = ("psnr", "ssim", "mask_iou", "rotation_error_deg", "translation_error", "joint_rms")

    def is_finite(self):
        return all(np.isfinite(getattr(self, k)) for k in self.HEADLINE)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from domefactory.geometry import RigidPose, random_pose
from domefactory.utils.metrics import (
    MetricsReport,
    joint_rms,
    metric_iou,
    metric_pose,
    metric_precision,
    metric_psnr,
    metric_ssim,
)


def test_psnr_of_known_error():
    a = np.zeros((4, 4, 3))
    assert metric_psnr(a, a + 0.1) == pytest.approx(20.0)
    assert metric_psnr(a, a) == 99.0
    with pytest.raises(ValueError):
        metric_psnr(a, np.zeros((4, 5, 3)))


def test_ssim_identity_and_inversion(rng):
    a = rng.random((16, 16, 3))
    assert metric_ssim(a, a) == pytest.approx(1.0)
    assert metric_ssim(a, 1.0 - a) < 0.0
    with pytest.raises(ValueError):
        metric_ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def windowed_ssim(a, b, window=8, c1=0.01**2, c2=0.03**2):
    values = []
    for c in range(a.shape[2]):
        for i in range(a.shape[0] - window + 1):
            for j in range(a.shape[1] - window + 1):
                x = a[i : i + window, j : j + window, c].ravel()
                y = b[i : i + window, j : j + window, c].ravel()
                mx, my = x.mean(), y.mean()
                cov = np.mean((x - mx) * (y - my))
                values.append(
                    ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx**2 + my**2 + c1) * (x.var() + y.var() + c2))
                )
    return float(np.mean(values))


def test_ssim_matches_a_per_window_loop(rng):
    a = rng.random((16, 16, 3))
    b = np.clip(a + 0.2 * rng.normal(size=a.shape), 0.0, 1.0)
    assert metric_ssim(a, b) == pytest.approx(windowed_ssim(a, b), rel=1e-10)
    c = rng.random((16, 16, 3))
    assert metric_ssim(a, c) == pytest.approx(windowed_ssim(a, c), rel=1e-8, abs=1e-12)
    assert metric_ssim(a[..., 0], b[..., 0]) == pytest.approx(windowed_ssim(a[..., :1], b[..., :1]), rel=1e-10)


def test_pose_error_matches_quaternion_angle(rng):
    for _ in range(20):
        truth = random_pose(rng)
        estimate = random_pose(rng)
        relative = Rotation.from_matrix(estimate.rotation.T @ truth.rotation).as_quat()
        expected = np.degrees(2.0 * np.arccos(np.clip(abs(relative[3]), 0.0, 1.0)))
        angle, translation = metric_pose(estimate, truth)
        assert angle == pytest.approx(expected, abs=1e-6)
        assert translation == pytest.approx(np.linalg.norm(estimate.translation - truth.translation))


def test_pose_error_of_known_rotation():
    truth = RigidPose.identity()
    estimate = RigidPose.from_rotvec(np.deg2rad(30.0) * np.array([0.0, 1.0, 0.0]), [0.0, 0.0, 0.2])
    angle, translation = metric_pose(estimate, truth)
    assert angle == pytest.approx(30.0)
    assert translation == pytest.approx(0.2)


def test_iou_properties(rng):
    a = rng.random((10, 10)) > 0.5
    b = rng.random((10, 10)) > 0.3
    assert metric_iou(a, b) == metric_iou(b, a)
    assert metric_iou(a, a) == 1.0
    assert metric_iou(np.zeros((3, 3), dtype=bool), np.zeros((3, 3), dtype=bool)) == 1.0
    assert metric_iou(a, ~a) == 0.0
    with pytest.raises(ValueError):
        metric_iou(a, b[:5])


def test_precision():
    predicted = np.array([True, True, False, True])
    truth = np.array([True, False, False, True])
    assert metric_precision(predicted, truth) == pytest.approx(2.0 / 3.0)
    assert np.isnan(metric_precision(np.zeros(4, dtype=bool), truth))


def test_joint_rms_skips_invalid_rows():
    truth = np.zeros((3, 3))
    estimate = np.array([[3.0, 4.0, 0.0], [np.nan, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert joint_rms(estimate, truth) == pytest.approx(np.sqrt(25.0 / 2.0))
    assert np.isnan(joint_rms(np.full((2, 3), np.nan), np.zeros((2, 3))))


def test_metrics_report_round_trip():
    report = MetricsReport(30.0, 0.9, 0.8, 0.1, 0.001, 0.01, "abc", {"holdout_views": [0]})
    assert report.is_finite()
    assert MetricsReport.from_dict(report.to_dict()) == report
    assert not MetricsReport(float("nan"), 0.9, 0.8, 0.1, 0.001, 0.01).is_finite()

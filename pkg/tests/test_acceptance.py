"""Desk-scale regression runs on the default config. Run with --runslow."""

import copy
import os

import numpy as np
import pandas as pd
import pytest
import torch

from domefactory.cli import FINAL_CHECKPOINT, REPORT, run_pipeline
from domefactory.config import pipeline_config
from domefactory.fields import build_layered_field, eval_human
from domefactory.geometry import RigidPose
from domefactory.geometry.rays import points_inside_mesh
from domefactory.losses import sample_box_points
from domefactory.synth import SceneSpec, generate_scene, load_scene
from domefactory.tracking import load_tracking, track_sequence
from domefactory.trainers import apply_checkpoint, load_checkpoint
from domefactory.utils.metrics import metric_pose
from domefactory.utils.util_funs import read_json

pytestmark = pytest.mark.slow


def perturbed(pose, degrees, offset, axis=(0.3, 0.9, 0.3)):
    axis = np.asarray(axis) / np.linalg.norm(axis)
    return RigidPose.from_rotvec(np.deg2rad(degrees) * axis, offset * axis).compose(pose)


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("desk"))
    status, manifest = run_pipeline(out_dir=out, verbose=0)
    assert status == 0
    return out, manifest


def test_default_scene_object_tracking_from_twenty_degrees():
    config = copy.deepcopy(pipeline_config)
    scene = generate_scene(SceneSpec.from_config(config["scene"]), verbose=0)
    inits = [perturbed(t.object_pose, 20.0, 0.05) for t in scene.frames]
    results = track_sequence(scene, config["tracking"], object_inits=inits, verbose=0)
    for r, truth in zip(results, scene.frames):
        rot, trans = metric_pose(r.object_pose, truth.object_pose)
        assert rot < 0.5
        assert trans < 5e-3


def test_reconstruction_quality(default_run):
    out, _ = default_run
    report = read_json(os.path.join(out, REPORT))
    assert report["psnr"] >= 25.0
    assert report["mask_iou"] >= 0.8


def test_pseudo_segmentation_precision(default_run):
    _, manifest = default_run
    assert manifest["stages"]["segment"]["precision"] > 0.9


def test_training_loss_decreases(default_run):
    out, _ = default_run
    history = pd.read_csv(os.path.join(out, "reports", "training_history.csv"))
    assert history["total"].iloc[-1000:].mean() < history["total"].iloc[:1000].mean()


def test_template_regularizers_shape_the_densities(default_run):
    out, manifest = default_run
    scene = load_scene(out)
    tracked = load_tracking(out, manifest["stages"]["track"]["files"])
    field = build_layered_field(
        scene.proxy,
        [t.body for t in tracked],
        scene.template,
        [t.object_pose for t in tracked],
        pipeline_config["network_human"],
        pipeline_config["network_object"],
    )
    apply_checkpoint(load_checkpoint(os.path.join(out, FINAL_CHECKPOINT)), field)
    rng = np.random.default_rng(0)

    obj = field.obj
    points = sample_box_points(obj.canonical_bounds, 8192, rng)
    inside = points_inside_mesh(points, obj.template)
    with torch.no_grad():
        sigma, _ = obj.canonical_density(torch.as_tensor(points, dtype=field.dtype))
    sigma = sigma.numpy()
    assert sigma[inside][:1024].mean() > 5.0
    assert sigma[~inside][:1024].mean() < 1e-2

    posed = obj.posed_template(0)
    points = sample_box_points(field.human.frame_bounds[0], 8192, rng)
    inside = points_inside_mesh(points, posed)
    x = torch.as_tensor(points[inside], dtype=field.dtype)
    dirs = torch.zeros_like(x)
    dirs[:, 2] = 1.0
    with torch.no_grad():
        sigma_h, _ = eval_human(x, dirs, 0, field.human)
    assert sigma_h.mean().item() < 1e-2

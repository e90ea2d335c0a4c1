import copy

import hypothesis
import numpy as np
import pytest
import torch

from domefactory.config import pipeline_config
from domefactory.fields import backprop, build_layered_field
from domefactory.losses import loss_object_template, object_template_samples
from domefactory.synth.scene import SceneSpec, generate_scene
from domefactory.trainers import get_optimizer, optimizer_step

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("default", max_examples=20, deadline=None)
hypothesis.settings.load_profile("default")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the desk-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end test")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


SMALL_SCENE = {
    "n_cameras": 4,
    "width": 32,
    "height": 32,
    "n_frames": 2,
    "template_subdivisions": 1,
}

SMALL_NETWORK = {
    "pos_freqs": 2,
    "dir_freqs": 1,
    "density_layer_sizes": [16, 16],
    "density_activations": ["relu", "relu"],
    "color_layer_sizes": [8, 3],
    "color_activations": ["relu", "sigmoid"],
    "latent_dim": 4,
}


def scaled_down_config():
    """Pipeline config scaled down to a few seconds per stage."""
    config = copy.deepcopy(pipeline_config)
    config["scene"].update(SMALL_SCENE)
    config["network_human"].update(SMALL_NETWORK)
    config["network_human"].update(
        {"deform_layer_sizes": [8, 3], "deform_activations": ["relu", "linear"]}
    )
    config["network_object"].update(SMALL_NETWORK)
    config["render"].update({"human_bins": 8, "object_bins": 4, "chunk": 2048})
    config["loss"].update({"n_object_samples": 64, "n_human_samples": 64})
    config["train"].update({"n_steps": 6, "batch_size": 64, "checkpoint_every": 3, "log_every": 2})
    config["tracking"].update({"max_iters": 5, "fit_max_iters": 200, "homask_resolution": 16})
    config["export"].update({"mesh_resolution": 16})
    return config


@pytest.fixture
def small_config():
    return scaled_down_config()


@pytest.fixture(scope="session")
def pipeline_overrides():
    return scaled_down_config()


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneSpec(**SMALL_SCENE), verbose=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def object_fit(small_scene):
    """Object-only field fitted on the template occupancy loss alone: (field, first loss, last loss)."""
    config = scaled_down_config()
    network = dict(config["network_object"], density_layer_sizes=[32, 32])
    field = build_layered_field(
        small_scene.proxy,
        None,
        small_scene.template,
        [t.object_pose for t in small_scene.frames],
        config["network_human"],
        network,
        seed=0,
        dtype=torch.float64,
    )
    obj = field.obj
    optimizer = get_optimizer(obj, dict(config["train"], learning_rate=1e-2))
    rng = np.random.default_rng(0)
    losses = []
    for _ in range(300):
        points, inside = object_template_samples(obj, 512, rng)
        loss = loss_object_template(obj, points, inside)
        losses.append(loss.item())
        optimizer_step(optimizer, obj, backprop(loss, obj))
    return field, losses[0], losses[-1]

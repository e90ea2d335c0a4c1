import copy
import logging
import os
from collections import OrderedDict

import numpy as np
import pytest
import torch

from domefactory.config import train_config_layered
from domefactory.fields import backprop, build_layered_field
from domefactory.losses import total_loss
from domefactory.trainers import (
    ModelTrainerLayered,
    RayDataset,
    get_optimizer,
    get_scheduler,
    learning_rate,
    optimizer_step,
    ray_loader,
    train,
    validate_train_config,
)
from domefactory.utils.exceptions import TrainingDivergedError


def tracked_truth(scene):
    """Ground-truth bodies and object poses standing in for tracking results."""
    return [t for t in scene.frames]


class Scalar(torch.nn.Module):
    def __init__(self, value):
        super().__init__()
        self.x = torch.nn.Parameter(torch.tensor([value], dtype=torch.float64))


def scalar(value):
    return OrderedDict(x=torch.tensor([value], dtype=torch.float64))


def test_learning_rate_schedule():
    cfg = dict(train_config_layered)
    assert learning_rate(cfg, 0) == cfg["learning_rate"]
    assert learning_rate(cfg, 7) == cfg["learning_rate"] * cfg["lr_decay"] ** 7
    assert learning_rate(cfg, 2000) == pytest.approx(0.5 * cfg["learning_rate"], rel=1e-12)


def test_validate_train_config():
    validate_train_config(dict(train_config_layered))
    for key, value in (("learning_rate", 0.0), ("batch_size", 0), ("lr_decay", 1.5), ("beta2", 1.0)):
        with pytest.raises(ValueError):
            validate_train_config(dict(train_config_layered, **{key: value}))


def test_scheduler_follows_the_closed_form():
    cfg = dict(train_config_layered, lr_decay=0.9)
    model = Scalar(0.0)
    optimizer = get_optimizer(model, cfg)
    scheduler = get_scheduler(optimizer, cfg)
    for step in range(10):
        assert optimizer.param_groups[0]["lr"] == pytest.approx(learning_rate(cfg, step), rel=1e-14)
        optimizer_step(optimizer, model, scalar(1.0))
        scheduler.step()
    resumed = get_optimizer(Scalar(0.0), cfg)
    get_scheduler(resumed, cfg, step=7)
    assert resumed.param_groups[0]["lr"] == pytest.approx(learning_rate(cfg, 7), rel=1e-14)


def test_adam_zero_gradient_keeps_params():
    model = Scalar(1.5)
    optimizer = get_optimizer(model, train_config_layered)
    assert optimizer_step(optimizer, model, scalar(0.0))
    assert model.x.item() == 1.5
    assert int(optimizer.state[model.x]["step"]) == 1


def test_adam_first_step_moves_by_learning_rate():
    cfg = dict(train_config_layered)
    for g in (-3.0, 0.25):
        model = Scalar(0.0)
        optimizer_step(get_optimizer(model, cfg), model, scalar(g))
        assert model.x.item() == pytest.approx(-cfg["learning_rate"] * np.sign(g), rel=1e-6)


def test_adam_leaves_gradients_untouched():
    model = Scalar(2.0)
    grads = scalar(1.0)
    optimizer_step(get_optimizer(model, train_config_layered), model, grads)
    assert grads["x"].item() == 1.0
    assert model.x.grad is None


def test_adam_skips_non_finite_gradient(caplog):
    model = Scalar(2.0)
    optimizer = get_optimizer(model, train_config_layered)
    with caplog.at_level(logging.WARNING):
        applied = optimizer_step(optimizer, model, scalar(float("nan")))
    assert not applied
    assert model.x.item() == 2.0
    assert len(optimizer.state) == 0
    assert "non-finite gradient" in caplog.text


def test_adam_rejects_mismatched_gradients():
    model = Scalar(2.0)
    optimizer = get_optimizer(model, train_config_layered)
    with pytest.raises(ValueError):
        optimizer_step(optimizer, model, OrderedDict(y=torch.zeros(1)))
    with pytest.raises(ValueError):
        optimizer_step(optimizer, model, OrderedDict(x=torch.zeros(2)))


def test_adam_minimizes_a_scalar_quadratic():
    cfg = dict(train_config_layered, learning_rate=0.1, lr_decay=0.99)
    model = Scalar(0.0)
    optimizer = get_optimizer(model, cfg)
    scheduler = get_scheduler(optimizer, cfg)
    for _ in range(200):
        optimizer_step(optimizer, model, OrderedDict(x=2.0 * (model.x.detach() - 3.0)))
        scheduler.step()
    assert abs(model.x.item() - 3.0) < 0.05


def test_ray_dataset_excludes_holdout_views(small_scene):
    dataset = RayDataset(small_scene, holdout_views=[0, 2], batch_size=100)
    assert dataset.train_views == [1, 3]
    assert set(np.unique(dataset.views)) == {1, 3}
    cam = small_scene.cameras[0]
    assert len(dataset.origins) == 2 * len(small_scene) * cam.width * cam.height
    with pytest.raises(ValueError):
        RayDataset(small_scene, holdout_views=range(len(small_scene.cameras)))


def test_ray_dataset_epochs_cover_every_ray(small_scene):
    dataset = RayDataset(small_scene, holdout_views=[0], batch_size=256, seed=3)
    n = len(dataset.origins)
    assert n % 256 == 0
    epoch = np.concatenate([dataset.batch_indices(step) for step in range(len(dataset))])
    assert np.array_equal(np.sort(epoch), np.arange(n))
    assert np.array_equal(dataset.batch_indices(5), RayDataset(small_scene, [0], 256, seed=3).batch_indices(5))
    assert not np.array_equal(dataset.batch_indices(0), RayDataset(small_scene, [0], 256, seed=4).batch_indices(0))


def test_ray_loader_yields_the_batches_of_each_step(small_scene):
    dataset = RayDataset(small_scene, holdout_views=[0], batch_size=64, seed=2)
    assert isinstance(dataset, torch.utils.data.Dataset)
    batches = list(ray_loader(dataset, 3, 7))
    assert [b["step"] for b in batches] == [3, 4, 5, 6]
    for b in batches:
        idx = dataset.batch_indices(b["step"])
        assert np.array_equal(b["index"], idx)
        assert isinstance(b["origins"], np.ndarray)
        assert np.array_equal(b["colors"], dataset.colors[idx])
        assert np.array_equal(b["frames"], dataset.frames[idx])
    assert len(list(ray_loader(dataset, 5, 5))) == 0


def test_ray_dataset_colors_match_captured_pixels(small_scene):
    dataset = RayDataset(small_scene, holdout_views=[0])
    idx = np.arange(0, len(dataset.origins), 97)
    for i in idx:
        image = small_scene.frames[dataset.frames[i]].images[dataset.views[i]]
        assert np.array_equal(dataset.colors[i], image.reshape(-1, 3)[dataset.pixels[i]])


def _trainer(small_scene, config, dtype=torch.float64, output_folder=None):
    truth = tracked_truth(small_scene)
    field = build_layered_field(
        small_scene.proxy,
        [t.body for t in truth],
        small_scene.template,
        [t.object_pose for t in truth],
        config["network_human"],
        config["network_object"],
        seed=0,
        dtype=dtype,
    )
    dataset = RayDataset(small_scene, config["train"]["holdout_views"], config["train"]["batch_size"])
    return ModelTrainerLayered(config, field, dataset, output_folder, config_hash="test")


def test_loss_gradients_match_finite_differences(small_scene, small_config, rng):
    trainer = _trainer(small_scene, small_config)
    trainer.phase = 2
    trainer.dataset.pseudo_object[::3] = True
    model = trainer.model
    with torch.no_grad():
        for p in model.parameters():
            p.add_(1e-2 * torch.randn_like(p))

    def loss(step=4):
        total, _ = total_loss(trainer.loss_terms(step), trainer.loss_config)
        return total

    grads = backprop(loss(), model)
    named = dict(model.named_parameters())
    h = 1e-5
    for name in ("human.density_head.bias", "human.latents", "obj.density_head.weight", "obj.latents"):
        flat = named[name].data.view(-1)
        for idx in rng.choice(flat.numel(), size=min(2, flat.numel()), replace=False):
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + h
                up = loss().item()
                flat[idx] = original - h
                down = loss().item()
                flat[idx] = original
            numeric = (up - down) / (2 * h)
            assert grads[name].view(-1)[idx].item() == pytest.approx(numeric, rel=1e-4, abs=1e-7), name


def test_zero_step_training_keeps_initialization(small_scene, small_config):
    config = copy.deepcopy(small_config)
    config["train"]["n_steps"] = 0
    field, history, _ = train(small_scene, tracked_truth(small_scene), config, verbose=0)
    fresh = build_layered_field(
        small_scene.proxy,
        [t.body for t in small_scene.frames],
        small_scene.template,
        [t.object_pose for t in small_scene.frames],
        config["network_human"],
        config["network_object"],
        seed=config["train"]["seed"],
    )
    assert len(history) == 0
    for a, b in zip(field.parameters(), fresh.parameters()):
        assert torch.equal(a, b)


def test_training_logs_every_step(small_scene, small_config, tmp_path):
    field, history, trainer = train(small_scene, tracked_truth(small_scene), small_config, str(tmp_path), "hash", verbose=0)
    n_steps = small_config["train"]["n_steps"]
    assert history["step"].tolist() == list(range(n_steps))
    assert np.all(np.isfinite(history["total"]))
    assert history["lr"].iloc[-1] == pytest.approx(learning_rate(small_config["train"], n_steps - 1))
    # the pseudo segmentation switches on the semantic term
    assert trainer.phase == 2
    assert history["L_s"].iloc[: trainer.pseudo_step].eq(0.0).all()
    assert os.path.exists(str(tmp_path / "reports" / "training_history.csv"))
    assert os.path.exists(str(tmp_path / "checkpoints" / "layered_final.ckpt"))
    assert os.path.exists(str(tmp_path / "checkpoints" / "layered_000003.ckpt"))


def test_pseudo_segmentation_ablation_keeps_phase_one(small_scene, small_config):
    config = copy.deepcopy(small_config)
    config["ablation"]["use_pseudo_segmentation"] = False
    _, history, trainer = train(small_scene, tracked_truth(small_scene), config, verbose=0)
    assert trainer.phase == 1
    assert history["L_s"].eq(0.0).all()


def test_resumed_training_matches_unbroken_run(small_scene, small_config, tmp_path):
    unbroken = _trainer(small_scene, small_config, torch.float32)
    unbroken_history = unbroken.train_and_evaluate(verbose=0)

    first = _trainer(small_scene, small_config, torch.float32, str(tmp_path))
    first.train_and_evaluate(n_steps=3, verbose=0)
    resumed = _trainer(small_scene, small_config, torch.float32, str(tmp_path))
    resumed.load_checkpoint(first.checkpoint_path(3))
    assert resumed.step == 3
    resumed_history = resumed.train_and_evaluate(verbose=0)

    assert resumed_history["total"].tolist() == pytest.approx(unbroken_history["total"].iloc[3:].tolist(), rel=1e-6)
    for a, b in zip(unbroken.model.parameters(), resumed.model.parameters()):
        assert torch.allclose(a, b, rtol=1e-5, atol=1e-7)


def test_divergence_aborts_training(small_scene, small_config):
    config = copy.deepcopy(small_config)
    config["train"].update({"divergence_factor": 0.0, "divergence_patience": 1})
    trainer = _trainer(small_scene, config)
    with pytest.raises(TrainingDivergedError):
        trainer.train_and_evaluate(verbose=0)
    assert trainer.step == 2

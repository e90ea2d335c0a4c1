import numpy as np
import pytest
import torch

from domefactory.fields import (
    PARAMETER_GROUPS,
    LayeredField,
    PosEncoding,
    TorchMLP,
    backprop,
    build_layered_field,
    eval_human,
    eval_object,
    warp_to_canonical_human,
)
from domefactory.geometry import RigidPose, random_pose
from domefactory.geometry.skeleton import BodyParams, bone_transforms


def make_field(scene, config, dtype=torch.float64, seed=0, object_poses=None):
    poses = object_poses if object_poses is not None else [t.object_pose for t in scene.frames]
    return build_layered_field(
        scene.spec.proxy,
        [t.body for t in scene.frames],
        scene.template,
        poses,
        config["network_human"],
        config["network_object"],
        seed=seed,
        dtype=dtype,
    )


def random_body(proxy, rng, scale=0.4):
    pose = rng.uniform(-scale, scale, size=(proxy.n_joints, 3))
    shape = rng.uniform(0.8, 1.2, size=proxy.n_bones)
    return BodyParams(pose, shape, rng.uniform(-0.2, 0.2, size=3))


def unit_dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_pos_encoding_dimension():
    enc = PosEncoding(4)
    x = torch.zeros(5, 3, dtype=torch.float64)
    assert enc.output_dim == 3 * 8 + 3
    assert enc(x).shape == (5, enc.output_dim)


def test_pos_encoding_without_frequencies_is_identity():
    x = torch.randn(7, 3, dtype=torch.float64)
    assert torch.equal(PosEncoding(0)(x), x)


def test_pos_encoding_rejects_negative_frequencies():
    with pytest.raises(ValueError):
        PosEncoding(-1)


def test_torch_mlp_parameter_count():
    config = {"layer_sizes": [32, 16, 3], "activations": ["relu", "relu", "sigmoid"]}
    mlp = TorchMLP(config, input_shape=11)
    assert sum(p.numel() for p in mlp.parameters()) == mlp.expected_parameter_count()
    assert mlp.expected_parameter_count() == 12 * 32 + 33 * 16 + 17 * 3


def test_torch_mlp_zero_output_layer():
    config = {"layer_sizes": [8, 3], "activations": ["relu", "linear"]}
    mlp = TorchMLP(config, input_shape=5, zero_output_layer=True)
    assert torch.count_nonzero(mlp(torch.randn(4, 5))) == 0


def test_warp_at_rest_is_identity(small_scene, rng):
    proxy = small_scene.spec.proxy
    points = rng.uniform(-0.5, 0.5, size=(200, 3)) + np.array([0.0, 1.0, 0.0])
    canonical, _ = warp_to_canonical_human(points, BodyParams.rest(proxy), proxy)
    assert np.allclose(canonical, points, atol=1e-12)


def test_warp_of_translated_rest_body_subtracts_translation(small_scene, rng):
    proxy = small_scene.spec.proxy
    gamma = np.array([0.3, -0.1, 0.7])
    rest = BodyParams.rest(proxy)
    body = BodyParams(rest.pose, rest.shape, gamma)
    points = rng.uniform(-0.5, 0.5, size=(200, 3)) + np.array([0.0, 1.0, 0.0]) + gamma
    canonical, _ = warp_to_canonical_human(points, body, proxy)
    assert np.allclose(canonical, points - gamma, atol=1e-12)


def test_warp_maps_points_on_posed_bones_to_rest_bones(small_scene, rng):
    proxy = small_scene.spec.proxy
    for _ in range(10):
        body = random_body(proxy, rng)
        bt = bone_transforms(proxy, body)
        h = rng.uniform(0.2, 0.8, size=(proxy.n_bones, 1))
        points = bt["posed_a"] + h * (bt["posed_b"] - bt["posed_a"])
        canonical, bone = warp_to_canonical_human(points, body, proxy)
        hits = bone == np.arange(proxy.n_bones)
        expected = bt["rest_a"] + h * (bt["rest_b"] - bt["rest_a"])
        assert np.count_nonzero(hits) > 0
        assert np.allclose(canonical[hits], expected[hits], atol=1e-9)


def test_torch_warp_matches_numpy_warp(small_scene, small_config, rng):
    field = make_field(small_scene, small_config)
    points = rng.uniform(-0.6, 0.6, size=(300, 3)) + np.array([0.0, 1.1, 0.0])
    dirs = unit_dirs(rng, 300)
    frame = 1
    x_c, _ = field.human.warp(
        torch.as_tensor(points), torch.as_tensor(dirs), torch.full((300,), frame, dtype=torch.long)
    )
    expected, _ = warp_to_canonical_human(points, small_scene.frames[frame].body, small_scene.spec.proxy)
    assert np.allclose(x_c.detach().numpy(), expected, atol=1e-12)


def test_zero_color_output_gives_mid_grey(small_scene, small_config, rng):
    field = make_field(small_scene, small_config)
    last = field.obj.color_mlp.linear_layers()[-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.zero_()
    x = torch.as_tensor(rng.uniform(-0.1, 0.1, size=(20, 3)))
    _, rgb = eval_object(x, torch.as_tensor(unit_dirs(rng, 20)), 0, field.obj)
    assert torch.allclose(rgb, torch.full_like(rgb, 0.5))


def test_evaluation_is_pure(small_scene, small_config, rng):
    field = make_field(small_scene, small_config)
    x = torch.as_tensor(rng.uniform(-0.5, 0.5, size=(50, 3)) + np.array([0.0, 1.0, 0.0]))
    d = torch.as_tensor(unit_dirs(rng, 50))
    for layer, evaluate in ((field.human, eval_human), (field.obj, eval_object)):
        a = evaluate(x, d, 1, layer)
        b = evaluate(x, d, 1, layer)
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_outputs_are_in_range(small_scene, small_config, rng):
    field = make_field(small_scene, small_config, dtype=torch.float32)
    x = torch.as_tensor(rng.uniform(-1.0, 1.0, size=(500, 3)) + np.array([0.0, 1.0, 0.0]), dtype=torch.float32)
    d = torch.as_tensor(unit_dirs(rng, 500), dtype=torch.float32)
    for layer, evaluate in ((field.human, eval_human), (field.obj, eval_object)):
        sigma, rgb = evaluate(x, d, 0, layer)
        assert sigma.dtype == torch.float32
        assert torch.all(sigma >= 0)
        assert torch.all((rgb >= 0) & (rgb <= 1))


def test_zero_deformation_at_rest_matches_canonical(small_scene, small_config, rng):
    proxy = small_scene.spec.proxy
    rest = BodyParams.rest(proxy)
    field = build_layered_field(
        proxy, [rest], small_scene.template, None, small_config["network_human"], None, dtype=torch.float64
    )
    x = torch.as_tensor(rng.uniform(-0.4, 0.4, size=(100, 3)) + np.array([0.0, 1.0, 0.0]))
    d = torch.as_tensor(unit_dirs(rng, 100))
    sigma, rgb = eval_human(x, d, 0, field.human)
    sigma_c, rgb_c = field.human.canonical(x, d, field.human.latents[torch.zeros(100, dtype=torch.long)])
    assert torch.allclose(sigma, sigma_c, atol=1e-12)
    assert torch.allclose(rgb, rgb_c, atol=1e-12)


def test_object_at_identity_pose_is_canonical_lookup(small_scene, small_config, rng):
    field = make_field(small_scene, small_config, object_poses=[RigidPose.identity()] * len(small_scene))
    x = torch.as_tensor(rng.uniform(-0.2, 0.2, size=(50, 3)))
    d = torch.as_tensor(unit_dirs(rng, 50))
    sigma, rgb = eval_object(x, d, 0, field.obj)
    sigma_c, rgb_c = field.obj.canonical(x, d, field.obj.latents[torch.zeros(50, dtype=torch.long)])
    assert torch.allclose(sigma, sigma_c, rtol=0, atol=1e-14)
    assert torch.allclose(rgb, rgb_c, rtol=0, atol=1e-14)


def test_object_density_follows_the_rigid_pose(small_scene, small_config, rng):
    poses = [random_pose(rng) for _ in small_scene.frames]
    field = make_field(small_scene, small_config, object_poses=poses)
    canonical = rng.uniform(-0.15, 0.15, size=(100, 3))
    d_c = unit_dirs(rng, 100)
    outputs = []
    for f, pose in enumerate(poses):
        x = torch.as_tensor(pose.apply(canonical))
        d = torch.as_tensor(d_c @ pose.rotation.T)
        outputs.append(eval_object(x, d, f, field.obj))
    assert torch.allclose(outputs[0][0], outputs[1][0], rtol=0, atol=1e-12)
    assert torch.allclose(outputs[0][1], outputs[1][1], rtol=0, atol=1e-12)


def test_object_latents_change_color_only(small_scene, small_config, rng):
    field = make_field(small_scene, small_config, object_poses=[RigidPose.identity()] * len(small_scene))
    with torch.no_grad():
        field.obj.latents[1] = torch.as_tensor(rng.normal(size=field.obj.latent_dim))
    x = torch.as_tensor(rng.uniform(-0.2, 0.2, size=(50, 3)))
    d = torch.as_tensor(unit_dirs(rng, 50))
    sigma_0, rgb_0 = eval_object(x, d, 0, field.obj)
    sigma_1, rgb_1 = eval_object(x, d, 1, field.obj)
    assert torch.equal(sigma_0, sigma_1)
    assert not torch.allclose(rgb_0, rgb_1)


def test_frame_index_out_of_range(small_scene, small_config):
    field = make_field(small_scene, small_config)
    x = torch.zeros(1, 3, dtype=torch.float64)
    with pytest.raises(IndexError):
        eval_human(x, x, len(small_scene), field.human)
    with pytest.raises(IndexError):
        eval_object(x, x, -1, field.obj)


def test_layered_field_rejects_bad_layers(small_scene, small_config):
    field = make_field(small_scene, small_config)
    with pytest.raises(ValueError):
        LayeredField(None, None)
    short = build_layered_field(
        small_scene.spec.proxy,
        [small_scene.frames[0].body],
        small_scene.template,
        None,
        small_config["network_human"],
        None,
    )
    with pytest.raises(ValueError):
        LayeredField(short.human, field.obj)


def test_parameter_groups_cover_every_parameter(small_scene, small_config):
    field = make_field(small_scene, small_config)
    groups = field.parameter_groups()
    assert tuple(groups) == PARAMETER_GROUPS
    grouped = {id(p) for params in groups.values() for p in params}
    assert grouped == {id(p) for p in field.parameters()}


def test_build_is_seeded(small_scene, small_config):
    a = make_field(small_scene, small_config, seed=3)
    b = make_field(small_scene, small_config, seed=3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def _sample_loss(field, x, d):
    loss = 0.0
    for f in range(field.n_frames):
        sigma_h, rgb_h = eval_human(x, d, f, field.human)
        sigma_o, rgb_o = eval_object(x, d, f, field.obj)
        loss = loss + torch.sum(torch.sin(sigma_h)) + torch.sum(rgb_h**2) + torch.sum(sigma_o**2) + torch.sum(rgb_o)
    return loss


def test_backprop_matches_finite_differences(small_scene, small_config, rng):
    field = make_field(small_scene, small_config)
    with torch.no_grad():
        for p in field.parameters():
            p.add_(1e-2 * torch.randn_like(p))
    x = torch.as_tensor(rng.uniform(-0.4, 0.4, size=(40, 3)) + np.array([0.0, 1.0, 0.0]))
    d = torch.as_tensor(unit_dirs(rng, 40))
    grads = backprop(_sample_loss(field, x, d), field)
    named = dict(field.named_parameters())
    h = 1e-5
    for group, params in field.parameter_groups().items():
        for param in params:
            name = next(n for n, p in named.items() if p is param)
            flat = param.data.view(-1)
            for idx in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                original = flat[idx].item()
                with torch.no_grad():
                    flat[idx] = original + h
                    up = _sample_loss(field, x, d).item()
                    flat[idx] = original - h
                    down = _sample_loss(field, x, d).item()
                    flat[idx] = original
                numeric = (up - down) / (2 * h)
                analytic = grads[name].view(-1)[idx].item()
                assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-5), group + ":" + name


def test_backprop_without_dependency_is_zero(small_scene, small_config):
    field = make_field(small_scene, small_config)
    grads = backprop(torch.tensor(0.0, dtype=torch.float64), field)
    assert all(torch.count_nonzero(g) == 0 for g in grads.values())
    assert list(grads) == [n for n, _ in field.named_parameters()]


def test_backprop_is_linear_in_the_loss(small_scene, small_config, rng):
    field = make_field(small_scene, small_config)
    x = torch.as_tensor(rng.uniform(-0.4, 0.4, size=(20, 3)) + np.array([0.0, 1.0, 0.0]))
    d = torch.as_tensor(unit_dirs(rng, 20))
    single = backprop(_sample_loss(field, x, d), field)
    double = backprop(2.0 * _sample_loss(field, x, d), field)
    for name in single:
        assert torch.allclose(double[name], 2.0 * single[name], atol=1e-12)


def test_object_density_pose_invariance_many_pairs(small_scene, small_config, rng):
    n_poses, n_points = 100, 100
    poses = [random_pose(rng) for _ in range(n_poses)]
    field = build_layered_field(
        small_scene.proxy, None, small_scene.template, poses, None, small_config["network_object"], dtype=torch.float64
    )
    canonical = torch.as_tensor(rng.uniform(-0.2, 0.2, size=(n_points, 3)))
    with torch.no_grad():
        reference, _ = field.obj.canonical_density(canonical)
        worst = 0.0
        for f, pose in enumerate(poses):
            x = torch.as_tensor(pose.apply(canonical.numpy()))
            sigma, _ = eval_object(x, torch.zeros_like(x), f, field.obj)
            worst = max(worst, torch.max(torch.abs(sigma - reference)).item())
    assert worst < 1e-12

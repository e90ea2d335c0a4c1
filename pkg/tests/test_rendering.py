import numpy as np
import pytest
import torch

from domefactory.fields import LayeredField, build_layered_field
from domefactory.geometry import Ray, make_box, ray_aabb_intersect, ray_mesh_first_hit
from domefactory.rendering.compositing import composite_all, composite_color, composite_label, composite_weights
from domefactory.rendering.renderer import render_rays, render_view
from domefactory.rendering.sampling import (
    RaySegment,
    merge_sample_batch,
    merge_samples,
    segment_rays,
    stratified_sample,
    stratified_sample_batch,
)
from domefactory.synth import HUMAN, OBJECT

BOX = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
RENDER_CFG = {"human_bins": 8, "object_bins": 4, "object_window": 0.02, "far_delta": 0.01, "chunk": 512}


@pytest.fixture
def field(small_scene, small_config):
    return build_layered_field(
        small_scene.spec.proxy,
        [t.body for t in small_scene.frames],
        small_scene.template,
        [t.object_pose for t in small_scene.frames],
        small_config["network_human"],
        small_config["network_object"],
        dtype=torch.float64,
    )


def test_ray_segment_validation():
    with pytest.raises(ValueError):
        RaySegment(2, 0.0, 1.0, 4)
    with pytest.raises(ValueError):
        RaySegment(HUMAN, 1.0, 0.5, 4)
    with pytest.raises(ValueError):
        RaySegment(OBJECT, 0.0, 1.0, 0)


def test_segment_rays_windows():
    box = make_box((0.3, 0.2, 0.2))
    ray = Ray([-3.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    segments = segment_rays(ray, BOX, box, RENDER_CFG)
    assert [s.entity for s in segments] == [HUMAN, OBJECT]
    human, obj = segments
    assert (human.near, human.far) == pytest.approx(ray_aabb_intersect(ray, *BOX))
    depth, _ = ray_mesh_first_hit(ray, box)
    assert obj.near == pytest.approx(depth - 0.02)
    assert obj.far == pytest.approx(depth + 0.02)
    assert human.n_bins == 8 and obj.n_bins == 4


def test_segment_rays_miss_is_empty():
    ray = Ray([-3.0, 5.0, 0.0], [1.0, 0.0, 0.0])
    assert segment_rays(ray, BOX, make_box(), RENDER_CFG) == []


def test_human_margin_pads_the_human_box():
    ray = Ray([-3.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    padded = dict(RENDER_CFG, human_margin=0.05)
    (human,) = segment_rays(ray, BOX, None, padded)
    assert (human.near, human.far) == pytest.approx((1.95, 4.05))

    grazing = Ray([-3.0, 1.03, 0.0], [1.0, 0.0, 0.0])
    assert segment_rays(grazing, BOX, None, RENDER_CFG) == []
    assert [s.entity for s in segment_rays(grazing, BOX, None, padded)] == [HUMAN]
    with pytest.raises(ValueError):
        segment_rays(ray, BOX, None, dict(RENDER_CFG, human_margin=-0.1))


def test_midpoint_samples():
    seg = RaySegment(HUMAN, 0.0, 1.0, 4)
    assert np.allclose(stratified_sample(seg, midpoint=True), [0.125, 0.375, 0.625, 0.875])


def test_stratified_samples_stay_in_their_bins(rng):
    near = rng.uniform(0.0, 1.0, size=50)
    far = near + rng.uniform(0.1, 2.0, size=50)
    depths = stratified_sample_batch(near, far, 6, rng)
    edges = near[:, None] + np.arange(7)[None] / 6.0 * (far - near)[:, None]
    assert np.all(depths >= edges[:, :-1]) and np.all(depths <= edges[:, 1:])


def test_stratified_sampling_needs_rng():
    with pytest.raises(ValueError):
        stratified_sample_batch(np.zeros(1), np.ones(1), 4)
    with pytest.raises(ValueError):
        stratified_sample_batch(np.zeros(1), np.ones(1), 0, midpoint=True)


def test_stratified_mean_converges_to_bin_centers(rng):
    near = np.full(100_000, 2.0)
    far = np.full(100_000, 4.0)
    depths = stratified_sample_batch(near, far, 4, rng)
    assert np.allclose(depths.mean(axis=0), [2.25, 2.75, 3.25, 3.75], atol=5e-3)


def test_merge_matches_sorted_concatenation(rng):
    human = np.sort(rng.uniform(1.0, 3.0, size=8))
    obj = np.sort(rng.uniform(1.5, 2.0, size=4))
    merged = merge_samples([(human, HUMAN), (obj, OBJECT)])
    assert np.array_equal(merged.depths, np.sort(np.concatenate([human, obj])))
    assert np.count_nonzero(merged.entities == OBJECT) == 4
    assert len(merged) == 12


def test_merge_ties_put_human_first():
    merged = merge_samples([([1.0, 2.0], OBJECT), ([1.0], HUMAN)])
    assert merged.entities.tolist() == [HUMAN, OBJECT, OBJECT]


def test_merge_deltas_telescope(rng):
    depths = [np.sort(rng.uniform(0.0, 5.0, size=k)) for k in (7, 3)]
    merged = merge_samples([(depths[0], HUMAN), (depths[1], OBJECT)], far_delta=0.05)
    assert np.all(merged.deltas >= 0)
    assert merged.deltas.sum() == pytest.approx(merged.depths[-1] - merged.depths[0] + 0.05, abs=1e-12)


def test_merge_of_nothing_is_empty():
    assert len(merge_samples([])) == 0


def test_merge_batch_moves_invalid_slots_to_the_end():
    depths = np.array([[0.5, 0.2, 0.9, 0.1]])
    entities = np.array([[HUMAN, HUMAN, OBJECT, OBJECT]])
    valid = np.array([[True, True, True, False]])
    _, d, _, v, deltas = merge_sample_batch(depths, entities, valid, 0.01)
    assert v.tolist() == [[True, True, True, False]]
    assert np.allclose(d[0, :3], [0.2, 0.5, 0.9])
    assert np.allclose(deltas[0], [0.3, 0.4, 0.01, 0.0])


def test_composite_hand_case():
    ln2 = np.log(2.0)
    sigma = torch.tensor([ln2, ln2, 0.0], dtype=torch.float64)
    delta = torch.ones(3, dtype=torch.float64)
    weights, transmittance = composite_weights(sigma, delta)
    assert torch.allclose(weights, torch.tensor([0.5, 0.25, 0.0], dtype=torch.float64))
    assert torch.allclose(transmittance, torch.tensor([1.0, 0.5, 0.25], dtype=torch.float64))
    rgb = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], dtype=torch.float64)
    color, alpha = composite_color(sigma, delta, rgb)
    assert torch.allclose(color, torch.tensor([0.5, 0.25, 0.0], dtype=torch.float64))
    assert alpha.item() == pytest.approx(0.75)


def test_labels_sum_to_alpha():
    gen = torch.Generator().manual_seed(0)
    sigma = 5.0 * torch.rand(32, 12, generator=gen, dtype=torch.float64)
    delta = 0.1 * torch.rand(32, 12, generator=gen, dtype=torch.float64)
    rgb = torch.rand(32, 12, 3, generator=gen, dtype=torch.float64)
    entities = torch.randint(0, 2, (32, 12), generator=gen)
    labels = composite_label(sigma, delta, entities)
    _, alpha = composite_color(sigma, delta, rgb, entities)
    assert torch.allclose(labels.sum(dim=-1), alpha, atol=1e-15)
    assert torch.all((alpha >= 0) & (alpha <= 1))
    _, alpha_all, labels_all = composite_all(sigma, delta, rgb, entities)
    assert torch.equal(labels_all, labels)
    assert torch.equal(alpha_all, alpha)


def test_zero_spacing_contributes_nothing():
    sigma = torch.tensor([1e6, 2.0], dtype=torch.float64)
    delta = torch.tensor([0.0, 0.5], dtype=torch.float64)
    weights, _ = composite_weights(sigma, delta)
    assert weights[0].item() == 0.0
    assert weights[1].item() == pytest.approx(1.0 - np.exp(-1.0))


def test_splitting_a_sample_keeps_alpha():
    sigma, delta = 3.0, 0.4
    whole, _ = composite_weights(torch.tensor([sigma], dtype=torch.float64), torch.tensor([delta], dtype=torch.float64))
    halves, _ = composite_weights(
        torch.tensor([sigma, sigma], dtype=torch.float64), torch.tensor([delta / 2, delta / 2], dtype=torch.float64)
    )
    assert halves.sum().item() == pytest.approx(whole.sum().item(), abs=1e-15)


def _pixel_rays(scene, view=0):
    return scene.cameras[view].pixel_rays()


def test_render_rays_rejects_unknown_mode(field, small_scene):
    origins, dirs = _pixel_rays(small_scene)
    with pytest.raises(ValueError):
        render_rays(field, origins[:4], dirs[:4], 0, RENDER_CFG, mode="depth")


def test_missing_layer_renders_like_dropped_layer(field, small_scene):
    origins, dirs = _pixel_rays(small_scene)
    object_only = LayeredField(None, field.obj)
    with torch.no_grad():
        dropped = render_rays(field, origins, dirs, 1, RENDER_CFG, mode="object", midpoint=True)
        missing = render_rays(object_only, origins, dirs, 1, RENDER_CFG, midpoint=True)
        human = render_rays(object_only, origins, dirs, 1, RENDER_CFG, mode="human", midpoint=True)
    assert torch.equal(dropped["rgb"], missing["rgb"])
    assert torch.equal(dropped["alpha"], missing["alpha"])
    assert torch.count_nonzero(human["alpha"]) == 0


def test_rays_off_the_human_render_the_object_layer(field, small_scene):
    origins, dirs = _pixel_rays(small_scene, view=1)
    human_box = field.human.frame_bounds[0]
    off_human = np.array([ray_aabb_intersect(Ray(o, d), *human_box) is None for o, d in zip(origins, dirs)])
    assert np.any(off_human)
    with torch.no_grad():
        full = render_rays(field, origins[off_human], dirs[off_human], 0, RENDER_CFG, midpoint=True)
        obj = render_rays(field, origins[off_human], dirs[off_human], 0, RENDER_CFG, mode="object", midpoint=True)
    assert torch.equal(full["rgb"], obj["rgb"])
    assert torch.count_nonzero(full["labels"][:, 0]) == 0


def test_render_view_shapes_and_labels(field, small_scene):
    camera = small_scene.cameras[0]
    image, alpha = render_view(field, camera, 0, RENDER_CFG)
    labels, label_alpha = render_view(field, camera, 0, RENDER_CFG, mode="labels")
    assert image.shape == (camera.height, camera.width, 3)
    assert labels.shape == (camera.height, camera.width, 2)
    assert np.allclose(labels.sum(axis=-1), label_alpha, atol=1e-12)
    assert np.array_equal(alpha, label_alpha)
    assert np.all((alpha >= 0) & (alpha <= 1))


def test_stochastic_render_is_seeded(field, small_scene):
    origins, dirs = _pixel_rays(small_scene)
    with torch.no_grad():
        a = render_rays(field, origins, dirs, 0, RENDER_CFG, rng=np.random.default_rng(7))
        b = render_rays(field, origins, dirs, 0, RENDER_CFG, rng=np.random.default_rng(7))
    assert torch.equal(a["rgb"], b["rgb"])


def test_render_is_differentiable(field, small_scene):
    origins, dirs = _pixel_rays(small_scene)
    out = render_rays(field, origins, dirs, 0, RENDER_CFG, rng=np.random.default_rng(0))
    out["rgb"].sum().backward()
    assert any(p.grad is not None and torch.count_nonzero(p.grad) > 0 for p in field.parameters())

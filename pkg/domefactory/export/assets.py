"""Layer-wise assets: per-view layer renders, blended images, masks and meshes."""

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from domefactory.export.blending import LABEL_THRESHOLD, blend_enhance
from domefactory.export.meshing import extract_mesh, pose_human_mesh
from domefactory.geometry.mesh import save_obj
from domefactory.rendering.renderer import render_view
from domefactory.synth.scene import HUMAN, OBJECT
from domefactory.utils import io_funs
from domefactory.utils.util_funs import try_gen_folder, write_json

logger = logging.getLogger(__name__)

ASSET_MANIFEST = "asset_manifest.json"


@dataclass(eq=False)
class LayerRender:
    """All renders of one (frame, view): full image, layer-only images, alphas and labels."""

    frame: int
    view: int
    full: np.ndarray
    full_alpha: np.ndarray
    human: np.ndarray
    human_alpha: np.ndarray
    obj: np.ndarray
    object_alpha: np.ndarray
    labels: np.ndarray


@dataclass(eq=False)
class LayeredAsset:
    """Per-frame layer images (raw and blended) with their masks, plus the posed meshes."""

    frame: int
    human_images: dict = field(default_factory=dict)
    human_masks: dict = field(default_factory=dict)
    object_images: dict = field(default_factory=dict)
    object_masks: dict = field(default_factory=dict)
    human_enhanced: dict = field(default_factory=dict)
    object_enhanced: dict = field(default_factory=dict)
    human_mesh: object = None
    object_mesh: object = None


def render_layers(field_model, camera, frame, render_cfg, view=0):
    full, full_alpha = render_view(field_model, camera, frame, render_cfg, mode="full")
    human, human_alpha = render_view(field_model, camera, frame, render_cfg, mode="human")
    obj, object_alpha = render_view(field_model, camera, frame, render_cfg, mode="object")
    labels, _ = render_view(field_model, camera, frame, render_cfg, mode="labels")
    return LayerRender(frame, view, full, full_alpha, human, human_alpha, obj, object_alpha, labels)


def _render_stem(frame, view):
    return "render_%04d_view_%02d" % (frame, view)


def save_layer_renders(renders, out_dir, allow_abs_path_folder_generation=True):
    """Images as PPM, alphas as PGM and labels as 2-channel 8-bit maps; returns manifest entries.

    Alphas and labels are quantized to 8 bits on disk.
    """
    for sub in ("images", "masks"):
        try_gen_folder(os.path.join(out_dir, sub), allow_abs_path_folder_generation)
    entries = []
    for r in renders:
        stem = _render_stem(r.frame, r.view)
        entry = {
            "frame": r.frame,
            "view": r.view,
            "full": "images/" + stem + "_full.ppm",
            "human": "images/" + stem + "_human.ppm",
            "object": "images/" + stem + "_object.ppm",
            "full_alpha": "masks/" + stem + "_full_alpha.pgm",
            "human_alpha": "masks/" + stem + "_human_alpha.pgm",
            "object_alpha": "masks/" + stem + "_object_alpha.pgm",
            "labels": "masks/" + stem + "_labels.npy",
        }
        io_funs.write_ppm(os.path.join(out_dir, entry["full"]), r.full)
        io_funs.write_ppm(os.path.join(out_dir, entry["human"]), r.human)
        io_funs.write_ppm(os.path.join(out_dir, entry["object"]), r.obj)
        io_funs.write_pgm(os.path.join(out_dir, entry["full_alpha"]), r.full_alpha)
        io_funs.write_pgm(os.path.join(out_dir, entry["human_alpha"]), r.human_alpha)
        io_funs.write_pgm(os.path.join(out_dir, entry["object_alpha"]), r.object_alpha)
        io_funs.write_label_map(os.path.join(out_dir, entry["labels"]), r.labels)
        entries.append(entry)
    return entries


def load_layer_renders(out_dir, entries):
    renders = []
    for e in entries:
        path = lambda key: os.path.join(out_dir, e[key])
        renders.append(
            LayerRender(
                frame=int(e["frame"]),
                view=int(e["view"]),
                full=io_funs.read_ppm(path("full")),
                full_alpha=io_funs.read_pgm(path("full_alpha"), as_bool=False),
                human=io_funs.read_ppm(path("human")),
                human_alpha=io_funs.read_pgm(path("human_alpha"), as_bool=False),
                obj=io_funs.read_ppm(path("object")),
                object_alpha=io_funs.read_pgm(path("object_alpha"), as_bool=False),
                labels=io_funs.read_label_map(path("labels")),
            )
        )
    return renders


def build_layered_assets(renders, scene, use_blending=True):
    """Group renders by frame; blended images come from the same view's captured image."""
    assets = {}
    for r in renders:
        asset = assets.setdefault(r.frame, LayeredAsset(r.frame))
        asset.human_images[r.view] = r.human
        asset.object_images[r.view] = r.obj
        asset.human_masks[r.view] = r.human_alpha > LABEL_THRESHOLD
        asset.object_masks[r.view] = r.object_alpha > LABEL_THRESHOLD
        if use_blending:
            captured = scene.frames[r.frame].images[r.view]
            asset.human_enhanced[r.view] = blend_enhance(r.human, r.labels, captured, HUMAN)
            asset.object_enhanced[r.view] = blend_enhance(r.obj, r.labels, captured, OBJECT)
    return [assets[k] for k in sorted(assets)]


def export_assets(
    field_model,
    scene,
    renders,
    export_cfg,
    out_dir,
    use_blending=True,
    config_hash="",
    allow_abs_path_folder_generation=True,
):
    """Write enhanced images, layer masks and per-frame meshes plus the asset manifest.

    Canonical meshes are extracted once per layer; the human mesh is posed per
    frame by its skeleton and the object mesh by its tracked pose.
    """
    folder = os.path.join(out_dir, "assets")
    for sub in ("assets", "images", "masks"):
        try_gen_folder(os.path.join(out_dir, sub), allow_abs_path_folder_generation)
    resolution = int(export_cfg["mesh_resolution"])
    iso = float(export_cfg["iso_level"])
    png = bool(export_cfg["png_copies"])

    canonical = {}
    for entity, name in ((HUMAN, "human"), (OBJECT, "object")):
        canonical[name] = extract_mesh(field_model, entity, resolution, iso)
        save_obj(os.path.join(folder, "canonical_" + name + ".obj"), canonical[name])

    assets = build_layered_assets(renders, scene, use_blending)
    manifest = {
        "config_hash": config_hash,
        "use_blending": bool(use_blending),
        "canonical_meshes": {"human": "assets/canonical_human.obj", "object": "assets/canonical_object.obj"},
        "frames": [],
    }
    for asset in assets:
        f = asset.frame
        if field_model.human is not None:
            asset.human_mesh = pose_human_mesh(canonical["human"], scene.proxy, field_model.human.bodies[f])
        if field_model.obj is not None:
            asset.object_mesh = canonical["object"].transformed(field_model.obj.poses[f])
        entry = {"frame": f, "human_mesh": None, "object_mesh": None, "views": []}
        if asset.human_mesh is not None:
            entry["human_mesh"] = "assets/human_%04d.obj" % f
            save_obj(os.path.join(out_dir, entry["human_mesh"]), asset.human_mesh)
        if asset.object_mesh is not None:
            entry["object_mesh"] = "assets/object_%04d.obj" % f
            save_obj(os.path.join(out_dir, entry["object_mesh"]), asset.object_mesh)
        for view in sorted(asset.human_images):
            stem = "asset_%04d_view_%02d" % (f, view)
            v = {
                "view": view,
                "human_mask": "masks/" + stem + "_human.pgm",
                "object_mask": "masks/" + stem + "_object.pgm",
            }
            io_funs.write_pgm(os.path.join(out_dir, v["human_mask"]), asset.human_masks[view])
            io_funs.write_pgm(os.path.join(out_dir, v["object_mask"]), asset.object_masks[view])
            if use_blending:
                v["human_enhanced"] = "images/" + stem + "_human_enhanced.ppm"
                v["object_enhanced"] = "images/" + stem + "_object_enhanced.ppm"
                io_funs.write_ppm(os.path.join(out_dir, v["human_enhanced"]), asset.human_enhanced[view], png)
                io_funs.write_ppm(os.path.join(out_dir, v["object_enhanced"]), asset.object_enhanced[view], png)
            entry["views"].append(v)
        manifest["frames"].append(entry)

    write_json(os.path.join(folder, ASSET_MANIFEST), manifest)
    logger.info("exported layered assets for %d frames to %s", len(assets), folder)
    return assets, manifest

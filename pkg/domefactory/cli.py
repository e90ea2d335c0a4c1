"""Pipeline orchestration: synth -> track -> train -> segment -> render -> export -> eval.

Every stage reads its inputs from the output directory and records what it
wrote in `<out>/manifest.json`, so any stage can be rerun on its own.
"""

import argparse
import copy
import json
import logging
import os
import sys

import numpy as np
import torch

from domefactory.config import pipeline_config
from domefactory.export.assets import (
    ASSET_MANIFEST,
    build_layered_assets,
    export_assets,
    load_layer_renders,
    render_layers,
    save_layer_renders,
)
from domefactory.fields.layered import build_layered_field
from domefactory.geometry.skeleton import posed_joints
from domefactory.losses.pseudo_segmentation import (
    generate_pseudo_segmentation,
    save_pseudo_segmentation,
)
from domefactory.synth.scene import OBJECT, SCENE_MANIFEST, SceneSpec, generate_scene, load_scene, save_scene
from domefactory.trainers.checkpoint import apply_checkpoint, load_checkpoint
from domefactory.trainers.torch_trainer import train
from domefactory.tracking.sequence import load_tracking, save_tracking, track_sequence
from domefactory.utils.exceptions import StageError
from domefactory.utils.metrics import (
    MetricsReport,
    joint_rms,
    metric_iou,
    metric_pose,
    metric_precision,
    metric_psnr,
    metric_ssim,
)
from domefactory.utils.util_funs import (
    config_hash,
    load_pipeline_config,
    read_json,
    save_configs,
    try_gen_folder,
    write_json,
)

logger = logging.getLogger(__name__)

STAGES = ("synth", "track", "train", "segment", "render", "export", "eval")
PIPELINE_MANIFEST = "manifest.json"
REPORT = "reports/metrics_report.json"
FINAL_CHECKPOINT = "checkpoints/layered_final.ckpt"
# keys that do not change any artifact
RUNTIME_KEYS = ("workers", "output_dir")


def apply_seed(config, seed):
    """One seed for every stage's generator namespace."""
    config = copy.deepcopy(config)
    config["seed"] = int(seed)
    config["scene"]["seed"] = int(seed)
    config["train"]["seed"] = int(seed)
    return config


def tracking_config(config):
    cfg = dict(config["tracking"])
    if not config["ablation"]["use_contact"]:
        cfg["lambda_contact"] = 0.0
    if not config["ablation"]["use_homask"]:
        cfg["lambda_homask"] = 0.0
    return cfg


class Pipeline:
    """Runs stages against one output directory."""

    def __init__(self, config, out_dir, workers=1, verbose=1):
        self.config = config
        self.out_dir = out_dir
        self.workers = int(workers)
        self.verbose = verbose
        self.config_hash = config_hash({k: v for k, v in config.items() if k not in RUNTIME_KEYS})
        self.manifest_path = os.path.join(out_dir, PIPELINE_MANIFEST)
        try_gen_folder(out_dir)
        if os.path.exists(self.manifest_path):
            self.manifest = read_json(self.manifest_path)
            if self.manifest.get("config_hash") != self.config_hash:
                logger.warning("config changed since the last run in %s; earlier stage outputs are kept", out_dir)
                self.manifest["config_hash"] = self.config_hash
        else:
            self.manifest = {"config_hash": self.config_hash, "stages": {}}

    def _record(self, stage, entry):
        self.manifest["stages"][stage] = entry
        write_json(self.manifest_path, self.manifest)

    def _require(self, stage, upstream):
        entry = self.manifest["stages"].get(upstream)
        if entry is None:
            raise StageError(stage, "missing output of stage '" + upstream + "' in " + self.out_dir + "; run it first")
        return entry

    def _scene(self, stage):
        self._require(stage, "synth")
        if not os.path.exists(os.path.join(self.out_dir, SCENE_MANIFEST)):
            raise StageError(stage, "scene manifest not found in " + self.out_dir)
        return load_scene(self.out_dir)

    def _tracked(self, stage):
        entry = self._require(stage, "track")
        return load_tracking(self.out_dir, entry["files"])

    def _field(self, stage, scene, tracked):
        entry = self._require(stage, "train")
        path = os.path.join(self.out_dir, entry["checkpoint"])
        if not os.path.exists(path):
            raise StageError(stage, "checkpoint " + path + " not found")
        field = build_layered_field(
            scene.proxy,
            [t.body for t in tracked],
            scene.template,
            [t.object_pose for t in tracked],
            self.config["network_human"],
            self.config["network_object"],
            seed=int(self.config["train"]["seed"]),
        )
        apply_checkpoint(load_checkpoint(path, expected_hash=self.config_hash), field)
        return field

    # Stages ------
    def synth(self):
        spec = SceneSpec.from_config(self.config["scene"])
        scene = generate_scene(spec, workers=self.workers, verbose=self.verbose)
        save_scene(scene, self.out_dir, png_copies=bool(self.config["export"]["png_copies"]))
        self._record("synth", {"scene_manifest": SCENE_MANIFEST, "n_frames": len(scene), "n_views": len(scene.cameras)})

    def track(self):
        scene = self._scene("track")
        results = track_sequence(scene, tracking_config(self.config), verbose=self.verbose)
        files = save_tracking(results, self.out_dir)
        self._record("track", {"files": files, "summary": "poses/tracking_summary.csv"})

    def train(self):
        scene = self._scene("train")
        tracked = self._tracked("train")
        save_configs(
            model_id="layered",
            save_folder=os.path.join(self.out_dir, "checkpoints"),
            pipeline_config=self.config,
            train_config=self.config["train"],
        )
        _, history, trainer = train(scene, tracked, self.config, self.out_dir, self.config_hash, verbose=self.verbose)
        self._record(
            "train",
            {
                "checkpoint": FINAL_CHECKPOINT,
                "history": "reports/training_history.csv",
                "n_steps": int(trainer.step),
                "pseudo_segmentation": trainer.pseudo_entries,
                "configs": ["checkpoints/layered_pipeline_config.json", "checkpoints/layered_train_config.json"],
            },
        )

    def segment(self):
        scene = self._scene("segment")
        tracked = self._tracked("segment")
        field = self._field("segment", scene, tracked)
        tau = float(self.config["loss"]["tau_s"])
        maps = []
        for truth in scene.frames:
            for view, camera in enumerate(scene.cameras):
                maps.append(
                    generate_pseudo_segmentation(
                        field, camera, truth.frame, truth.images[view], self.config["render"], tau, truth.union_masks[view], view
                    )
                )
        entries = save_pseudo_segmentation(maps, self.out_dir)
        labelled = np.concatenate([m.mask.reshape(-1) for m in maps])
        truth_object = np.concatenate([(scene.frames[m.frame].visible[m.view] == OBJECT).reshape(-1) for m in maps])
        self._record("segment", {"maps": entries, "precision": metric_precision(labelled, truth_object)})

    def render(self):
        scene = self._scene("render")
        tracked = self._tracked("render")
        field = self._field("render", scene, tracked)
        renders = [
            render_layers(field, camera, truth.frame, self.config["render"], view)
            for truth in scene.frames
            for view, camera in enumerate(scene.cameras)
        ]
        self._record("render", {"renders": save_layer_renders(renders, self.out_dir)})

    def export(self):
        scene = self._scene("export")
        tracked = self._tracked("export")
        field = self._field("export", scene, tracked)
        renders = load_layer_renders(self.out_dir, self._require("export", "render")["renders"])
        export_assets(
            field,
            scene,
            renders,
            self.config["export"],
            self.out_dir,
            use_blending=bool(self.config["ablation"]["use_blending"]),
            config_hash=self.config_hash,
        )
        self._record("export", {"asset_manifest": "assets/" + ASSET_MANIFEST})

    def eval(self):
        scene = self._scene("eval")
        tracked = self._tracked("eval")
        renders = load_layer_renders(self.out_dir, self._require("eval", "render")["renders"])
        report = evaluate(scene, tracked, renders, self.config)
        report.config_hash = self.config_hash
        seg = self.manifest["stages"].get("segment")
        report.details["pseudo_segmentation_precision"] = seg["precision"] if seg else None
        try_gen_folder(os.path.join(self.out_dir, "reports"))
        write_json(os.path.join(self.out_dir, REPORT), report.to_dict())
        if not report.is_finite():
            logger.warning("metrics report has non-finite entries")
        self._record("eval", {"report": REPORT})
        logger.info(
            "PSNR %.2f dB, SSIM %.4f, object IoU %.3f, rotation %.3f deg, translation %.4f, joint RMS %.4f",
            report.psnr,
            report.ssim,
            report.mask_iou,
            report.rotation_error_deg,
            report.translation_error,
            report.joint_rms,
        )
        return report


def evaluate(scene, tracked, renders, config):
    """MetricsReport from cached renders, tracking results and scene ground truth."""
    holdout = set(int(v) for v in config["train"]["holdout_views"])
    psnr, ssim, iou = [], [], []
    layer_psnr = {"human_raw": [], "human_blended": [], "object_raw": [], "object_blended": []}
    assets = {a.frame: a for a in build_layered_assets(renders, scene, use_blending=True)}
    for r in renders:
        truth = scene.frames[r.frame]
        if r.view in holdout:
            psnr.append(metric_psnr(r.full, truth.images[r.view]))
            ssim.append(metric_ssim(r.full, truth.images[r.view]))
            iou.append(metric_iou(r.object_alpha > 0.5, truth.object_masks[r.view]))
        asset = assets[r.frame]
        layer_psnr["human_raw"].append(metric_psnr(r.human, truth.human_layers[r.view]))
        layer_psnr["object_raw"].append(metric_psnr(r.obj, truth.object_layers[r.view]))
        layer_psnr["human_blended"].append(metric_psnr(asset.human_enhanced[r.view], truth.human_layers[r.view]))
        layer_psnr["object_blended"].append(metric_psnr(asset.object_enhanced[r.view], truth.object_layers[r.view]))

    per_frame = []
    est_joints, true_joints = [], []
    for t in tracked:
        truth = scene.frames[t.frame]
        rot, trans = metric_pose(t.object_pose, truth.object_pose)
        joints, _ = posed_joints(scene.proxy, t.body)
        est_joints.append(joints)
        true_joints.append(truth.joints_3d)
        per_frame.append(
            {
                "frame": t.frame,
                "rotation_error_deg": rot,
                "translation_error": trans,
                "joint_rms": joint_rms(joints, truth.joints_3d),
                "converged": bool(t.converged),
            }
        )

    mean = lambda xs: float(np.mean(xs)) if len(xs) else float("nan")
    return MetricsReport(
        psnr=mean(psnr),
        ssim=mean(ssim),
        mask_iou=mean(iou),
        rotation_error_deg=mean([p["rotation_error_deg"] for p in per_frame]),
        translation_error=mean([p["translation_error"] for p in per_frame]),
        joint_rms=joint_rms(np.concatenate(est_joints), np.concatenate(true_joints)) if est_joints else float("nan"),
        details={
            "tracking": per_frame,
            "layer_psnr": {k: mean(v) for k, v in layer_psnr.items()},
            "ablation": dict(config["ablation"]),
            "holdout_views": sorted(holdout),
        },
    )


def run_pipeline(config_path=None, stages=STAGES, out_dir=None, workers=1, seed=None, verbose=1, overrides=None):
    """Run `stages` in pipeline order. Returns (exit status, manifest)."""
    config = load_pipeline_config(config_path, overrides)
    if seed is not None:
        config = apply_seed(config, seed)
    if out_dir is not None:
        config["output_dir"] = out_dir
    config["workers"] = int(workers)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ValueError("unknown stages: " + str(unknown) + "; choose from " + str(STAGES))
    torch.set_num_threads(max(1, int(workers)))

    pipeline = Pipeline(config, config["output_dir"], workers, verbose)
    for stage in STAGES:
        if stage not in stages:
            continue
        logger.info("stage %s", stage)
        try:
            getattr(pipeline, stage)()
        except Exception as err:
            logger.error("stage %s failed: %s", stage, err)
            return 1, pipeline.manifest
    return 0, pipeline.manifest


def _parser():
    parser = argparse.ArgumentParser(prog="domefactory", description="Layered human-object capture pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        p = sub.add_parser(name, help="run " + ("every stage" if name == "all" else "the " + name + " stage"))
        p.add_argument("--config", default=None, help="Path to a pipeline config JSON (merged over the defaults).")
        p.add_argument("--out", default=None, help="Output directory.")
        p.add_argument("--workers", type=int, default=1, help="Worker count; 1 is bit-exact deterministic.")
        p.add_argument("--seed", type=int, default=None, help="Seed for every stage.")
        p.add_argument("--verbose", action="store_true", help="Debug logging.")
        if name == "all":
            p.add_argument("--stages", default=",".join(STAGES), help="Comma separated stage list.")
    p = sub.add_parser("defaults", help="print the default pipeline config as JSON")
    p.add_argument("--config", default=None, help="Optional config JSON to merge before printing.")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    if args.command == "defaults":
        config = load_pipeline_config(args.config) if args.config else copy.deepcopy(pipeline_config)
        print(json.dumps(config, indent=2, sort_keys=True))
        return 0
    stages = [s.strip() for s in args.stages.split(",") if s.strip()] if args.command == "all" else [args.command]
    status, _ = run_pipeline(args.config, stages, args.out, args.workers, args.seed, verbose=1)
    return status


if __name__ == "__main__":
    sys.exit(main())

import logging
import os
from time import time

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from domefactory.fields.layered import backprop, build_layered_field
from domefactory.losses.losses import (
    human_contact_samples,
    loss_human_contact,
    loss_object_template,
    loss_photometric,
    loss_semantic,
    object_template_samples,
    total_loss,
    validate_loss_config,
)
from domefactory.losses.pseudo_segmentation import (
    generate_pseudo_segmentation,
    load_pseudo_segmentation,
    save_pseudo_segmentation,
)
from domefactory.rendering.renderer import render_rays
from domefactory.trainers.adam import get_optimizer, get_scheduler, optimizer_step, validate_train_config
from domefactory.trainers.checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from domefactory.utils.exceptions import TrainingDivergedError
from domefactory.utils.util_funs import try_gen_folder

logger = logging.getLogger(__name__)

try:
    import wandb
except ImportError:
    wandb = None
    logger.debug("wandb not available")

HISTORY_COLUMNS = ["step", "lr", "L_c", "L_o", "L_h", "L_s", "total"]


class RayDataset(torch.utils.data.Dataset):
    """Pixel pool of the training views of every frame.

    Item `step` is the whole batch of that training step, so the dataset is
    consumed through a DataLoader with `batch_size=None` (see `ray_loader`).
    Batches are drawn without replacement inside an epoch: global sample k
    takes position k mod N of the permutation of epoch k // N. Everything is
    a pure function of (seed, step).
    """

    def __init__(self, scene, holdout_views=(0,), batch_size=1024, seed=0):
        self.scene = scene
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.holdout_views = sorted(int(v) for v in holdout_views)
        self.train_views = [v for v in range(len(scene.cameras)) if v not in self.holdout_views]
        if len(self.train_views) == 0:
            raise ValueError("every view is held out; nothing to train on")

        origins, dirs, colors, frames, views, pixels = [], [], [], [], [], []
        for view in self.train_views:
            o, d = scene.cameras[view].pixel_rays()
            n_pix = len(o)
            for truth in scene.frames:
                origins.append(o)
                dirs.append(d)
                colors.append(truth.images[view].reshape(-1, 3))
                frames.append(np.full(n_pix, truth.frame, dtype=np.int64))
                views.append(np.full(n_pix, view, dtype=np.int64))
                pixels.append(np.arange(n_pix, dtype=np.int64))
        self.origins = np.concatenate(origins)
        self.dirs = np.concatenate(dirs)
        self.colors = np.concatenate(colors)
        self.frames = np.concatenate(frames)
        self.views = np.concatenate(views)
        self.pixels = np.concatenate(pixels)
        self.pseudo_object = np.zeros(len(self.origins), dtype=bool)

    def __len__(self):
        # batches per epoch
        return int(np.ceil(len(self.origins) / self.batch_size))

    def batch_indices(self, step):
        n = len(self.origins)
        k = np.arange(step * self.batch_size, (step + 1) * self.batch_size, dtype=np.int64)
        epochs = k // n
        positions = k % n
        out = np.empty(len(k), dtype=np.int64)
        for epoch in np.unique(epochs):
            perm = np.random.default_rng([self.seed, 7, int(epoch)]).permutation(n)
            sel = epochs == epoch
            out[sel] = perm[positions[sel]]
        return out

    def __getitem__(self, step):
        idx = self.batch_indices(int(step))
        return {
            "step": int(step),
            "index": idx,
            "origins": self.origins[idx],
            "dirs": self.dirs[idx],
            "colors": self.colors[idx],
            "frames": self.frames[idx],
        }

    def set_pseudo_segmentation(self, maps):
        lookup = {(m.frame, m.view): m.mask.reshape(-1) for m in maps}
        self.pseudo_object[:] = False
        for (frame, view), mask in lookup.items():
            sel = (self.frames == frame) & (self.views == view)
            self.pseudo_object[sel] = mask[self.pixels[sel]]


def _keep_arrays(batch):
    return batch


def ray_loader(dataset, start_step, n_steps):
    """DataLoader over the batches of steps [start_step, n_steps) in order."""
    return torch.utils.data.DataLoader(
        dataset,
        batch_size=None,
        sampler=range(int(start_step), int(n_steps)),
        collate_fn=_keep_arrays,
        num_workers=0,
        generator=torch.Generator().manual_seed(dataset.seed),
    )


class ModelTrainerLayered:
    """Trains a LayeredField on a captured scene with tracked bodies and object poses."""

    def __init__(
        self,
        config=None,
        model=None,
        dataset=None,
        output_folder=None,
        config_hash="",
        allow_abs_path_folder_generation=True,
        seed=None,
    ):
        self.config = config
        self.train_config = validate_train_config(config["train"])
        self.loss_config = validate_loss_config(config["loss"])
        self.render_config = config["render"]
        self.ablation = config["ablation"]
        self.model = model
        self.dataset = dataset
        self.output_folder = output_folder
        self.config_hash = config_hash
        self.allow_abs_path_folder_generation = allow_abs_path_folder_generation
        self.seed = int(self.train_config["seed"] if seed is None else seed)

        self.step = 0
        self.phase = 1
        self.pseudo_entries = []
        self.pseudo_maps = []
        self.history = []
        self.initial_loss = None
        self.over_count = 0
        self.__get_optimizer()

    def __get_optimizer(self):
        self.optimizer = get_optimizer(self.model, self.train_config)
        self.scheduler = get_scheduler(self.optimizer, self.train_config, self.step)

    def __try_wandb(self, wandb_project_id="domefactory", run_id="runid"):
        if wandb is None:
            logger.warning("wandb not available, not storing results there")
            return False
        try:
            wandb.init(project=wandb_project_id, name="layered_" + run_id, config=self.config)
            logger.info("Successfully initialized wandb!")
            return True
        except Exception:
            logger.warning("wandb not available, not storing results there")
            return False

    @property
    def pseudo_step(self):
        return int(round(float(self.loss_config["pseudo_seg_fraction"]) * int(self.train_config["n_steps"])))

    def loss_terms(self, step, batch=None):
        """Loss terms of the batch at `step`, all drawn from the counter-based generator of that step."""
        rng = np.random.default_rng([self.seed, 1, step])
        if batch is None:
            batch = self.dataset[step]
        out = render_rays(self.model, batch["origins"], batch["dirs"], batch["frames"], self.render_config, rng)
        terms = {"L_c": loss_photometric(out["rgb"], batch["colors"])}

        obj, human = self.model.obj, self.model.human
        n_o, n_h = int(self.loss_config["n_object_samples"]), int(self.loss_config["n_human_samples"])
        if obj is not None and float(self.loss_config["w_o"]) > 0 and n_o > 0:
            points, inside = object_template_samples(obj, n_o, rng)
            terms["L_o"] = loss_object_template(obj, points, inside)
        if obj is not None and human is not None and float(self.loss_config["w_h"]) > 0 and n_h > 0:
            frame = int(rng.integers(self.model.n_frames))
            posed = obj.posed_template(frame)
            points, inside = human_contact_samples(human, posed, frame, n_h, rng)
            terms["L_h"] = loss_human_contact(human, posed, points, frame, inside)
        if self.phase == 2 and float(self.loss_config["w_s"]) > 0:
            object_rays = self.dataset.pseudo_object[batch["index"]]
            targets = np.zeros((len(object_rays), 2))
            targets[:, 1] = 1.0
            terms["L_s"] = loss_semantic(out["labels"], targets, object_rays)
        return terms

    def run_pseudo_segmentation(self):
        """Object-only renders of every training view and frame against the captured images."""
        scene = self.dataset.scene
        maps = []
        for truth in scene.frames:
            for view in self.dataset.train_views:
                maps.append(
                    generate_pseudo_segmentation(
                        self.model,
                        scene.cameras[view],
                        truth.frame,
                        truth.images[view],
                        self.render_config,
                        float(self.loss_config["tau_s"]),
                        homask=truth.union_masks[view],
                        view=view,
                    )
                )
        self.pseudo_maps = maps
        self.dataset.set_pseudo_segmentation(maps)
        if self.output_folder is not None:
            self.pseudo_entries = save_pseudo_segmentation(maps, self.output_folder, self.allow_abs_path_folder_generation)
        self.phase = 2
        logger.info("pseudo segmentation: %d object pixels over %d maps", sum(m.n_labelled for m in maps), len(maps))
        return maps

    def train_step(self, step, batch=None):
        lr = self.optimizer.param_groups[0]["lr"]
        terms = self.loss_terms(step, batch)
        total, breakdown = total_loss(terms, self.loss_config)
        optimizer_step(self.optimizer, self.model, backprop(total, self.model))
        self.scheduler.step()
        row = {"step": step, "lr": lr}
        row.update(breakdown)
        return row

    def __check_divergence(self, row):
        if self.initial_loss is None:
            self.initial_loss = row["total"]
            return
        factor = float(self.train_config["divergence_factor"])
        if not np.isfinite(row["total"]) or row["total"] > factor * self.initial_loss:
            self.over_count += 1
        else:
            self.over_count = 0
        if self.over_count >= int(self.train_config["divergence_patience"]):
            raise TrainingDivergedError(
                "loss above "
                + str(factor)
                + "x its initial value ("
                + "%.4e" % self.initial_loss
                + ") for "
                + str(self.over_count)
                + " consecutive steps; last breakdown "
                + str({k: row[k] for k in HISTORY_COLUMNS if k in row})
            )

    def checkpoint_path(self, step):
        return os.path.join(self.output_folder, "checkpoints", "layered_%06d.ckpt" % step)

    def save_checkpoint(self, path=None):
        if path is None:
            path = self.checkpoint_path(self.step)
        folder = os.path.dirname(path)
        if folder:
            try_gen_folder(folder, self.allow_abs_path_folder_generation)
        extra = {
            "seed": self.seed,
            "phase": self.phase,
            "pseudo_segmentation": self.pseudo_entries,
            "initial_loss": self.initial_loss,
            "over_count": self.over_count,
        }
        return save_checkpoint(path, self.model, self.optimizer, self.config_hash, extra, step=self.step)

    def load_checkpoint(self, path):
        """Resume from a checkpoint written by this trainer configuration."""
        ckpt = load_checkpoint(path, expected_hash=self.config_hash)
        self.step = apply_checkpoint(ckpt, self.model, self.optimizer)
        self.scheduler = get_scheduler(self.optimizer, self.train_config, self.step)
        self.seed = int(ckpt.extra.get("seed", self.seed))
        self.initial_loss = ckpt.extra.get("initial_loss")
        self.over_count = int(ckpt.extra.get("over_count", 0))
        self.phase = int(ckpt.extra.get("phase", 1))
        self.pseudo_entries = ckpt.extra.get("pseudo_segmentation", [])
        if self.phase == 2:
            self.pseudo_maps = load_pseudo_segmentation(self.output_folder, self.pseudo_entries)
            self.dataset.set_pseudo_segmentation(self.pseudo_maps)
        logger.info("resumed from %s at step %d (phase %d)", path, self.step, self.phase)
        return ckpt

    def train_and_evaluate(self, n_steps=None, wandb_on=False, wandb_project_id="domefactory", run_id="runid", verbose=1):
        """Run training up to `n_steps` total steps (default: the configured count).

        Returns the training history as a DataFrame; it is also written to
        <output_folder>/reports/training_history.csv when an output folder is set.
        """
        n_steps = int(self.train_config["n_steps"] if n_steps is None else n_steps)
        wandb_ok = self.__try_wandb(wandb_project_id, run_id) if wandb_on else False
        checkpoint_every = int(self.train_config["checkpoint_every"])
        log_every = max(1, int(self.train_config["log_every"]))
        use_pseudo = bool(self.ablation["use_pseudo_segmentation"])

        start_t = time()
        loader = ray_loader(self.dataset, self.step, n_steps)
        for batch in tqdm(loader, disable=verbose == 0):
            step = batch["step"]
            if use_pseudo and self.phase == 1 and step >= self.pseudo_step:
                self.run_pseudo_segmentation()
            row = self.train_step(step, batch)
            self.history.append(row)
            self.step = step + 1
            if wandb_ok:
                wandb.log(row, step=step)
            if step % log_every == 0:
                logger.info(
                    "step %d / %d - lr %.3e - loss %.5f (L_c %.5f, L_o %.5f, L_h %.5f, L_s %.5f)",
                    step,
                    n_steps,
                    row["lr"],
                    row["total"],
                    row["L_c"],
                    row["L_o"],
                    row["L_h"],
                    row["L_s"],
                )
            self.__check_divergence(row)
            if self.output_folder is not None and checkpoint_every > 0 and self.step % checkpoint_every == 0:
                self.save_checkpoint()

        logger.info("trained %d steps in %.1f s", len(self.history), time() - start_t)
        history = pd.DataFrame(self.history, columns=HISTORY_COLUMNS)
        if self.output_folder is not None:
            folder = os.path.join(self.output_folder, "reports")
            try_gen_folder(folder, self.allow_abs_path_folder_generation)
            history.to_csv(os.path.join(folder, "training_history.csv"), index=False)
        if wandb_ok:
            wandb.finish()
        return history


def train(scene, tracked, config, output_folder=None, config_hash="", resume_from=None, verbose=1):
    """Build a layered field from the tracking results and train it.

    Returns (field, history DataFrame, trainer).
    """
    bodies = [t.body for t in tracked]
    poses = [t.object_pose for t in tracked]
    field = build_layered_field(
        scene.proxy,
        bodies,
        scene.template,
        poses,
        config["network_human"],
        config["network_object"],
        seed=int(config["train"]["seed"]),
    )
    dataset = RayDataset(
        scene,
        holdout_views=config["train"]["holdout_views"],
        batch_size=config["train"]["batch_size"],
        seed=config["train"]["seed"],
    )
    trainer = ModelTrainerLayered(config, field, dataset, output_folder, config_hash)
    if resume_from is not None:
        trainer.load_checkpoint(resume_from)
    history = trainer.train_and_evaluate(verbose=verbose)
    if output_folder is not None:
        trainer.save_checkpoint(os.path.join(output_folder, "checkpoints", "layered_final.ckpt"))
    return field, history, trainer

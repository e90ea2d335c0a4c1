import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from domefactory.rendering.renderer import render_view
from domefactory.utils import io_funs
from domefactory.utils.util_funs import try_gen_folder

logger = logging.getLogger(__name__)

OBJECT_ALPHA_MIN = 0.5


@dataclass(eq=False)
class PseudoSegMap:
    """Object pixels of one view/frame inferred from an object-only render."""

    frame: int
    view: int
    mask: np.ndarray
    confidence: np.ndarray

    @property
    def n_labelled(self):
        return int(np.count_nonzero(self.mask))

    def pseudo_labels(self):
        """(H, W, 2) one-hot (human, object) targets; object on the labelled pixels."""
        labels = np.zeros(self.mask.shape + (2,))
        labels[..., 1] = self.mask
        return labels

    def to_frame(self):
        rows, cols = np.nonzero(self.mask)
        return pd.DataFrame({"v": rows, "u": cols, "confidence": self.confidence[rows, cols]})

    def precision(self, truth_mask):
        if self.n_labelled == 0:
            return float("nan")
        return float(np.count_nonzero(self.mask & np.asarray(truth_mask, dtype=bool)) / self.n_labelled)


def generate_pseudo_segmentation(field, camera, frame, captured, render_cfg, tau_s, homask=None, view=0):
    """Label pixels where the object-only render matches the captured image.

    A pixel is an object pixel iff the mean absolute per-channel difference is
    below `tau_s`, the object alpha exceeds 0.5 and, when given, it lies on the
    union mask. Confidence is the similarity margin tau_s - difference.
    """
    if tau_s < 0:
        raise ValueError("tau_s must be >= 0, got " + str(tau_s))
    rendered, alpha = render_view(field, camera, frame, render_cfg, mode="object")
    captured = np.asarray(captured, dtype=np.float64)
    if captured.shape != rendered.shape:
        raise ValueError("captured image shape " + str(captured.shape) + " does not match the camera")
    difference = np.mean(np.abs(rendered - captured), axis=-1)
    mask = (difference < tau_s) & (alpha > OBJECT_ALPHA_MIN)
    if homask is not None:
        mask &= np.asarray(homask, dtype=bool)
    confidence = np.where(mask, tau_s - difference, 0.0)
    if not np.any(mask):
        logger.warning("frame %d view %d: empty pseudo segmentation", frame, view)
    return PseudoSegMap(frame, view, mask, confidence)


def _stem(frame, view):
    return "pseudo_%04d_view_%02d" % (frame, view)


def save_pseudo_segmentation(maps, out_dir, allow_abs_path_folder_generation=True):
    """PGM mask plus confidence CSV per map under out_dir/masks; returns the manifest entries."""
    folder = os.path.join(out_dir, "masks")
    try_gen_folder(folder, allow_abs_path_folder_generation)
    entries = []
    for m in maps:
        stem = _stem(m.frame, m.view)
        io_funs.write_pgm(os.path.join(folder, stem + ".pgm"), m.mask)
        m.to_frame().to_csv(os.path.join(folder, stem + ".csv"), index=False)
        entries.append(
            {"frame": m.frame, "view": m.view, "mask": "masks/" + stem + ".pgm", "confidence": "masks/" + stem + ".csv"}
        )
    return entries


def load_pseudo_segmentation(out_dir, entries):
    maps = []
    for e in entries:
        mask = io_funs.read_pgm(os.path.join(out_dir, e["mask"]), as_bool=True)
        confidence = np.zeros(mask.shape)
        df = pd.read_csv(os.path.join(out_dir, e["confidence"]))
        confidence[df["v"].to_numpy(dtype=np.int64), df["u"].to_numpy(dtype=np.int64)] = df["confidence"].to_numpy()
        maps.append(PseudoSegMap(int(e["frame"]), int(e["view"]), mask, confidence))
    return maps

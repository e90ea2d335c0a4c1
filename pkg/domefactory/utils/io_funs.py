"""Image and table IO for scene, render and report artifacts."""

import numpy as np
import pandas as pd
from PIL import Image


def to_uint8(image):
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image, png_copy=False):
    """Write an (H, W, 3) float image in [0, 1] as binary PPM (P6, maxval 255)."""
    pil = Image.fromarray(to_uint8(image))
    pil.save(path, format="PPM")
    if png_copy:
        pil.save(path.rsplit(".", 1)[0] + ".png", format="PNG")


def read_ppm(path):
    with Image.open(path) as pil:
        return np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0


def write_pgm(path, mask):
    """Write an (H, W) boolean or [0, 1] float map as binary PGM (P5)."""
    mask = np.asarray(mask)
    if mask.dtype == bool:
        data = mask.astype(np.uint8) * 255
    else:
        data = to_uint8(mask)
    Image.fromarray(data).save(path, format="PPM")


def read_pgm(path, as_bool=True):
    with Image.open(path) as pil:
        data = np.asarray(pil.convert("L"))
    if as_bool:
        return data >= 128
    return data.astype(np.float64) / 255.0


def write_entity_map(path, entities):
    """Write an (H, W) entity map (-1 background, 0 human, 1 object) as binary PGM, stored shifted by one."""
    entities = np.asarray(entities)
    if entities.size and (entities.min() < -1 or entities.max() > 254):
        raise ValueError("entity ids must lie in [-1, 254]")
    Image.fromarray((entities.astype(np.int16) + 1).astype(np.uint8)).save(path, format="PPM")


def read_entity_map(path):
    with Image.open(path) as pil:
        return np.asarray(pil.convert("L")).astype(np.int8) - 1


def write_label_map(path, labels):
    """Store (H, W, 2) label weights as a 2-channel 8-bit array (.npy)."""
    np.save(path, to_uint8(labels))


def read_label_map(path):
    return np.load(path).astype(np.float64) / 255.0


def pose_to_frame(rotation, translation):
    row = np.concatenate([np.asarray(rotation).reshape(-1), np.asarray(translation).reshape(-1)])
    columns = ["r%d%d" % (i, j) for i in range(3) for j in range(3)] + ["tx", "ty", "tz"]
    return pd.DataFrame([row], columns=columns)


def frame_to_pose(df):
    row = df.iloc[0]
    rotation = np.array([[row["r%d%d" % (i, j)] for j in range(3)] for i in range(3)], dtype=np.float64)
    translation = np.array([row["tx"], row["ty"], row["tz"]], dtype=np.float64)
    return rotation, translation


def body_to_frame(pose, shape, translation):
    """One-row table of body parameters: theta_<j>_<x|y|z>, beta_<b>, gamma_<x|y|z>."""
    pose = np.asarray(pose, dtype=np.float64).reshape(-1, 3)
    shape = np.asarray(shape, dtype=np.float64).reshape(-1)
    columns, row = [], []
    for j in range(len(pose)):
        for a, axis in enumerate("xyz"):
            columns.append("theta_%d_%s" % (j, axis))
            row.append(pose[j, a])
    for b in range(len(shape)):
        columns.append("beta_%d" % b)
        row.append(shape[b])
    for a, axis in enumerate("xyz"):
        columns.append("gamma_%s" % axis)
        row.append(float(np.asarray(translation).reshape(3)[a]))
    return pd.DataFrame([row], columns=columns)


def frame_to_body(df):
    row = df.iloc[0]
    n_joints = sum(1 for c in df.columns if c.startswith("theta_")) // 3
    n_bones = sum(1 for c in df.columns if c.startswith("beta_"))
    pose = np.array(
        [[row["theta_%d_%s" % (j, axis)] for axis in "xyz"] for j in range(n_joints)], dtype=np.float64
    )
    shape = np.array([row["beta_%d" % b] for b in range(n_bones)], dtype=np.float64)
    translation = np.array([row["gamma_%s" % axis] for axis in "xyz"], dtype=np.float64)
    return pose, shape, translation


def points_to_frame(points, names=None, valid=None):
    """Table of 2D (u, v) or 3D (x, y, z) points with an index column."""
    points = np.asarray(points, dtype=np.float64)
    columns = ["u", "v"] if points.shape[1] == 2 else ["x", "y", "z"]
    df = pd.DataFrame(points, columns=columns)
    df.insert(0, "index", np.arange(len(points)))
    if names is not None:
        df.insert(1, "name", list(names))
    if valid is not None:
        df["valid"] = np.asarray(valid, dtype=bool)
    return df

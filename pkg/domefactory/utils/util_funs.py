import copy
import hashlib
import json
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)


def try_gen_folder(folder=None, allow_abs_path_folder_generation=True):
    """Create `folder` (and parents) if it does not exist yet.

    Absolute paths are only created when `allow_abs_path_folder_generation`
    is True; otherwise a warning is logged and nothing happens.
    """
    if folder is None or folder == "":
        raise ValueError("folder argument needs to be specified!")

    if os.path.isabs(folder) and not allow_abs_path_folder_generation:
        logger.warning(
            "Absolute folder path provided, but setting "
            "allow_abs_path_folder_generation = False. No folders will be generated."
        )
        return

    if os.path.exists(folder):
        logger.debug("Found folder: %s", folder)
        return

    logger.info("Did not find folder: %s, creating it...", folder)
    os.makedirs(folder, exist_ok=True)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(config):
    """sha256 over the canonical (sorted-key) JSON dump of a config dict."""
    blob = json.dumps(_to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def deep_merge_config(defaults, overrides, path=""):
    """Return a copy of `defaults` with `overrides` merged in.

    Keys unknown to `defaults` are rejected so typos in config files fail loudly.
    """
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key not in merged:
            raise ValueError("Unknown config key: " + path + str(key))
        if isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = deep_merge_config(merged[key], value, path + str(key) + ".")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_pipeline_config(config_path=None, overrides=None):
    """Load a pipeline JSON config on top of the package defaults."""
    from domefactory.config import pipeline_config

    config = copy.deepcopy(pipeline_config)
    if config_path is not None:
        with open(config_path, "r") as f:
            file_config = json.load(f)
        config = deep_merge_config(config, file_config)
    if overrides:
        config = deep_merge_config(config, overrides)
    return config


def write_json(path, payload):
    with open(path, "w") as f:
        json.dump(_to_jsonable(payload), f, indent=2, sort_keys=True)


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


def save_configs(
    model_id=None,
    save_folder=None,
    pipeline_config=None,
    train_config=None,
    allow_abs_path_folder_generation=True,
):
    """Persist the pipeline and train configs (plus their hashes) as JSON."""
    try_gen_folder(
        folder=save_folder,
        allow_abs_path_folder_generation=allow_abs_path_folder_generation,
    )

    paths = {}
    for name, cfg in (("pipeline_config", pipeline_config), ("train_config", train_config)):
        if cfg is None:
            continue
        path = os.path.join(save_folder, model_id + "_" + name + ".json")
        write_json(path, {"config": cfg, "config_hash": config_hash(cfg)})
        logger.info("Saved %s to %s", name, path)
        paths[name] = path
    return paths

import logging
from collections import OrderedDict

import torch
import torch.optim as optim

logger = logging.getLogger(__name__)


def learning_rate(cfg, step):
    """lr_0 * gamma^step."""
    return float(cfg["learning_rate"]) * float(cfg["lr_decay"]) ** int(step)


def validate_train_config(cfg):
    if float(cfg["learning_rate"]) <= 0:
        raise ValueError("learning_rate must be > 0, got " + str(cfg["learning_rate"]))
    if int(cfg["batch_size"]) < 1:
        raise ValueError("batch_size must be >= 1, got " + str(cfg["batch_size"]))
    if not 0 < float(cfg["lr_decay"]) <= 1:
        raise ValueError("lr_decay must lie in (0, 1], got " + str(cfg["lr_decay"]))
    if int(cfg["n_steps"]) < 0:
        raise ValueError("n_steps must be >= 0, got " + str(cfg["n_steps"]))
    for key in ("beta1", "beta2"):
        if not 0 <= float(cfg[key]) < 1:
            raise ValueError(key + " must lie in [0, 1), got " + str(cfg[key]))
    return cfg


def get_optimizer(model, cfg):
    return optim.Adam(
        model.parameters(),
        lr=float(cfg["learning_rate"]),
        betas=(float(cfg["beta1"]), float(cfg["beta2"])),
        eps=float(cfg["eps"]),
    )


def get_scheduler(optimizer, cfg, step=0):
    """Exponential decay; after `step` scheduler steps the lr is learning_rate(cfg, step).

    Passing the current step rebuilds the schedule of a resumed run.
    """
    gamma = float(cfg["lr_decay"])
    for group in optimizer.param_groups:
        group["initial_lr"] = float(cfg["learning_rate"])
    return optim.lr_scheduler.LambdaLR(optimizer, lambda k: gamma**k, last_epoch=int(step) - 1)


def optimizer_step(optimizer, model, grads):
    """Load `grads` (name -> tensor) into the parameters of `model` and take one step.

    A non-finite gradient skips the step and leaves parameters and moments as
    they were. Returns whether the step was applied.
    """
    named = OrderedDict(model.named_parameters())
    if named.keys() != grads.keys():
        raise ValueError("params and grads must have the same names")
    for k, p in named.items():
        if p.shape != grads[k].shape:
            raise ValueError("gradient shape mismatch for '" + k + "'")

    bad = [k for k, g in grads.items() if not bool(torch.all(torch.isfinite(g)))]
    if bad:
        logger.warning("non-finite gradient in %s; step skipped", bad)
        optimizer.zero_grad(set_to_none=True)
        return False

    for k, p in named.items():
        p.grad = grads[k].detach().to(p.dtype).clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    return True

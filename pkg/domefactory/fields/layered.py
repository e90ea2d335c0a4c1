import logging
from collections import OrderedDict

import torch
import torch.nn as nn

from domefactory.fields.human import HumanField
from domefactory.fields.object_field import ObjectField

logger = logging.getLogger(__name__)

PARAMETER_GROUPS = ("human_canonical", "human_deformation", "human_latents", "object_canonical", "object_latents")


class LayeredField(nn.Module):
    """Human layer plus object layer sharing the frame axis.

    Either layer may be None, which renders as an empty layer.
    """

    def __init__(self, human=None, obj=None):
        super(LayeredField, self).__init__()
        if human is None and obj is None:
            raise ValueError("a layered field needs at least one layer")
        if human is not None and obj is not None and human.n_frames != obj.n_frames:
            raise ValueError(
                "human and object layers disagree on the frame count: "
                + str(human.n_frames)
                + " vs "
                + str(obj.n_frames)
            )
        self.human = human
        self.obj = obj

    @property
    def n_frames(self):
        return (self.human if self.human is not None else self.obj).n_frames

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def parameter_groups(self):
        groups = OrderedDict((name, []) for name in PARAMETER_GROUPS)
        for layer in (self.human, self.obj):
            if layer is not None:
                groups.update(layer.parameter_groups())
        return groups

    def layer_widths(self):
        widths = {}
        for layer in (self.human, self.obj):
            if layer is not None:
                widths.update(layer.layer_widths())
        return widths

    def latent_dim(self):
        return (self.human if self.human is not None else self.obj).latent_dim


def build_layered_field(
    proxy, bodies, template, object_poses, network_config_human, network_config_object, seed=0, dtype=torch.float32
):
    """Fresh layered field for tracked bodies / object poses; initialization is seeded.

    Pose and bounds buffers are built in float64 and cast with the parameters to `dtype`.
    """
    torch.manual_seed(seed)
    human = HumanField(network_config_human, proxy, bodies) if bodies is not None else None
    obj = ObjectField(network_config_object, template, object_poses) if object_poses is not None else None
    field = LayeredField(human, obj).to(dtype)
    logger.info(
        "layered field: %d frames, %d parameters",
        field.n_frames,
        sum(p.numel() for p in field.parameters()),
    )
    return field


def backprop(loss, field):
    """Reverse-mode gradients of a scalar loss for every named parameter of `field`.

    Parameters the loss does not depend on get zero gradients.
    """
    names, params = zip(*field.named_parameters())
    if not (isinstance(loss, torch.Tensor) and loss.requires_grad):
        return OrderedDict((n, torch.zeros_like(p)) for n, p in zip(names, params))
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return OrderedDict(
        (n, torch.zeros_like(p) if g is None else g.detach()) for n, p, g in zip(names, params, grads)
    )

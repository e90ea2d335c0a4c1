import numpy as np

from domefactory.synth.scene import HUMAN, OBJECT

LABEL_THRESHOLD = 0.5


def visible_layer_mask(labels, entity):
    """Pixels where `entity` is labelled (> 0.5) and carries at least the other layer's weight."""
    labels = np.asarray(labels, dtype=np.float64)
    if entity not in (HUMAN, OBJECT):
        raise ValueError("entity must be HUMAN (0) or OBJECT (1), got " + str(entity))
    own = labels[..., entity]
    other = labels[..., 1 - entity]
    return (own > LABEL_THRESHOLD) & (own >= other)


def blend_enhance(rendered, labels, captured, entity):
    """Swap in captured pixels wherever `entity` is visible in front; rendered pixels elsewhere."""
    rendered = np.asarray(rendered, dtype=np.float64)
    captured = np.asarray(captured, dtype=np.float64)
    if rendered.shape != captured.shape or rendered.shape[:2] != np.shape(labels)[:2]:
        raise ValueError(
            "blend inputs must share a resolution: rendered "
            + str(rendered.shape)
            + ", captured "
            + str(captured.shape)
            + ", labels "
            + str(np.shape(labels))
        )
    mask = visible_layer_mask(labels, entity)
    return np.where(mask[..., None], captured, rendered)

from .losses import (
    LOSS_TERMS,
    validate_loss_config,
    loss_photometric,
    loss_object_template,
    loss_human_contact,
    loss_semantic,
    total_loss,
    sample_box_points,
    object_template_samples,
    human_contact_samples,
)
from .pseudo_segmentation import (
    PseudoSegMap,
    generate_pseudo_segmentation,
    save_pseudo_segmentation,
    load_pseudo_segmentation,
)

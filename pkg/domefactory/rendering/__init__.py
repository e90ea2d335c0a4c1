from .sampling import (
    RaySegment,
    RaySampleSet,
    segment_rays,
    segment_rays_batch,
    stratified_sample,
    stratified_sample_batch,
    merge_samples,
    merge_sample_batch,
)
from .compositing import composite_weights, composite_color, composite_label, composite_all
from .renderer import MODES, render_rays, render_view

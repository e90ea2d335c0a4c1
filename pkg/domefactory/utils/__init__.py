from .util_funs import *
from .exceptions import *
from .metrics import (
    MetricsReport,
    metric_psnr,
    metric_ssim,
    metric_pose,
    metric_iou,
    metric_precision,
    joint_rms,
)

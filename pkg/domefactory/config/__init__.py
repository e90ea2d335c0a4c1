from .pipeline_configs import *

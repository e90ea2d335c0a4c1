from .torch_mlp import TorchMLP
from .encoding import PosEncoding
from .human import HumanField, warp_to_canonical_human, eval_human
from .object_field import ObjectField, eval_object
from .layered import LayeredField, PARAMETER_GROUPS, build_layered_field, backprop

__version__ = "0.1.0dev"

from . import config
from . import utils
from . import geometry
from . import synth
from . import tracking
from . import fields
from . import rendering
from . import losses
from . import trainers
from . import export

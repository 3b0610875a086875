
from .embedding import *
from .generator import *
from .losses import *
from .regression import *
from .util import *


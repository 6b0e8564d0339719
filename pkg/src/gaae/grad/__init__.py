from .tensor import Tensor, Tape, backward, no_grad, set_default_dtype
from .optim import Adam, AdamState, adam_step
from . import ops

__all__ = [
    "Tensor", "Tape", "backward", "no_grad", "set_default_dtype",
    "Adam", "AdamState", "adam_step", "ops",
]

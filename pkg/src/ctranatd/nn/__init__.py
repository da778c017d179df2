"""Dense float64 tensors and neural layers with hand-written backward passes."""

from ctranatd.nn.gradcheck import GradCheckReport, grad_check
from ctranatd.nn.optim import Adam, adam_step
from ctranatd.nn.tensor import Parameter, RngState, Tensor3, derive_seed, zero_grads

__all__ = [
    "Adam",
    "GradCheckReport",
    "Parameter",
    "RngState",
    "Tensor3",
    "adam_step",
    "derive_seed",
    "grad_check",
    "zero_grads",
]

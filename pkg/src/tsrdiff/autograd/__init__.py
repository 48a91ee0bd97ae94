"""Dense float64 tensors with reverse-mode automatic differentiation."""

from .core import OPS, Node, OpDef, Parameter, apply, backward, constant, no_grad, register, variable
from .gradcheck import GradcheckReport, gradcheck
from .optim import Adam

__all__ = [
    "OPS",
    "Adam",
    "GradcheckReport",
    "Node",
    "OpDef",
    "Parameter",
    "apply",
    "backward",
    "constant",
    "gradcheck",
    "no_grad",
    "register",
    "variable",
]

from . import ops  # noqa: E402,F401  (registers primitives)

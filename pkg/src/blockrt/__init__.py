"""blockrt: layered task-parallel runtime for block-decomposed simulations."""

__version__ = "0.1.0"

from . import access, dslkits, envtree, layers, mempool
from .layers import (
    LayerStack,
    MessagePassingLayer,
    SharedMemoryLayer,
    run,
    stack_compose,
)
from .zorder import zorder_index

__all__ = [
    "access",
    "dslkits",
    "envtree",
    "layers",
    "mempool",
    "LayerStack",
    "MessagePassingLayer",
    "SharedMemoryLayer",
    "run",
    "stack_compose",
    "zorder_index",
    "__version__",
]

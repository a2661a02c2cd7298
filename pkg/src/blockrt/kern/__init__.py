"""Kernel core selection: compiled extension if available, pure Python otherwise.

Set ``BLOCKRT_PURE=1`` to force the fallback. ``get_impl`` picks a module per
run so benchmarks can compare both implementations in one process.
"""

import os

from . import pykernels

compiled = None
if os.environ.get("BLOCKRT_PURE") != "1":
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

IMPL = "compiled" if compiled is not None else "python"
_default = compiled if compiled is not None else pykernels


def get_impl(name: str = "auto"):
    """Resolve an implementation name to its kernel module."""
    if name in ("auto", "", None):
        return _default
    if name in ("python", "py"):
        return pykernels
    if name in ("compiled", "c"):
        if compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return compiled
    raise ValueError(f"unknown kernel implementation {name!r}")


get_kernel_context = _default.get_kernel_context
sgrid_block_step = _default.sgrid_block_step
usgrid_block_step = _default.usgrid_block_step
particle_block_step = _default.particle_block_step

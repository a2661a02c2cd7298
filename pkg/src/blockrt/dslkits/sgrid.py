"""Structured-grid kit: 5-point relaxation on fixed-size blocks.

Cell payload is one float64; the boundary is a constant-value arithmetic
block, so every out-of-domain read resolves without storage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kern
from ..access import AppLifecycle, attach_storage
from ..envtree import constant_boundary, env_build
from ..mempool import DEFAULT_CHUNK_BYTES, pool_create
from .common import block_records, grid_init, poison_block

DEFAULT_BLOCK = (256, 256)
DEFAULT_ITEMS_PER_PAGE = 256


@dataclass
class SGridParams:
    region: tuple = (512, 512)
    block: tuple = DEFAULT_BLOCK
    items_per_page: int = DEFAULT_ITEMS_PER_PAGE
    alpha: float = 0.0
    beta: float = 0.25
    boundary_value: float = 0.0
    loops: int = 100
    init: str = "random"
    seed: int = 1
    pool_bytes: int = 300 << 20
    chunk_bytes: int = DEFAULT_CHUNK_BYTES
    slots: int = 2
    impl: str = "auto"
    warmup: bool = True
    debug_poison: bool = False
    joint_plan: tuple | None = None


def fill_block_items(block, flat: np.ndarray) -> None:
    """Install a flat item array into the read slot and mark the block live."""
    buf = block.buffer
    ipp = buf.items_per_page
    for k, page in enumerate(buf.read_pages()):
        seg = flat[k * ipp : (k + 1) * ipp]
        if len(seg) == 0:
            break
        if page.view is not None:
            page.view.view(flat.dtype)[: len(seg)] = seg
        else:
            raw = bytearray(page.to_bytes())
            raw[: seg.nbytes] = seg.tobytes()
            page.from_bytes(bytes(raw))
    buf.valid[:] = 1
    block.is_valid = True


def sgrid_kernel(ctx, params: SGridParams, impl=None) -> bool:
    """One step over the caller's blocks; True when the refresh committed."""
    impl = impl or kern.get_impl(params.impl)
    kctx = impl.get_kernel_context(ctx)
    for block in ctx.get_blocks():
        if params.debug_poison:
            poison_block(block)
        impl.sgrid_block_step(kctx, block, params.alpha, params.beta)
    return ctx.refresh()


class SGridApp(AppLifecycle):
    def __init__(self, params: SGridParams):
        self.p = params
        self.loopnum = params.loops
        self.warmup_enabled = params.warmup
        self._impl = kern.get_impl(params.impl)

    def build_env(self, rank_info):
        p = self.p
        pools = [pool_create(p.pool_bytes, p.chunk_bytes)]
        env = env_build(
            p.region, p.block, [constant_boundary(p.boundary_value)], p.joint_plan
        )
        bx, by = p.block
        attach_storage(
            env,
            pools,
            np.float64,
            p.items_per_page,
            poison=np.float64("nan"),
            slots=p.slots,
            memo_capacity=2 * (bx + by) + 8,
        )
        env.pools = pools
        return env

    def initialize(self, ctx):
        p = self.p
        dense = grid_init(p.init, p.seed, p.region)
        for b in ctx.data_blocks():
            ox, oy = b.extent.origin
            bw, bh = b.extent.size
            flat = np.ascontiguousarray(dense[oy : oy + bh, ox : ox + bw]).ravel()
            fill_block_items(b, flat)

    def kernel(self, ctx) -> bool:
        return sgrid_kernel(ctx, self.p, self._impl)

    def finalize(self, ctx):
        env = ctx.env
        return {
            "blocks": block_records(env),
            "pool_used": sum(p.used_bytes for p in env.pools),
            "pool_free": sum(p.free_bytes for p in env.pools),
        }


def make_app(params: SGridParams):
    return lambda: SGridApp(params)

"""Unstructured-grid kit: the same 5-point arithmetic, addressed indirectly.

Every point stores the global addresses of its four neighbors, so in-block
reads can never be guaranteed statically and each access resolves through the
tree (or its memo). Case "c" lays points out like the structured grid; case
"r" composes the lattice with a seeded permutation of point ids, destroying
spatial locality while computing the identical values per logical point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kern
from ..access import AppLifecycle, attach_storage
from ..envtree import env_build, static_boundary
from ..mempool import DEFAULT_CHUNK_BYTES, pool_create
from .common import block_records, grid_init, poison_block
from .sgrid import fill_block_items

ITEM_DTYPE = np.dtype([("v", "<f8"), ("nbr", "<i4", (4, 2))])

# neighbor slots, in access order: north, west, east, south
NEIGHBOR_OFFSETS = ((0, -1), (-1, 0), (1, 0), (0, 1))


@dataclass
class USGridParams:
    region: tuple = (256, 256)
    block: tuple = (256, 256)
    items_per_page: int = 256
    case: str = "c"  # "c": lattice layout, "r": permuted layout
    perm_seed: int = 7
    alpha: float = 0.0
    beta: float = 0.25
    boundary_value: float = 0.0
    loops: int = 20
    init: str = "random"
    seed: int = 1
    pool_bytes: int = 300 << 20
    chunk_bytes: int = DEFAULT_CHUNK_BYTES
    slots: int = 2
    impl: str = "auto"
    warmup: bool = True
    debug_poison: bool = False


def permutation(n: int, seed: int | None) -> np.ndarray:
    """Storage location of each logical point id; identity when seed is None."""
    if seed is None:
        return np.arange(n, dtype=np.int64)
    return np.random.default_rng(seed).permutation(n).astype(np.int64)


def caser_topology(region, seed: int | None):
    """Neighbor table in storage order plus the permutation that produced it.

    Entry ``t`` of storage location ``u`` is the storage address of the t-th
    lattice neighbor of the logical point stored at ``u``; out-of-region
    neighbors keep their raw lattice coordinates (they resolve to the static
    boundary block).
    """
    w, h = region
    n = w * h
    perm = permutation(n, seed)
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n, dtype=np.int64)
    px = inv % w
    py = inv // w
    nbr = np.empty((n, 4, 2), dtype=np.int32)
    for t, (dx, dy) in enumerate(NEIGHBOR_OFFSETS):
        qx = px + dx
        qy = py + dy
        inside = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
        qflat = np.clip(qy * w + qx, 0, n - 1)
        sq = perm[qflat]
        nbr[:, t, 0] = np.where(inside, sq % w, qx)
        nbr[:, t, 1] = np.where(inside, sq // w, qy)
    return nbr, perm


def boundary_ring_table(region, value: float) -> dict:
    """Static items for the one-point ring just outside the region."""
    w, h = region
    item = np.zeros((), dtype=ITEM_DTYPE)
    item["v"] = value
    scalar = item[()]  # one shared, never-mutated record
    table = {}
    for x in range(-1, w + 1):
        table[(x, -1)] = scalar
        table[(x, h)] = scalar
    for y in range(0, h):
        table[(-1, y)] = scalar
        table[(w, y)] = scalar
    return table


def storage_items(params: USGridParams):
    """Flat structured array of the whole region, storage order."""
    w, h = params.region
    seed = params.perm_seed if params.case == "r" else None
    nbr, perm = caser_topology(params.region, seed)
    inv = np.empty(w * h, dtype=np.int64)
    inv[perm] = np.arange(w * h, dtype=np.int64)
    dense = grid_init(params.init, params.seed, params.region).ravel()
    items = np.zeros(w * h, dtype=ITEM_DTYPE)
    items["v"] = dense[inv]
    items["nbr"] = nbr
    return items, perm


def usgrid_kernel(ctx, params: USGridParams, impl=None) -> bool:
    impl = impl or kern.get_impl(params.impl)
    kctx = impl.get_kernel_context(ctx)
    for block in ctx.get_blocks():
        if params.debug_poison:
            poison_block(block)
        impl.usgrid_block_step(kctx, block, params.alpha, params.beta)
    return ctx.refresh()


class USGridApp(AppLifecycle):
    def __init__(self, params: USGridParams):
        self.p = params
        self.loopnum = params.loops
        self.warmup_enabled = params.warmup
        self._impl = kern.get_impl(params.impl)

    def build_env(self, rank_info):
        p = self.p
        pools = [pool_create(p.pool_bytes, p.chunk_bytes)]
        boundary = static_boundary(
            boundary_ring_table(p.region, p.boundary_value), bounded=True
        )
        env = env_build(p.region, p.block, [boundary])
        poison = np.zeros((), dtype=ITEM_DTYPE)
        poison["v"] = np.nan
        bx, by = p.block
        attach_storage(
            env,
            pools,
            ITEM_DTYPE,
            p.items_per_page,
            poison=poison[()],
            slots=p.slots,
            memo_capacity=5 * bx * by,
        )
        env.pools = pools
        return env

    def initialize(self, ctx):
        p = self.p
        w, _ = p.region
        items, _ = storage_items(p)
        grid = items.reshape(-1, w)  # [y, x] in storage coordinates
        for b in ctx.data_blocks():
            ox, oy = b.extent.origin
            bw, bh = b.extent.size
            flat = np.ascontiguousarray(grid[oy : oy + bh, ox : ox + bw]).ravel()
            fill_block_items(b, flat)

    def kernel(self, ctx) -> bool:
        return usgrid_kernel(ctx, self.p, self._impl)

    def finalize(self, ctx):
        env = ctx.env
        return {
            "blocks": block_records(env),
            "pool_used": sum(p.used_bytes for p in env.pools),
            "pool_free": sum(p.free_bytes for p in env.pools),
        }


def make_app(params: USGridParams):
    return lambda: USGridApp(params)

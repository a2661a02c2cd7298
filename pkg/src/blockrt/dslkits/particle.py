"""Bucketed particle kit: short-range repulsion inside fixed buckets.

The domain is a 2-D grid of unit-width buckets (one bucket layer deep on the
z axis); each bucket holds up to 16 particles and interacts with itself plus
the eight surrounding buckets. Particles never change bucket: time steps are
kept small, and crossing a bucket wall raises instead of migrating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kern
from ..access import AppLifecycle, attach_storage
from ..envtree import BlockNode, BlockKind, ConstantField, env_build, static_boundary
from ..errors import InvalidGeometry
from ..mempool import DEFAULT_CHUNK_BYTES, pool_create
from .common import block_records, cell_value, poison_block
from .sgrid import fill_block_items

BUCKET_SLOTS = 16
WALL_PID_BASE = 1 << 40

BUCKET_DTYPE = np.dtype(
    [
        ("count", "<i8"),
        (
            "particles",
            [
                ("pid", "<i8"),
                ("pos", "<f8", (3,)),
                ("vel", "<f8", (3,)),
                ("acc", "<f8", (3,)),
            ],
            (BUCKET_SLOTS,),
        ),
    ]
)


@dataclass
class ParticleParams:
    region: tuple = (32, 32)  # buckets
    block: tuple = (8, 8)  # buckets per block
    items_per_page: int = 8  # buckets per page
    n_particles: int = 1 << 14
    dt: float = 1e-4
    radius: float = 1.0  # interaction cutoff: one bucket width
    loops: int = 10
    init: str = "constant"  # "constant": resting start, "random": seeded velocities
    seed: int = 1
    walls: bool = True
    pool_bytes: int = 300 << 20
    chunk_bytes: int = DEFAULT_CHUNK_BYTES
    slots: int = 2
    impl: str = "auto"
    warmup: bool = True
    debug_poison: bool = False


def _place(bucket, gx: int, gy: int, count: int, pid0: int, vel_of=None) -> None:
    """Drop ``count`` particles on the 4x4 sub-lattice of one bucket."""
    bucket["count"] = count
    parts = bucket["particles"]
    for s in range(count):
        parts[s]["pid"] = pid0 + s
        parts[s]["pos"][0] = gx + (s % 4 + 0.5) / 4.0
        parts[s]["pos"][1] = gy + (s // 4 + 0.5) / 4.0
        parts[s]["pos"][2] = 0.5
        if vel_of is not None:
            v = vel_of(pid0 + s)
            parts[s]["vel"][0] = v[0]
            parts[s]["vel"][1] = v[1]
            parts[s]["vel"][2] = 0.0


def particle_layout(params: ParticleParams) -> np.ndarray:
    """Dense bucket grid with the wall ring, index [gy + 1, gx + 1]."""
    w, h = params.region
    n = params.n_particles
    capacity = w * h * BUCKET_SLOTS
    if n > capacity:
        raise InvalidGeometry(f"{n} particles exceed bucket capacity {capacity}")
    base, rem = divmod(n, w * h)
    vel_of = None
    if params.init == "random":
        s = params.seed

        def vel_of(pid):  # noqa: F811 - deliberate rebind
            return (
                (cell_value(s + 11, pid, 0) - 0.5) * 0.05,
                (cell_value(s + 11, pid, 1) - 0.5) * 0.05,
            )

    grid = np.zeros((h + 2, w + 2), dtype=BUCKET_DTYPE)
    pid = 0
    for gy in range(h):
        for gx in range(w):
            count = base + (1 if gy * w + gx < rem else 0)
            _place(grid[gy + 1, gx + 1], gx, gy, count, pid, vel_of)
            pid += count
    if params.walls:
        wall_pid = WALL_PID_BASE
        for gy in range(-1, h + 1):
            for gx in range(-1, w + 1):
                if 0 <= gx < w and 0 <= gy < h:
                    continue
                _place(grid[gy + 1, gx + 1], gx, gy, BUCKET_SLOTS, wall_pid)
                wall_pid += BUCKET_SLOTS
    return grid


def wall_table(layout: np.ndarray, region) -> dict:
    w, h = region
    table = {}
    for gy in range(-1, h + 1):
        for gx in range(-1, w + 1):
            if 0 <= gx < w and 0 <= gy < h:
                continue
            table[(gx, gy)] = layout[gy + 1, gx + 1].copy()
    return table


def particle_kernel(ctx, params: ParticleParams, impl=None) -> bool:
    impl = impl or kern.get_impl(params.impl)
    kctx = impl.get_kernel_context(ctx)
    for block in ctx.get_blocks():
        if params.debug_poison:
            poison_block(block)
        impl.particle_block_step(kctx, block, params.dt, params.radius)
    return ctx.refresh()


class ParticleApp(AppLifecycle):
    def __init__(self, params: ParticleParams):
        self.p = params
        self.loopnum = params.loops
        self.warmup_enabled = params.warmup
        self._impl = kern.get_impl(params.impl)
        self._layout = None

    def build_env(self, rank_info):
        p = self.p
        pools = [pool_create(p.pool_bytes, p.chunk_bytes)]
        if self._layout is None:
            self._layout = particle_layout(p)
        empty = np.zeros((), dtype=BUCKET_DTYPE)[()]
        dummies = BlockNode(
            BlockKind.ARITHMETIC, payload=ConstantField(empty), outside_domain=True
        )
        boundary = [dummies]
        if p.walls:
            boundary.insert(0, static_boundary(wall_table(self._layout, p.region), bounded=True))
        env = env_build(p.region, p.block, boundary)
        bx, by = p.block
        attach_storage(
            env,
            pools,
            BUCKET_DTYPE,
            p.items_per_page,
            poison=np.zeros((), dtype=BUCKET_DTYPE)[()],
            slots=p.slots,
            memo_capacity=9 * bx * by,
        )
        env.pools = pools
        return env

    def initialize(self, ctx):
        interior = self._layout[1:-1, 1:-1]
        for b in ctx.data_blocks():
            ox, oy = b.extent.origin
            bw, bh = b.extent.size
            flat = np.ascontiguousarray(interior[oy : oy + bh, ox : ox + bw]).ravel()
            fill_block_items(b, flat)

    def kernel(self, ctx) -> bool:
        return particle_kernel(ctx, self.p, self._impl)

    def finalize(self, ctx):
        env = ctx.env
        return {
            "blocks": block_records(env),
            "pool_used": sum(p.used_bytes for p in env.pools),
            "pool_free": sum(p.free_bytes for p in env.pools),
        }


def make_app(params: ParticleParams):
    return lambda: ParticleApp(params)

"""Handwritten serial baselines: dense arrays, double-buffered, no runtime.

These are the equivalence oracles. They repeat the kernels' float operations
in the same order (down to sequential force accumulation via cumsum), so a
correct run matches them bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .common import dense_grid_records, grid_init, records_checksum
from .particle import BUCKET_SLOTS, ParticleParams, particle_layout
from .sgrid import SGridParams
from .usgrid import ITEM_DTYPE, USGridParams, caser_topology


@dataclass
class BaselineResult:
    state: np.ndarray
    records: list
    checksum: str
    t_proc_s: float


def sgrid_baseline(params: SGridParams) -> BaselineResult:
    w, h = params.region
    a = grid_init(params.init, params.seed, params.region)
    alpha, beta, c = params.alpha, params.beta, params.boundary_value
    t0 = time.perf_counter()
    for _ in range(params.loops):
        p = np.pad(a, 1, constant_values=c)
        e_e = p[1:-1, 2:]
        e_w = p[1:-1, :-2]
        e_n = p[:-2, 1:-1]
        e_s = p[2:, 1:-1]
        a = alpha * a + beta * (((e_e + e_w) + e_s) + e_n)
    t1 = time.perf_counter()
    records = dense_grid_records(a, params.block)
    return BaselineResult(a, records, records_checksum(records), t1 - t0)


def usgrid_baseline(params: USGridParams) -> BaselineResult:
    w, h = params.region
    n = w * h
    seed = params.perm_seed if params.case == "r" else None
    nbr, perm = caser_topology(params.region, seed)
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n, dtype=np.int64)
    v = grid_init(params.init, params.seed, params.region).ravel()[inv]
    nx = nbr[:, :, 0].astype(np.int64)
    ny = nbr[:, :, 1].astype(np.int64)
    inside = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    gather = np.clip(ny * w + nx, 0, n - 1)
    alpha, beta, c = params.alpha, params.beta, params.boundary_value
    t0 = time.perf_counter()
    for _ in range(params.loops):
        nv = np.where(inside, v[gather], c)
        v = alpha * v + beta * (((nv[:, 2] + nv[:, 1]) + nv[:, 3]) + nv[:, 0])
    t1 = time.perf_counter()
    items = np.zeros(n, dtype=ITEM_DTYPE)
    items["v"] = v
    items["nbr"] = nbr
    records = _structured_records(items.reshape(h, w), params.block)
    return BaselineResult(items.reshape(h, w), records, records_checksum(records), t1 - t0)


def _structured_records(grid: np.ndarray, block_extent):
    import hashlib

    from ..zorder import zorder_index

    bw, bh = block_extent
    h, w = grid.shape
    out = []
    for by in range(h // bh):
        for bx in range(w // bw):
            raw = np.ascontiguousarray(
                grid[by * bh : (by + 1) * bh, bx * bw : (bx + 1) * bw]
            ).tobytes()
            ksum = float(np.frombuffer(raw, dtype=np.float64).sum())
            out.append((zorder_index((bx, by)), hashlib.sha256(raw).digest(), ksum))
    return out


def particle_baseline(params: ParticleParams, layout=None) -> BaselineResult:
    w, h = params.region
    grid = particle_layout(params) if layout is None else layout.copy()
    dt, radius = params.dt, params.radius
    t0 = time.perf_counter()
    for _ in range(params.loops):
        new = grid.copy()
        for gy in range(h):
            for gx in range(w):
                old = grid[gy + 1, gx + 1]
                n_own = int(old["count"])
                if n_own == 0:
                    continue
                cand = np.concatenate(
                    [
                        grid[gy + 1 + dy, gx + 1 + dx]["particles"]
                        for dy in (-1, 0, 1)
                        for dx in (-1, 0, 1)
                    ]
                )
                alive = np.concatenate(
                    [
                        np.arange(BUCKET_SLOTS) < grid[gy + 1 + dy, gx + 1 + dx]["count"]
                        for dy in (-1, 0, 1)
                        for dx in (-1, 0, 1)
                    ]
                )
                tgt = old["particles"][:n_own]
                d = tgt["pos"][:, None, :] - cand["pos"][None, :, :]
                r = np.sqrt(
                    (d[:, :, 0] * d[:, :, 0] + d[:, :, 1] * d[:, :, 1])
                    + d[:, :, 2] * d[:, :, 2]
                )
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = 1.0 - r / radius
                    s = (t * t) / r
                    contr = d * s[:, :, None]
                mask = alive[None, :] & (r > 0.0) & (r < radius)
                contr = np.where(mask[:, :, None], contr, 0.0)
                f = np.cumsum(contr, axis=1)[:, -1, :]
                vel = tgt["vel"] + f * dt
                pos = tgt["pos"] + vel * dt
                ok_x = (pos[:, 0] >= gx) & (pos[:, 0] < gx + 1.0)
                ok_y = (pos[:, 1] >= gy) & (pos[:, 1] < gy + 1.0)
                if not (ok_x & ok_y).all():
                    from ..errors import BucketOverflow

                    raise BucketOverflow(f"baseline: particle left bucket ({gx},{gy})")
                slot = new[gy + 1, gx + 1]["particles"]
                slot["pos"][:n_own] = pos
                slot["vel"][:n_own] = vel
                slot["acc"][:n_own] = f
        grid = new
    t1 = time.perf_counter()
    interior = np.ascontiguousarray(grid[1:-1, 1:-1])
    records = _structured_records(interior, params.block)
    return BaselineResult(interior, records, records_checksum(records), t1 - t0)


def handwritten_baseline(kit: str, params) -> BaselineResult:
    """Dispatch to the dense serial oracle for one kit."""
    if kit == "sgrid":
        return sgrid_baseline(params)
    if kit in ("usgrid-c", "usgrid-r", "usgrid"):
        return usgrid_baseline(params)
    if kit == "particle":
        return particle_baseline(params)
    raise ValueError(f"unknown kit {kit!r}")

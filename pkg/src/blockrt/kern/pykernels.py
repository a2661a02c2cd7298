"""Pure-Python kernel fallback.

Slower than the compiled core but byte-for-byte equivalent: the same float
operations in the same order, the same access ordinals, the same counters.
"""

from __future__ import annotations

import math

import numpy as np

from ..access import linear_index
from ..errors import BucketOverflow
from .tables import env_tables

PARTICLE_SLOTS = 16


class PyKernelCtx:
    """Thin wrapper: the fallback drives everything through the access layer."""

    def __init__(self, ctx):
        self.ctx = ctx
        env_tables(ctx.env)
        ctx.access._frozen_capacity = False


def get_kernel_context(ctx):
    kctx = getattr(ctx, "_py_kctx", None)
    if kctx is None:
        kctx = PyKernelCtx(ctx)
        ctx._py_kctx = kctx
    return kctx


def _scalar(value) -> float:
    if isinstance(value, np.void) or (
        isinstance(value, np.ndarray) and value.dtype.names is not None
    ):
        return float(value["v"])
    return float(value)


def sgrid_block_step(kctx, block, alpha: float, beta: float) -> None:
    acc = kctx.ctx.accessor(block)
    bx, by = block.extent.size
    for j in range(by):
        for i in range(bx):
            e_n = float(acc.get_local((i, j - 1), known=j > 0))
            e_w = float(acc.get_local((i - 1, j), known=i > 0))
            e = float(acc.get_local((i, j), known=True))
            e_e = float(acc.get_local((i + 1, j), known=i + 1 < bx))
            e_s = float(acc.get_local((i, j + 1), known=j + 1 < by))
            ans = alpha * e + beta * (((e_e + e_w) + e_s) + e_n)
            acc.set_local((i, j), ans)


def usgrid_block_step(kctx, block, alpha: float, beta: float) -> None:
    acc = kctx.ctx.accessor(block)
    bx, by = block.extent.size
    for j in range(by):
        for i in range(bx):
            item = acc.get_local((i, j))  # indirect addressing: never known-local
            nbr = item["nbr"]
            e = float(item["v"])
            e_n = _scalar(acc.get_global((int(nbr[0][0]), int(nbr[0][1]))))
            e_w = _scalar(acc.get_global((int(nbr[1][0]), int(nbr[1][1]))))
            e_e = _scalar(acc.get_global((int(nbr[2][0]), int(nbr[2][1]))))
            e_s = _scalar(acc.get_global((int(nbr[3][0]), int(nbr[3][1]))))
            ans = alpha * e + beta * (((e_e + e_w) + e_s) + e_n)
            acc.set_local((i, j), (ans, nbr))


def particle_block_step(kctx, block, dt: float, radius: float) -> None:
    ctx = kctx.ctx
    acc = ctx.accessor(block)
    bx, by = block.extent.size
    buf = block.buffer
    ipp = buf.items_per_page
    wviews = buf.item_views[buf.write_slot]
    ox, oy = block.extent.origin
    for jb in range(by):
        for ib in range(bx):
            own = acc.get_local((ib, jb), known=True)
            neighborhood = []
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    ni, nj = ib + dx, jb + dy
                    known = 0 <= ni < bx and 0 <= nj < by
                    neighborhood.append(acc.get_local((ni, nj), known=known))
            n_own = int(own["count"])
            off = linear_index(block, (ib, jb))
            out = wviews[off // ipp][off % ipp]
            out["count"] = n_own
            out_parts = out["particles"]
            gx, gy = ox + ib, oy + jb
            for a in range(n_own):
                pa = own["particles"][a]
                pax = float(pa["pos"][0])
                pay = float(pa["pos"][1])
                paz = float(pa["pos"][2])
                fx = fy = fz = 0.0
                for bucket in neighborhood:
                    m = int(bucket["count"])
                    parts = bucket["particles"]
                    for b in range(m):
                        pb = parts[b]
                        dx_ = pax - float(pb["pos"][0])
                        dy_ = pay - float(pb["pos"][1])
                        dz_ = paz - float(pb["pos"][2])
                        r = math.sqrt((dx_ * dx_ + dy_ * dy_) + dz_ * dz_)
                        if 0.0 < r < radius:
                            t = 1.0 - r / radius
                            s = (t * t) / r
                            fx = fx + dx_ * s
                            fy = fy + dy_ * s
                            fz = fz + dz_ * s
                        else:
                            fx = fx + 0.0
                            fy = fy + 0.0
                            fz = fz + 0.0
                vx = float(pa["vel"][0]) + fx * dt
                vy = float(pa["vel"][1]) + fy * dt
                vz = float(pa["vel"][2]) + fz * dt
                px = pax + vx * dt
                py = pay + vy * dt
                pz = paz + vz * dt
                if not (gx <= px < gx + 1.0 and gy <= py < gy + 1.0):
                    raise BucketOverflow(
                        f"particle {int(pa['pid'])} left bucket ({gx},{gy}): "
                        f"pos ({px:.6g},{py:.6g})"
                    )
                slot = out_parts[a]
                slot["pid"] = pa["pid"]
                slot["pos"][0] = px
                slot["pos"][1] = py
                slot["pos"][2] = pz
                slot["vel"][0] = vx
                slot["vel"][1] = vy
                slot["vel"][2] = vz
                slot["acc"][0] = fx
                slot["acc"][1] = fy
                slot["acc"][2] = fz
            for a in range(n_own, PARTICLE_SLOTS):
                out_parts[a] = own["particles"][a]
            buf.dirty[buf.write_slot, off // ipp] = 1

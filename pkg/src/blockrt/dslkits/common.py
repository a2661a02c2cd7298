"""Shared kit plumbing: initial-condition generators, checksums, block records."""

from __future__ import annotations

import hashlib

import numpy as np

from ..access import block_items
from ..envtree import BlockKind

MASK64 = (1 << 64) - 1


def _mix64(h: int) -> int:
    h &= MASK64
    h ^= h >> 30
    h = (h * 0xBF58476D1CE4E5B9) & MASK64
    h ^= h >> 27
    h = (h * 0x94D049BB133111EB) & MASK64
    h ^= h >> 31
    return h


def cell_value(seed: int, x: int, y: int) -> float:
    """Deterministic value in [0, 1) for one grid point, order-independent."""
    h = _mix64((seed & MASK64) * 0x9E3779B97F4A7C15 + x * 0xD1B54A32D192ED03 + y * 0x8CB92BA72F3D8DD7)
    return (h >> 11) * 2.0**-53


def grid_init(kind: str, seed: int, region) -> np.ndarray:
    """Dense (H, W) initial condition; the same values feed every implementation."""
    w, h = region
    if kind == "constant":
        return np.ones((h, w), dtype=np.float64)
    if kind == "hotspot":
        arr = np.zeros((h, w), dtype=np.float64)
        arr[h // 4 : -h // 4 or None, w // 4 : -w // 4 or None] = 1.0
        return arr
    if kind == "random":
        xs = np.arange(w, dtype=np.uint64)[None, :]
        ys = np.arange(h, dtype=np.uint64)[:, None]
        with np.errstate(over="ignore"):
            hv = (
                np.full((1, 1), (seed * 0x9E3779B97F4A7C15) & MASK64, dtype=np.uint64)
                + xs * np.uint64(0xD1B54A32D192ED03)
                + ys * np.uint64(0x8CB92BA72F3D8DD7)
            )
            hv = hv ^ (hv >> np.uint64(30))
            hv = hv * np.uint64(0xBF58476D1CE4E5B9)
            hv = hv ^ (hv >> np.uint64(27))
            hv = hv * np.uint64(0x94D049BB133111EB)
            hv = hv ^ (hv >> np.uint64(31))
        return (hv >> np.uint64(11)).astype(np.float64) * 2.0**-53
    raise ValueError(f"unknown init kind {kind!r}")


def block_bytes(block) -> bytes:
    """Read-slot payload of one block, item-exact (page slack excluded)."""
    buf = block.buffer
    data = b"".join(p.to_bytes() for p in buf.read_pages())
    return data[: block_items(block) * buf.item_bytes]


def block_records(env) -> list[tuple[int, bytes, float]]:
    """(zindex, digest, float sum) for every owned data block."""
    out = []
    for b in env.data_blocks:
        if b.kind is not BlockKind.DATA:
            continue
        raw = block_bytes(b)
        ksum = float(np.frombuffer(raw, dtype=np.float64).sum())
        out.append((b.zindex, hashlib.sha256(raw).digest(), ksum))
    return out


def records_checksum(records) -> str:
    """Stack-independent checksum: digests and sums folded in Z-index order."""
    records = sorted(records)
    digest = hashlib.sha256(b"".join(d for _, d, _ in records)).hexdigest()[:16]
    total = 0.0
    for _, _, s in records:
        total += s
    return f"{digest}:{total.hex()}"


def merge_finalize(finalize_results) -> dict:
    """Fold per-rank finalize payloads into one checksum and pool totals."""
    records = []
    pool_used = pool_free = 0
    for _prefix, payload in finalize_results:
        records.extend(payload["blocks"])
        pool_used += payload.get("pool_used", 0)
        pool_free += payload.get("pool_free", 0)
    return {
        "checksum": records_checksum(records),
        "pool_used": pool_used,
        "pool_free": pool_free,
        "records": sorted(records),
    }


def dense_grid_records(arr: np.ndarray, block_extent) -> list[tuple[int, bytes, float]]:
    """Split a dense (H, W) array into the same per-block records the env yields."""
    from ..zorder import zorder_index

    bw, bh = block_extent
    h, w = arr.shape
    out = []
    for by in range(h // bh):
        for bx in range(w // bw):
            raw = np.ascontiguousarray(arr[by * bh : (by + 1) * bh, bx * bw : (bx + 1) * bw])
            raw = raw.tobytes()
            ksum = float(np.frombuffer(raw, dtype=np.float64).sum())
            out.append((zorder_index((bx, by)), hashlib.sha256(raw).digest(), ksum))
    return out


def poison_block(block) -> None:
    """Debug aid: trash one block's write slot so any read of it surfaces."""
    for page in block.buffer.write_pages():
        if page.view is not None:
            page.view[:] = 0xFF
        else:
            page.from_bytes(b"\xff" * page.nbytes)

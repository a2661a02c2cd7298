"""Fixed-capacity memory pools, chunk allocation and multi-buffered block storage.

A pool owns one backing byte array carved into uniform chunks. Buffers draw
chunks (possibly from several pools), carve them into pages, and keep one
page set per buffer slot so a step can read slot N-1 while writing slot N.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import DoubleFree, InvalidGeometry, OutOfPool

DEFAULT_CHUNK_BYTES = 16 * 1024

_next_pool_id = 0


@dataclass(frozen=True)
class ChunkHandle:
    """Opaque ticket for one chunk of one pool."""

    pool_id: int
    index: int


class MemoryPool:
    """Fixed-size arena of uniform chunks; never grows after creation."""

    def __init__(self, capacity_bytes: int, chunk_bytes: int):
        if capacity_bytes <= 0 or chunk_bytes <= 0:
            raise InvalidGeometry("capacity and chunk size must be positive")
        if capacity_bytes % chunk_bytes != 0:
            raise InvalidGeometry(
                f"chunk size {chunk_bytes} does not divide capacity {capacity_bytes}"
            )
        global _next_pool_id
        self.pool_id = _next_pool_id
        _next_pool_id += 1
        self.capacity_bytes = capacity_bytes
        self.chunk_bytes = chunk_bytes
        self._mem = np.zeros(capacity_bytes, dtype=np.uint8)
        self._total = capacity_bytes // chunk_bytes
        self._free = list(range(self._total))  # min-heap of free indices
        heapq.heapify(self._free)
        self._free_set = set(self._free)

    @property
    def total_chunks(self) -> int:
        return self._total

    @property
    def free_chunks(self) -> int:
        return len(self._free_set)

    @property
    def used_chunks(self) -> int:
        return self._total - len(self._free_set)

    @property
    def used_bytes(self) -> int:
        return self.used_chunks * self.chunk_bytes

    @property
    def free_bytes(self) -> int:
        return self.free_chunks * self.chunk_bytes

    def alloc(self, n_chunks: int) -> list[ChunkHandle]:
        """Take ``n_chunks`` distinct chunks, lowest free indices first."""
        if n_chunks < 1:
            raise InvalidGeometry("must allocate at least one chunk")
        if n_chunks > len(self._free_set):
            raise OutOfPool(
                f"pool {self.pool_id}: requested {n_chunks} chunks, "
                f"{len(self._free_set)} free"
            )
        out = []
        for _ in range(n_chunks):
            idx = heapq.heappop(self._free)
            self._free_set.discard(idx)
            out.append(ChunkHandle(self.pool_id, idx))
        return out

    def alloc_run(self, n_chunks: int) -> list[ChunkHandle] | None:
        """Take ``n_chunks`` consecutive chunks, or None if no run exists."""
        if n_chunks > len(self._free_set):
            return None
        ordered = sorted(self._free_set)
        run_start = 0
        for i in range(1, len(ordered) + 1):
            if i == len(ordered) or ordered[i] != ordered[i - 1] + 1:
                if i - run_start >= n_chunks:
                    picked = ordered[run_start : run_start + n_chunks]
                    for idx in picked:
                        self._free_set.discard(idx)
                    self._free = sorted(self._free_set)
                    heapq.heapify(self._free)
                    return [ChunkHandle(self.pool_id, idx) for idx in picked]
                run_start = i
        return None

    def free(self, handles) -> None:
        for h in handles:
            if h.pool_id != self.pool_id:
                raise DoubleFree(f"chunk {h} does not belong to pool {self.pool_id}")
            if h.index in self._free_set:
                raise DoubleFree(f"chunk {h} freed twice")
            self._free_set.add(h.index)
            heapq.heappush(self._free, h.index)

    def chunk_view(self, handle: ChunkHandle) -> np.ndarray:
        start = handle.index * self.chunk_bytes
        return self._mem[start : start + self.chunk_bytes]

    def __repr__(self):
        return (
            f"MemoryPool(id={self.pool_id}, cap={self.capacity_bytes}, "
            f"chunk={self.chunk_bytes}, free={self.free_chunks}/{self._total})"
        )


class Page:
    """One fixed-size slice of a buffer slot; the unit of validity tracking.

    A page normally occupies one contiguous byte range of one pool (``view``
    is a numpy view into it); when its chunks could not be placed
    consecutively it degrades to a multi-extent gather/scatter page.
    """

    __slots__ = ("index", "nbytes", "extents", "view", "_buffer", "_slot")

    def __init__(self, index, nbytes, extents, buffer, slot):
        self.index = index
        self.nbytes = nbytes
        self.extents = extents
        self.view = extents[0] if len(extents) == 1 else None
        self._buffer = buffer
        self._slot = slot

    @property
    def valid(self) -> bool:
        return bool(self._buffer.valid[self._slot, self.index])

    @valid.setter
    def valid(self, flag: bool) -> None:
        self._buffer.valid[self._slot, self.index] = 1 if flag else 0

    @property
    def dirty(self) -> bool:
        return bool(self._buffer.dirty[self._slot, self.index])

    @dirty.setter
    def dirty(self, flag: bool) -> None:
        self._buffer.dirty[self._slot, self.index] = 1 if flag else 0

    def to_bytes(self) -> bytes:
        if self.view is not None:
            return self.view.tobytes()
        return b"".join(e.tobytes() for e in self.extents)

    def from_bytes(self, data: bytes) -> None:
        if len(data) != self.nbytes:
            raise ValueError(f"expected {self.nbytes} bytes, got {len(data)}")
        if self.view is not None:
            self.view[:] = np.frombuffer(data, dtype=np.uint8)
            return
        off = 0
        for e in self.extents:
            e[:] = np.frombuffer(data[off : off + len(e)], dtype=np.uint8)
            off += len(e)


@dataclass
class _PagePlacement:
    pool: MemoryPool
    handles: list[ChunkHandle]
    offset: int  # byte offset of the page inside its first chunk
    contiguous: bool


class BlockBuffer:
    """Multi-slot page set for one data block.

    ``read_slot`` and ``write_slot`` are always distinct; ``swap`` rotates
    them without touching any payload byte.
    """

    def __init__(self, pools, pages, items_per_page, item_bytes, slots=2):
        if slots < 2:
            raise InvalidGeometry("a block buffer needs at least two slots")
        if pages < 1 or items_per_page < 1 or item_bytes < 1:
            raise InvalidGeometry("pages, items per page and item size must be >= 1")
        self.n_slots = slots
        self.n_pages = pages
        self.items_per_page = items_per_page
        self.item_bytes = item_bytes
        self.page_bytes = items_per_page * item_bytes
        self.read_slot = 0
        self.write_slot = 1
        self.valid = np.zeros((slots, pages), dtype=np.uint8)
        self.dirty = np.zeros((slots, pages), dtype=np.uint8)
        self._chunks: list[tuple[MemoryPool, ChunkHandle]] = []
        self.slots: list[list[Page]] = []
        try:
            for s in range(slots):
                self.slots.append([self._make_page(pools, s, p) for p in range(pages)])
        except OutOfPool:
            self.release()
            raise
        # packing state is per-buffer; drop it so later allocs start fresh
        self._pack = None

    # -- allocation ------------------------------------------------------

    _pack: tuple[MemoryPool, ChunkHandle, int] | None = None

    def _make_page(self, pools, slot, index) -> Page:
        pb = self.page_bytes
        if pb <= max(p.chunk_bytes for p in pools):
            # pack several pages per chunk when they fit
            if self._pack is not None:
                pool, handle, used = self._pack
                if used + pb <= pool.chunk_bytes:
                    view = pool.chunk_view(handle)[used : used + pb]
                    self._pack = (pool, handle, used + pb)
                    return Page(index, pb, [view], self, slot)
            for pool in pools:
                if pool.chunk_bytes >= pb and pool.free_chunks > 0:
                    handle = pool.alloc(1)[0]
                    self._chunks.append((pool, handle))
                    view = pool.chunk_view(handle)[:pb]
                    left = pool.chunk_bytes - pb
                    self._pack = (pool, handle, pb) if left >= pb else None
                    return Page(index, pb, [view], self, slot)
            raise OutOfPool(f"no pool has a free chunk for a {pb}-byte page")
        # page larger than any single chunk: prefer a consecutive run so the
        # page stays one contiguous extent
        self._pack = None
        for pool in pools:
            run = pool.alloc_run(-(-pb // pool.chunk_bytes))
            if run is not None:
                self._chunks.extend((pool, h) for h in run)
                start = run[0].index * pool.chunk_bytes
                return Page(index, pb, [pool._mem[start : start + pb]], self, slot)
        # scattered chunks, possibly from several pools: gather/scatter page
        got: list[tuple[MemoryPool, ChunkHandle]] = []
        need = pb
        for pool in pools:
            while need > 0 and pool.free_chunks > 0:
                h = pool.alloc(1)[0]
                got.append((pool, h))
                need -= pool.chunk_bytes
            if need <= 0:
                break
        if need > 0:
            for pool, h in got:
                pool.free([h])
            raise OutOfPool(f"pools cannot cover a {pb}-byte page")
        self._chunks.extend(got)
        extents = []
        remaining = pb
        for pool, h in got:
            take = min(remaining, pool.chunk_bytes)
            extents.append(pool.chunk_view(h)[:take])
            remaining -= take
        return Page(index, pb, extents, self, slot)

    # -- slot management -------------------------------------------------

    def swap(self) -> None:
        """Rotate slots; with two slots this exchanges read and write."""
        self.read_slot = (self.read_slot + 1) % self.n_slots
        self.write_slot = (self.write_slot + 1) % self.n_slots

    def read_pages(self) -> list[Page]:
        return self.slots[self.read_slot]

    def write_pages(self) -> list[Page]:
        return self.slots[self.write_slot]

    def release(self) -> None:
        """Return every chunk to its pool. The buffer is dead afterwards."""
        by_pool: dict[int, tuple[MemoryPool, list[ChunkHandle]]] = {}
        for pool, h in self._chunks:
            by_pool.setdefault(pool.pool_id, (pool, []))[1].append(h)
        for pool, handles in by_pool.values():
            pool.free(handles)
        self._chunks = []
        self.slots = []


def pool_create(capacity_bytes: int, chunk_bytes: int = DEFAULT_CHUNK_BYTES) -> MemoryPool:
    return MemoryPool(capacity_bytes, chunk_bytes)


def pool_alloc(pool: MemoryPool, n_chunks: int) -> list[ChunkHandle]:
    return pool.alloc(n_chunks)


def pool_free(pool: MemoryPool, handles) -> None:
    pool.free(handles)


def buffer_create(pools, pages, items_per_page, item_bytes, slots=2) -> BlockBuffer:
    return BlockBuffer(list(pools), pages, items_per_page, item_bytes, slots)


def buffer_swap(buffer: BlockBuffer) -> None:
    buffer.swap()


def page_of(linear_item_index: int, items_per_page: int) -> int:
    """Page ordinal holding one linear item index."""
    if items_per_page <= 0:
        raise InvalidGeometry("items_per_page must be positive")
    return linear_item_index // items_per_page

"""Block-based data interface: reads, writes, memoized resolution, refresh state.

Each task owns an access-state record: a per-block memo table mapping the
k-th tree-searched access of a subkernel execution to its resolution, a
per-step missing-page ledger, and a persistent record of remote pages the
task had to acquire (consumed by the proactive prefetch in refresh).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import envtree
from .envtree import BlockKind, BlockNode, Env
from .errors import NotFound, NotOwner, OutOfDomain, ProtocolError, VirtualWrite

# memo record states
MEMO_EMPTY = 0
MEMO_INBLOCK = 1
MEMO_DATA = 2
MEMO_VIRTUAL = 3

DEFAULT_MEMO_CAPACITY = 1024


class AccessMode(Enum):
    NORMAL = "normal"
    WARMUP = "warmup"


@dataclass
class StorageSpec:
    """Item layout shared by every buffered block of one Env."""

    dtype: np.dtype
    items_per_page: int
    memo_capacity: int
    poison: object  # value returned for a read of an unfetched page

    @property
    def item_bytes(self) -> int:
        return self.dtype.itemsize


@dataclass
class Counters:
    env_searches: int = 0
    mmat_hits: int = 0
    missing_records: int = 0
    reexecs: int = 0

    def merge(self, other: "Counters") -> None:
        self.env_searches += other.env_searches
        self.mmat_hits += other.mmat_hits
        self.missing_records += other.missing_records
        self.reexecs += other.reexecs


class AccessMemo:
    """Resolution memo for one (task, block): arrays indexed by access ordinal."""

    __slots__ = ("state", "target", "offset")

    def __init__(self, capacity: int):
        self.state = np.zeros(capacity, dtype=np.uint8)
        self.target = np.full(capacity, -1, dtype=np.int32)
        self.offset = np.zeros(capacity, dtype=np.int64)

    def clear(self) -> None:
        self.state[:] = MEMO_EMPTY

    def snapshot(self):
        return self.state.copy(), self.target.copy(), self.offset.copy()


def block_items(block: BlockNode) -> int:
    return math.prod(block.extent.size)


def linear_index(block: BlockNode, l) -> int:
    """Row-major item index of a local address (first axis fastest)."""
    idx = 0
    for c, s in zip(reversed(l), reversed(block.extent.size)):
        idx = idx * s + c
    return idx


def attach_storage(env: Env, pools, dtype, items_per_page, poison, slots=2,
                   memo_capacity=None) -> None:
    """Give every data block of ``env`` a multi-slot page buffer.

    Also caches per-page item views so reads and writes avoid re-deriving
    dtype views on the hot path.
    """
    from .mempool import buffer_create

    dtype = np.dtype(dtype)
    if memo_capacity is None:
        memo_capacity = DEFAULT_MEMO_CAPACITY
    env.storage = StorageSpec(dtype, items_per_page, memo_capacity, poison)
    for block in env.data_blocks:
        items = block_items(block)
        pages = -(-items // items_per_page)
        buf = buffer_create(pools, pages, items_per_page, dtype.itemsize, slots)
        buf.item_views = [
            [p.view.view(dtype) if p.view is not None else None for p in slot_pages]
            for slot_pages in buf.slots
        ]
        block.buffer = buf


def mark_block_valid(block: BlockNode) -> None:
    """Owned blocks are fully rewritten every step, so every slot is readable."""
    block.buffer.valid[:] = 1
    block.is_valid = True


class TaskAccess:
    """Per-task access state: memo tables, ledgers, counters, mode."""

    def __init__(self, env: Env, task_id):
        self.env = env
        self.task_id = task_id
        self.mode = AccessMode.NORMAL
        self.memo_enabled = True
        self.memos: dict[int, AccessMemo] = {}
        self.step_ledger: set[tuple[int, int]] = set()
        self.persistent_pages: set[tuple[int, int]] = set()
        self.counters = Counters()
        self._frozen_capacity = False
        env.access_state[task_id] = self

    # -- memo management ---------------------------------------------------

    def memo_for(self, block: BlockNode) -> AccessMemo:
        memo = self.memos.get(block.node_id)
        if memo is None:
            memo = AccessMemo(self.env.storage.memo_capacity)
            self.memos[block.node_id] = memo
        return memo

    def memo_clear(self) -> None:
        for memo in self.memos.values():
            memo.clear()

    def memo_set_enabled(self, flag: bool) -> None:
        self.memo_enabled = flag

    # -- resolution ---------------------------------------------------------

    def resolve(self, start: BlockNode, g, memo: AccessMemo | None, seq: int):
        """Search the tree for the node covering ``g`` and classify the hit.

        Returns ``(state, target_node_id, item_offset)`` and memoizes it at
        ``seq`` when a memo is given.
        """
        self.counters.env_searches += 1
        try:
            node = envtree.env_find_block(self.env, start, g)
        except NotFound as exc:
            raise OutOfDomain(str(exc)) from exc
        if node is start:
            rec = (MEMO_INBLOCK, start.node_id, linear_index(start, envtree.global_to_local(start, g)))
        elif node.kind in (BlockKind.DATA, BlockKind.BUFFER_ONLY):
            rec = (MEMO_DATA, node.node_id, linear_index(node, envtree.global_to_local(node, g)))
        else:
            rec = (MEMO_VIRTUAL, node.node_id, 0)
        if memo is not None:
            if seq >= len(memo.state):
                if self._frozen_capacity:
                    raise ProtocolError(
                        f"access ordinal {seq} exceeds memo capacity {len(memo.state)}"
                    )
                newcap = max(2 * len(memo.state), seq + 1)
                for name in ("state", "target", "offset"):
                    old = getattr(memo, name)
                    fill = MEMO_EMPTY if name == "state" else (-1 if name == "target" else 0)
                    new = np.full(newcap, fill, dtype=old.dtype)
                    new[: len(old)] = old
                    setattr(memo, name, new)
            memo.state[seq] = rec[0]
            memo.target[seq] = rec[1]
            memo.offset[seq] = rec[2]
        return rec

    # -- missing pages -------------------------------------------------------

    def record_missing(self, node_id: int, page: int) -> None:
        self.step_ledger.add((node_id, page))
        self.persistent_pages.add((node_id, page))
        self.counters.missing_records += 1

    # -- value paths ----------------------------------------------------------

    def read_buffered(self, node: BlockNode, offset: int, g=None):
        """Read one item of a buffered block, honoring page validity."""
        buf = node.buffer
        ipp = buf.items_per_page
        page = offset // ipp
        rs = buf.read_slot
        if not buf.valid[rs, page]:
            self.record_missing(node.node_id, page)
            return self.env.storage.poison
        views = buf.item_views[rs]
        view = views[page]
        if view is None:  # multi-extent page: gather the single item
            raw = buf.slots[rs][page].to_bytes()
            arr = np.frombuffer(raw, dtype=self.env.storage.dtype)
            return arr[offset % ipp]
        return view[offset % ipp]

    def read_resolved(self, state: int, target: int, offset: int, g):
        node = self.env.nodes[target]
        if state == MEMO_VIRTUAL:
            return envtree.virtual_read(
                node, g, data_reader=self._virtual_data_reader
            )
        return self.read_buffered(node, offset, g)

    def _virtual_data_reader(self, node: BlockNode, g):
        offset = linear_index(node, envtree.global_to_local(node, g))
        return self.read_buffered(node, offset, g)

    # callback used by the compiled kernels for scalar virtual reads
    def virtual_scalar(self, node_id: int, g) -> float:
        value = envtree.virtual_read(
            self.env.nodes[node_id], tuple(g), data_reader=self._virtual_data_reader
        )
        if isinstance(value, np.void) or (
            isinstance(value, np.ndarray) and value.dtype.names is not None
        ):
            return float(value["v"])
        return float(value)


class BlockAccessor:
    """Read/write handle for one block within one subkernel execution.

    Creating the accessor resets the access ordinal, which is what keeps
    memo records stable across iterations of a static access pattern.
    """

    __slots__ = ("ta", "block", "seq", "memo", "_env")

    def __init__(self, ta: TaskAccess, block: BlockNode):
        self.ta = ta
        self.block = block
        self.seq = 0
        self.memo = ta.memo_for(block) if ta.memo_enabled else None
        self._env = ta.env

    def get_local(self, l, known: bool = False):
        if known:
            buf = self.block.buffer
            off = linear_index(self.block, l)
            return buf.item_views[buf.read_slot][off // buf.items_per_page][
                off % buf.items_per_page
            ]
        return self.get_global(envtree.local_to_global(self.block, l))

    def get_global(self, g):
        ta = self.ta
        seq = self.seq
        self.seq = seq + 1
        memo = self.memo if ta.memo_enabled else None
        if memo is not None and seq < len(memo.state) and memo.state[seq] != MEMO_EMPTY:
            ta.counters.mmat_hits += 1
            state = int(memo.state[seq])
            return ta.read_resolved(state, int(memo.target[seq]), int(memo.offset[seq]), g)
        state, target, offset = ta.resolve(self.block, g, memo, seq)
        return ta.read_resolved(state, target, offset, g)

    def set_local(self, l, value) -> None:
        block = self.block
        if block.kind is not BlockKind.DATA:
            raise VirtualWrite(f"cannot write through {block!r}")
        if block.ch_tid != self.ta.task_id:
            raise NotOwner(
                f"task {self.ta.task_id} writing block owned by {block.ch_tid}"
            )
        buf = block.buffer
        off = linear_index(block, l)
        page = off // buf.items_per_page
        ws = buf.write_slot
        view = buf.item_views[ws][page]
        if view is None:
            raw = bytearray(buf.slots[ws][page].to_bytes())
            arr = np.frombuffer(raw, dtype=self.ta.env.storage.dtype)
            arr[off % buf.items_per_page] = value
            buf.slots[ws][page].from_bytes(bytes(raw))
        else:
            view[off % buf.items_per_page] = value
        buf.dirty[ws, page] = 1


def get_blocks(env: Env, caller, mode: AccessMode = AccessMode.NORMAL) -> list[BlockNode]:
    """Data blocks computed by ``caller``, ascending Z-index."""
    return sorted(
        (
            b
            for b in env.data_blocks
            if b.kind is BlockKind.DATA and b.ch_tid == caller
        ),
        key=lambda b: b.zindex,
    )


def merged_step_ledger(env: Env) -> set[tuple[int, int]]:
    out: set[tuple[int, int]] = set()
    for ta in env.access_state.values():
        out |= ta.step_ledger
    return out


def merged_persistent_pages(env: Env) -> set[tuple[int, int]]:
    out: set[tuple[int, int]] = set()
    for ta in env.access_state.values():
        out |= ta.persistent_pages
    return out


def clear_step_ledgers(env: Env) -> None:
    for ta in env.access_state.values():
        ta.step_ledger.clear()


def core_refresh(ctx) -> bool:
    """Innermost refresh behavior: commit the step by rotating buffers.

    Reached directly on serial runs and through the layer advice chain
    otherwise; a message-passing layer only proceeds here once the merged
    ledger of the whole group is empty.
    """
    env = ctx.env
    ledger = merged_step_ledger(env)
    if ctx.mode is AccessMode.WARMUP:
        clear_step_ledgers(env)
        return not ledger
    if ledger:
        raise ProtocolError(
            f"{len(ledger)} missing pages but no layer can fetch them"
        )
    for block in env.data_blocks:
        if block.kind is BlockKind.DATA:
            block.buffer.swap()
    for node in env.data_blocks:
        if node.kind is BlockKind.BUFFER_ONLY and node.buffer is not None:
            node.buffer.valid[:] = 0
            node.is_valid = False
    env.step = getattr(env, "step", 0) + 1
    return True


def mmat_control(ta: TaskAccess, action: str) -> None:
    """Enable, disable or reset one task's access memo."""
    if action == "enable":
        ta.memo_set_enabled(True)
    elif action == "disable":
        ta.memo_set_enabled(False)
    elif action == "reset":
        ta.memo_clear()
    else:
        raise ValueError(f"unknown memo action {action!r}")


WARMUP_PASS_CAP = 8


def warmup(ctx, kernel) -> None:
    """Run the kernel in dry-run mode until it stops discovering remote pages.

    Results are discarded (buffers never rotate); the persistent record left
    behind drives the proactive page prefetch of later refreshes.
    """
    from .errors import NonConvergence

    ctx.access.memo_clear()
    ctx.access.mode = AccessMode.WARMUP
    try:
        passes = 0
        while True:
            passes += 1
            ok = kernel(ctx)
            if ok:
                return
            ctx.access.counters.reexecs += 1
            if passes >= WARMUP_PASS_CAP:
                raise NonConvergence(
                    f"warm-up still found new remote pages after {passes} passes"
                )
    finally:
        ctx.access.mode = AccessMode.NORMAL


class AppLifecycle:
    """Base application contract: initialize, iterate a kernel, finalize.

    ``processing`` follows the standard shape: one warm-up, then ``loopnum``
    committed steps, each re-executed until its refresh succeeds.
    """

    loopnum: int = 1
    warmup_enabled: bool = True

    def build_env(self, rank_info) -> Env:
        raise NotImplementedError

    def initialize(self, ctx) -> None:
        raise NotImplementedError

    def kernel(self, ctx) -> bool:
        raise NotImplementedError

    def processing(self, ctx) -> None:
        if self.warmup_enabled:
            ctx.warmup(self.kernel)
        for _ in range(self.loopnum):
            ctx.run_step(self.kernel)

    def finalize(self, ctx):
        return None

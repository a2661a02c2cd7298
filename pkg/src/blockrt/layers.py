"""Stackable runtime layers: hook interception, thread and rank layers, Z-order assignment.

A layer contributes advice at fixed lifecycle hook points instead of rewriting
application code: rank layers bring up isolated peer contexts around the
program, thread layers fan out the processing phase, both subdivide the block
allocation at get_blocks and synchronize at refresh. Blocks travel between
rank contexts only as page messages.
"""

from __future__ import annotations

import itertools
import queue
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

from . import access as _access
from .access import AccessMode, BlockAccessor, Counters, TaskAccess
from .envtree import BlockKind, env_specialize
from .errors import Deadlock, InvalidNesting, ProtocolError, RunFailure
from .zorder import zorder_index

__all__ = [
    "HookPoint",
    "LayerKind",
    "Layer",
    "SharedMemoryLayer",
    "MessagePassingLayer",
    "LayerStack",
    "stack_compose",
    "zorder_index",
    "assign_blocks",
    "PageMessage",
    "Runtime",
    "RunReport",
    "run",
]

TaskId = tuple[int, ...]

REEXEC_CAP = 100


class HookPoint(Enum):
    PROGRAM_START = "ProgramStart"
    PROGRAM_END = "ProgramEnd"
    AROUND_INITIALIZE = "AroundInitialize"
    AROUND_PROCESSING = "AroundProcessing"
    AROUND_FINALIZE = "AroundFinalize"
    AROUND_GET_BLOCKS = "AroundGetBlocks"
    AROUND_REFRESH = "AroundRefresh"


class LayerKind(Enum):
    SHARED_MEMORY = "sm"
    MESSAGE_PASSING = "mp"


@dataclass(frozen=True)
class Layer:
    parallelism: int
    kind = None  # type: LayerKind
    name = "layer"

    def __post_init__(self):
        if self.parallelism < 1:
            raise InvalidNesting("layer parallelism must be >= 1")


class SharedMemoryLayer(Layer):
    kind = LayerKind.SHARED_MEMORY
    name = "sm"


class MessagePassingLayer(Layer):
    kind = LayerKind.MESSAGE_PASSING
    name = "mp"


@dataclass(frozen=True)
class LayerStack:
    layers: tuple[Layer, ...]

    @property
    def leaf_count(self) -> int:
        n = 1
        for layer in self.layers:
            n *= layer.parallelism
        return n

    @property
    def mp_dims(self) -> int:
        return sum(1 for l in self.layers if l.kind is LayerKind.MESSAGE_PASSING)

    def describe(self) -> str:
        return ",".join(f"{l.name}:{l.parallelism}" for l in self.layers) or "serial"


def stack_compose(layers) -> LayerStack:
    """Validate ordering and compose a stack; rank layers must be outermost."""
    layers = tuple(layers)
    seen_sm = False
    for layer in layers:
        if layer.kind is LayerKind.SHARED_MEMORY:
            seen_sm = True
        elif layer.kind is LayerKind.MESSAGE_PASSING and seen_sm:
            raise InvalidNesting(
                "a message-passing layer cannot sit inside a shared-memory layer"
            )
    return LayerStack(layers)


def assign_blocks(blocks, parallelism: int) -> list[list]:
    """Split blocks into Z-contiguous runs whose sizes differ by at most one."""
    ordered = sorted(blocks, key=lambda b: b.zindex)
    base, rem = divmod(len(ordered), parallelism)
    parts = []
    i = 0
    for t in range(parallelism):
        n = base + (1 if t < rem else 0)
        parts.append(ordered[i : i + n])
        i += n
    return parts


def assign_task_ids(env, stack: LayerStack) -> None:
    """Give every data block its leaf compute/management task id.

    Each layer splits the allocation of the layer above by its parallelism,
    so the leaf assignment is the nested Z-order partition.
    """

    def rec(blocks, layers, prefix):
        if not layers:
            for b in blocks:
                b.ch_tid = prefix
                b.dm_tid = prefix
            return
        for i, part in enumerate(assign_blocks(blocks, layers[0].parallelism)):
            rec(part, layers[1:], prefix + (i,))

    rec(env.data_blocks, list(stack.layers), ())


# -- page messages and rank services ----------------------------------------


class MessageKind(Enum):
    REQUEST = "Request"
    REPLY = "Reply"
    BARRIER = "Barrier"
    SHUTDOWN = "Shutdown"


@dataclass
class PageMessage:
    kind: MessageKind
    sender: TaskId
    block_id: int = -1
    page: int = -1
    payload: bytes | None = None
    round: int = 0
    phase: str = ""  # Barrier messages: "sync" or "done"
    flag: bool = False  # Barrier sync: sender saw missing pages


class RankServices:
    """Message-passing endpoint of one rank; used only by the rank master."""

    def __init__(self, prefix: TaskId, registry, mp_dims: int, timeout: float, tracer=None):
        self.prefix = prefix
        self.registry = registry
        self.inbox = registry[prefix]
        self.peers = sorted(p for p in registry if p != prefix)
        self.mp_dims = mp_dims
        self.timeout = timeout
        self.tracer = tracer
        self.round = 0
        self.messages_sent = 0
        self.sent_by_kind = {k: 0 for k in MessageKind}
        self.pages_fetched = 0
        self.fetch_rounds: list[tuple[int, int]] = []
        self._held: list[PageMessage] = []  # tokens that arrived ahead of phase

    def send(self, to: TaskId, msg: PageMessage) -> None:
        self.registry[to].put(msg)
        self.messages_sent += 1
        self.sent_by_kind[msg.kind] += 1

    def _recv(self) -> PageMessage:
        try:
            return self.inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise Deadlock(
                f"rank {self.prefix} waited {self.timeout}s in round {self.round}"
            ) from None

    def _serve(self, env, msg: PageMessage) -> None:
        node = env.nodes[msg.block_id]
        if node.kind is not BlockKind.DATA or tuple(node.dm_tid[: self.mp_dims]) != self.prefix:
            raise ProtocolError(
                f"rank {self.prefix} asked to serve block {msg.block_id} it does not manage"
            )
        page = node.buffer.slots[node.buffer.read_slot][msg.page]
        self.send(
            msg.sender,
            PageMessage(
                MessageKind.REPLY,
                sender=self.prefix,
                block_id=msg.block_id,
                page=msg.page,
                payload=page.to_bytes(),
                round=msg.round,
            ),
        )

    def _install(self, env, msg: PageMessage) -> None:
        node = env.nodes[msg.block_id]
        if node.kind is not BlockKind.BUFFER_ONLY:
            raise ProtocolError(f"reply for block {msg.block_id} which is not buffer-only here")
        buf = node.buffer
        page = buf.slots[buf.read_slot][msg.page]
        if msg.payload is None or len(msg.payload) != page.nbytes:
            raise ProtocolError(
                f"reply payload size {len(msg.payload or b'')} != page size {page.nbytes}"
            )
        page.from_bytes(msg.payload)
        buf.valid[buf.read_slot, msg.page] = 1
        node.is_valid = True
        self.pages_fetched += 1

    def exchange_sync(self, r: int, flag: bool, env) -> list[bool]:
        """All-to-all barrier carrying the per-rank missing flag."""
        for p in self.peers:
            self.send(p, PageMessage(MessageKind.BARRIER, self.prefix, round=r, phase="sync", flag=flag))
        flags = []
        pending = []
        for msg in self._held:
            if msg.kind is MessageKind.BARRIER and msg.phase == "sync" and msg.round == r:
                flags.append(msg.flag)
            else:
                pending.append(msg)
        self._held = pending
        while len(flags) < len(self.peers):
            msg = self._recv()
            if msg.kind is MessageKind.REQUEST:
                self._serve(env, msg)
            elif msg.kind is MessageKind.BARRIER and msg.phase == "sync":
                if msg.round != r:
                    raise ProtocolError(
                        f"rank {self.prefix} in round {r} got sync for round {msg.round}"
                    )
                flags.append(msg.flag)
            elif msg.kind is MessageKind.BARRIER and msg.phase == "done":
                if msg.round != r:
                    raise ProtocolError(
                        f"rank {self.prefix} in round {r} got done for round {msg.round}"
                    )
                self._held.append(msg)
            else:
                raise ProtocolError(f"unexpected {msg.kind} during sync of round {r}")
        return flags

    def fetch_pages(self, env, pairs) -> int:
        """Request pages from their managing ranks and install the replies."""
        outstanding = set()
        for node_id, page in sorted(set(pairs)):
            node = env.nodes[node_id]
            owner = tuple(node.dm_tid[: self.mp_dims])
            if owner == self.prefix:
                continue  # managed here: the read slot already has it
            self.send(
                owner,
                PageMessage(
                    MessageKind.REQUEST,
                    sender=self.prefix,
                    block_id=node_id,
                    page=page,
                    round=self.round,
                ),
            )
            outstanding.add((node_id, page))
        installed = 0
        while outstanding:
            msg = self._recv()
            if msg.kind is MessageKind.REQUEST:
                self._serve(env, msg)
            elif msg.kind is MessageKind.REPLY:
                key = (msg.block_id, msg.page)
                if key not in outstanding:
                    raise ProtocolError(f"unsolicited reply for {key}")
                self._install(env, msg)
                outstanding.discard(key)
                installed += 1
            elif msg.kind is MessageKind.BARRIER and msg.phase == "done" and msg.round == self.round:
                self._held.append(msg)
            else:
                raise ProtocolError(f"unexpected {msg.kind}/{msg.phase} while fetching")
        return installed

    def done_barrier(self, r: int, env) -> None:
        """Second barrier: nobody leaves the round while requests may arrive."""
        for p in self.peers:
            self.send(p, PageMessage(MessageKind.BARRIER, self.prefix, round=r, phase="done"))
        got = 0
        pending = []
        for msg in self._held:
            if msg.kind is MessageKind.BARRIER and msg.phase == "done" and msg.round == r:
                got += 1
            else:
                pending.append(msg)
        self._held = pending
        while got < len(self.peers):
            msg = self._recv()
            if msg.kind is MessageKind.REQUEST:
                self._serve(env, msg)
            elif msg.kind is MessageKind.BARRIER and msg.phase == "done":
                if msg.round != r:
                    raise ProtocolError(
                        f"rank {self.prefix} awaiting done({r}) got done({msg.round})"
                    )
                got += 1
            elif msg.kind is MessageKind.BARRIER and msg.phase == "sync" and msg.round == r + 1:
                self._held.append(msg)  # a fast peer already entered the next round
            else:
                raise ProtocolError(f"unexpected {msg.kind}/{msg.phase} in done({r})")

    def plain_barrier(self, env) -> None:
        self.round += 1
        self.exchange_sync(self.round, False, env)
        self.done_barrier(self.round, env)

    def shutdown(self) -> None:
        for p in self.peers:
            self.send(p, PageMessage(MessageKind.SHUTDOWN, self.prefix))
        got = 0
        while got < len(self.peers):
            msg = self._recv()
            if msg.kind is MessageKind.SHUTDOWN:
                got += 1
            else:
                raise ProtocolError(f"{msg.kind} arrived during shutdown")


class GroupSync:
    """Barrier plus broadcast cell for one shared-memory group."""

    def __init__(self, n: int):
        self.barrier = threading.Barrier(n)
        self.cell = None


# -- task context -------------------------------------------------------------


class TaskContext:
    """Everything one leaf task needs: env, access state, refresh chain."""

    def __init__(self, runtime: "Runtime", env, task_id: TaskId, rank: RankServices | None,
                 sm_chain):
        self.runtime = runtime
        self.env = env
        self.task_id = task_id
        self.rank = rank
        # (layer_pos, group, my_index) innermost-first
        self.sm_chain = sm_chain
        self.access = TaskAccess(env, task_id)
        self.refresh_calls = 0

    @property
    def mode(self) -> AccessMode:
        return self.access.mode

    @property
    def step(self) -> int:
        return getattr(self.env, "step", 0)

    def data_blocks(self):
        """All data blocks of this env copy (whole rank allocation)."""
        return [b for b in self.env.data_blocks if b.kind is BlockKind.DATA]

    def accessor(self, block) -> BlockAccessor:
        return BlockAccessor(self.access, block)

    def get_blocks(self):
        """This task's data blocks, each layer subdividing the one above."""
        blocks = [b for b in self.env.data_blocks if b.kind is BlockKind.DATA]
        for pos, layer in enumerate(self.runtime.stack.layers):
            self.runtime.trace_hook(HookPoint.AROUND_GET_BLOCKS, layer, self.task_id)
            if layer.kind is LayerKind.MESSAGE_PASSING and self.env.specialized_for is None:
                my_tids = frozenset(
                    b.ch_tid
                    for b in self.env.data_blocks
                    if tuple(b.ch_tid[: self.runtime.stack.mp_dims]) == self.rank.prefix
                )
                env_specialize(self.env, my_tids)
            mine = self.task_id[pos]
            blocks = [b for b in blocks if b.ch_tid[pos] == mine and b.kind is BlockKind.DATA]
        return sorted(blocks, key=lambda b: b.zindex)

    # -- refresh ---------------------------------------------------------

    def refresh(self) -> bool:
        chain = []
        for pos, group, my_index in self.sm_chain:
            chain.append(self._sm_refresh_entry(pos, group, my_index))
        if self.rank is not None and self.runtime.stack.mp_dims:
            chain.append(self._mp_refresh_entry())

        def call(i):
            if i == len(chain):
                return _access.core_refresh(self)
            return chain[i](lambda: call(i + 1))

        result = call(0)
        self.refresh_calls += 1
        self.runtime.trace_refresh(self.task_id, self.refresh_calls, result)
        return result

    def _sm_refresh_entry(self, pos, group, my_index):
        layer = self.runtime.stack.layers[pos]

        def advice(proceed):
            self.runtime.trace_hook(HookPoint.AROUND_REFRESH, layer, self.task_id)
            try:
                group.barrier.wait(self.runtime.deadlock_timeout)
            except threading.BrokenBarrierError:
                raise Deadlock(f"task {self.task_id} broken barrier at refresh") from None
            if my_index == 0:
                try:
                    group.cell = proceed()
                except BaseException:
                    group.barrier.abort()
                    raise
                group.barrier.wait(self.runtime.deadlock_timeout)
                return group.cell
            try:
                group.barrier.wait(self.runtime.deadlock_timeout)
            except threading.BrokenBarrierError:
                raise Deadlock(f"task {self.task_id} broken barrier at refresh") from None
            return group.cell

        return advice

    def _mp_refresh_entry(self):
        layer = next(
            l for l in self.runtime.stack.layers if l.kind is LayerKind.MESSAGE_PASSING
        )

        def advice(proceed):
            self.runtime.trace_hook(HookPoint.AROUND_REFRESH, layer, self.task_id)
            svc = self.rank
            env = self.env
            svc.round += 1
            r = svc.round
            ledger = _access.merged_step_ledger(env)
            my_miss = bool(ledger)
            flags = svc.exchange_sync(r, my_miss, env)
            global_miss = my_miss or any(flags)
            installed = 0
            if self.mode is AccessMode.WARMUP:
                installed += svc.fetch_pages(env, ledger)
                _access.clear_step_ledgers(env)
                svc.done_barrier(r, env)
                svc.fetch_rounds.append((r, installed))
                return not global_miss
            if global_miss:
                installed += svc.fetch_pages(env, ledger)
                _access.clear_step_ledgers(env)
                svc.done_barrier(r, env)
                svc.fetch_rounds.append((r, installed))
                return False
            result = proceed()
            installed += svc.fetch_pages(env, _access.merged_persistent_pages(env))
            svc.done_barrier(r, env)
            svc.fetch_rounds.append((r, installed))
            return result

        return advice

    # -- stepping ----------------------------------------------------------

    def run_step(self, kernel) -> None:
        attempts = 0
        while True:
            ok = kernel(self)
            if ok:
                return
            attempts += 1
            self.access.counters.reexecs += 1
            if attempts >= REEXEC_CAP:
                raise ProtocolError(f"step never succeeded after {attempts} re-executions")

    def warmup(self, kernel) -> None:
        _access.warmup(self, kernel)


@dataclass
class RankInfo:
    prefix: TaskId
    n_ranks: int
    stack: LayerStack


@dataclass
class RunReport:
    stack: str
    t_init_s: float = 0.0
    t_proc_s: float = 0.0
    t_fin_s: float = 0.0
    counters: Counters = field(default_factory=Counters)
    messages: int = 0
    message_kinds: dict = field(default_factory=dict)
    pages_fetched: int = 0
    fetch_rounds: list = field(default_factory=list)  # per round, summed over ranks
    steps: int = 0
    finalize_results: list = field(default_factory=list)  # (rank prefix, payload)
    trace: list = field(default_factory=list)
    refresh_trace: list = field(default_factory=list)  # (task, call index, bool)


class Runtime:
    """Drives one application through the composed layer stack."""

    def __init__(self, stack: LayerStack, trace: bool = False, deadlock_timeout: float = 30.0):
        self.stack = stack
        self.trace_enabled = trace
        self.deadlock_timeout = deadlock_timeout
        self._trace: list[str] = []
        self._refresh_trace: list[tuple] = []
        self._lock = threading.Lock()

    # -- tracing -----------------------------------------------------------

    def trace_hook(self, hook: HookPoint, layer, task_id) -> None:
        if self.trace_enabled:
            name = layer.name if layer is not None else "core"
            with self._lock:
                self._trace.append(f"hook={hook.value} layer={name} task={task_id}")

    def trace_refresh(self, task_id, call_index, result) -> None:
        if self.trace_enabled:
            with self._lock:
                self._refresh_trace.append((task_id, call_index, result))

    # -- running -----------------------------------------------------------

    def run(self, app_factory) -> RunReport:
        if not callable(app_factory):
            instance = app_factory
            app_factory = lambda: instance  # noqa: E731 - single-rank convenience
            if self.stack.mp_dims and self.stack.leaf_count > 1:
                raise ValueError("multi-rank stacks need an app factory, not an instance")
        mp_layers = [l for l in self.stack.layers if l.kind is LayerKind.MESSAGE_PASSING]
        prefixes = list(itertools.product(*(range(l.parallelism) for l in mp_layers)))
        registry = {p: queue.SimpleQueue() for p in prefixes} if len(prefixes) > 1 else None

        results: dict[TaskId, dict] = {}
        failures: list[tuple[TaskId, BaseException]] = []

        def rank_body(prefix: TaskId):
            try:
                results[prefix] = self._run_rank(app_factory, prefix, registry)
            except BaseException as exc:  # noqa: BLE001 - reported as RunFailure
                failures.append((prefix, exc))

        if len(prefixes) == 1:
            rank_body(prefixes[0])
        else:
            threads = [
                threading.Thread(target=rank_body, args=(p,), name=f"rank{p}")
                for p in prefixes
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        if failures:
            # cascading deadlocks are symptoms; report the root cause first
            prefix, exc = sorted(
                failures, key=lambda f: (isinstance(f[1], Deadlock), f[0])
            )[0]
            if isinstance(exc, RunFailure):
                raise exc
            raise RunFailure(prefix, exc) from exc

        report = RunReport(stack=self.stack.describe())
        per_round: dict[int, int] = {}
        for prefix in sorted(results):
            r = results[prefix]
            report.t_init_s = max(report.t_init_s, r["t_init"])
            report.t_proc_s = max(report.t_proc_s, r["t_proc"])
            report.t_fin_s = max(report.t_fin_s, r["t_fin"])
            report.counters.merge(r["counters"])
            report.messages += r["messages"]
            for kind, n in r["message_kinds"].items():
                report.message_kinds[kind] = report.message_kinds.get(kind, 0) + n
            report.pages_fetched += r["pages_fetched"]
            report.steps = max(report.steps, r["steps"])
            report.finalize_results.append((prefix, r["finalize"]))
            for rnd, n in r["fetch_rounds"]:
                per_round[rnd] = per_round.get(rnd, 0) + n
        report.fetch_rounds = [per_round[k] for k in sorted(per_round)]
        report.trace = self._trace
        report.refresh_trace = self._refresh_trace
        # all channels must be drained once every rank has shut down
        if registry is not None:
            for p, q in registry.items():
                if not q.empty():
                    raise ProtocolError(f"rank {p} inbox not empty after shutdown")
        return report

    def _run_rank(self, app_factory, prefix: TaskId, registry) -> dict:
        stack = self.stack
        mp_dims = stack.mp_dims
        sm_layers = [
            (pos, l)
            for pos, l in enumerate(stack.layers)
            if l.kind is LayerKind.SHARED_MEMORY
        ]
        for layer in stack.layers:
            if layer.kind is LayerKind.MESSAGE_PASSING:
                self.trace_hook(HookPoint.PROGRAM_START, layer, prefix)
        for _, layer in sm_layers:
            self.trace_hook(HookPoint.PROGRAM_START, layer, prefix)

        svc = None
        if registry is not None:
            svc = RankServices(prefix, registry, mp_dims, self.deadlock_timeout)
        elif mp_dims:
            # single rank: keep the counters but no peers
            svc = RankServices(prefix, {prefix: queue.SimpleQueue()}, mp_dims,
                               self.deadlock_timeout)

        n_ranks = 1
        for layer in stack.layers:
            if layer.kind is LayerKind.MESSAGE_PASSING:
                n_ranks *= layer.parallelism
        app = app_factory()
        env = app.build_env(RankInfo(prefix, n_ranks, stack))
        assign_task_ids(env, stack)

        # shared-memory group syncs, one per index prefix at each sm layer
        groups: dict[tuple[int, TaskId], GroupSync] = {}
        sm_pars = [l.parallelism for _, l in sm_layers]
        leaf_suffixes = list(itertools.product(*(range(n) for n in sm_pars)))
        for j, (pos, layer) in enumerate(sm_layers):
            for suffix in {s[:j] for s in leaf_suffixes}:
                groups[(pos, prefix + suffix)] = GroupSync(layer.parallelism)

        ctxs: dict[TaskId, TaskContext] = {}
        for suffix in leaf_suffixes:
            tid = prefix + suffix
            chain = []
            for j in range(len(sm_layers) - 1, -1, -1):  # innermost-first
                pos, layer = sm_layers[j]
                chain.append((pos, groups[(pos, prefix + suffix[:j])], suffix[j]))
            ctxs[tid] = TaskContext(self, env, tid, svc, chain)
        master = ctxs[prefix + tuple(0 for _ in sm_pars)]

        mp_layer = next((l for l in stack.layers if l.kind is LayerKind.MESSAGE_PASSING), None)

        t0 = time.perf_counter()
        for layer in stack.layers:
            self.trace_hook(HookPoint.AROUND_INITIALIZE, layer, master.task_id)
        app.initialize(master)
        t1 = time.perf_counter()

        for layer in stack.layers:
            self.trace_hook(HookPoint.AROUND_PROCESSING, layer, master.task_id)
        if leaf_suffixes == [()]:
            app.processing(master)
        else:
            self._spawn_processing(app, ctxs, prefix, [l for _, l in sm_layers], ())
        t2 = time.perf_counter()

        if svc is not None and svc.peers:
            svc.plain_barrier(env)
        for layer in stack.layers:
            self.trace_hook(HookPoint.AROUND_FINALIZE, layer, master.task_id)
        finalize = app.finalize(master)
        t3 = time.perf_counter()

        for _, layer in reversed(sm_layers):
            self.trace_hook(HookPoint.PROGRAM_END, layer, prefix)
        if svc is not None and svc.peers:
            svc.shutdown()
        if mp_layer is not None:
            self.trace_hook(HookPoint.PROGRAM_END, mp_layer, prefix)

        counters = Counters()
        for ctx in ctxs.values():
            counters.merge(ctx.access.counters)
        return {
            "t_init": t1 - t0,
            "t_proc": t2 - t1,
            "t_fin": t3 - t2,
            "counters": counters,
            "messages": svc.messages_sent if svc else 0,
            "message_kinds": {k.value: n for k, n in svc.sent_by_kind.items()} if svc else {},
            "pages_fetched": svc.pages_fetched if svc else 0,
            "fetch_rounds": svc.fetch_rounds if svc else [],
            "steps": getattr(env, "step", 0),
            "finalize": finalize,
        }

    def _spawn_processing(self, app, ctxs, prefix, sm_layers, suffix):
        """Fan processing out across nested thread groups."""
        if len(suffix) == len(sm_layers):
            app.processing(ctxs[prefix + suffix])
            return
        layer = sm_layers[len(suffix)]
        errors: list[tuple[TaskId, BaseException]] = []

        def body(i):
            try:
                self._spawn_processing(app, ctxs, prefix, sm_layers, suffix + (i,))
            except BaseException as exc:  # noqa: BLE001
                errors.append((prefix + suffix + (i,), exc))
                # wake up siblings stuck at a group barrier
                for ctx in ctxs.values():
                    for _, group, _ in ctx.sm_chain:
                        group.barrier.abort()

        threads = [
            threading.Thread(target=body, args=(i,), name=f"task{prefix + suffix + (i,)}")
            for i in range(layer.parallelism)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            tid, exc = sorted(errors, key=lambda e: (isinstance(e[1], Deadlock), e[0]))[0]
            if isinstance(exc, RunFailure):
                raise exc
            raise RunFailure(tid, exc) from exc


def run(app_factory, stack: LayerStack, trace: bool = False,
        deadlock_timeout: float = 30.0) -> RunReport:
    """Run an application under a layer stack; empty stacks run plain serial."""
    return Runtime(stack, trace=trace, deadlock_timeout=deadlock_timeout).run(app_factory)

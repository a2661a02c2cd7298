"""The block tree: taxonomy, spatial placement, search and per-task specialization.

The domain is tiled by fixed-size data blocks hanging off one joint of the
tree; boundary blocks live on a separate branch so a locality-first search
reaches them last. Virtual blocks (static tables, arithmetic fields,
references) make out-of-domain reads total without owning storage.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

from .errors import (
    CyclicReference,
    InvalidGeometry,
    InvalidRead,
    InvalidSelector,
    NotFound,
)
from .zorder import zorder_index

Address = tuple[int, ...]

# boundary nodes sort after any data block during sibling ordering
BOUNDARY_ZINDEX = 1 << 62
REFERENCE_DEPTH_CAP = 16


class BlockKind(Enum):
    DATA = "Data"
    EMPTY = "Empty"
    BUFFER_ONLY = "BufferOnly"
    STATIC_DATA = "StaticData"
    ARITHMETIC = "Arithmetic"
    REFERENCE = "Reference"


@dataclass(frozen=True)
class Extent:
    """Half-open axis-aligned box [origin, origin + size)."""

    origin: Address
    size: Address

    def contains(self, g: Address) -> bool:
        return all(o <= c < o + s for c, o, s in zip(g, self.origin, self.size))

    @property
    def end(self) -> Address:
        return tuple(o + s for o, s in zip(self.origin, self.size))

    def __str__(self):
        spans = ",".join(
            f"[{o},{o + s})" for o, s in zip(self.origin, self.size)
        )
        return spans


@dataclass
class ConstantField:
    """Arithmetic payload: the same value everywhere."""

    value: float

    def evaluate(self, g: Address) -> float:
        return self.value


@dataclass
class AffineField:
    """Arithmetic payload: offset + sum(coeff[i] * g[i])."""

    coeffs: tuple[float, ...]
    offset: float = 0.0

    def evaluate(self, g: Address) -> float:
        acc = self.offset
        for c, x in zip(self.coeffs, g):
            acc += c * x
        return acc


@dataclass
class StaticTable:
    """StaticData payload: fixed per-address records.

    A bounded table covers exactly its keys; an unbounded one acts as an
    out-of-domain catch-all (missing keys fall back to ``default``).
    """

    table: dict[Address, object]
    default: object | None = None
    bounded: bool = False

    def lookup(self, g: Address):
        if g in self.table:
            return self.table[g]
        if self.default is not None:
            return self.default
        raise InvalidRead(f"static block has no entry for {g}")


@dataclass
class AxisMap:
    """Per-axis affine address transform: g'[i] = scale[i] * g[i] + shift[i]."""

    scale: tuple[int, ...]
    shift: tuple[int, ...]

    def apply(self, g: Address) -> Address:
        return tuple(s * c + t for c, s, t in zip(g, self.scale, self.shift))


@dataclass
class ReferencePayload:
    target: "BlockNode"
    transform: AxisMap


class BlockNode:
    """One node of the tree.

    Only Data blocks carry valid task ids; Data and BufferOnly nodes carry a
    buffer; the remaining kinds synthesize values instead of storing them.
    """

    __slots__ = (
        "kind",
        "extent",
        "outside_domain",
        "payload",
        "is_valid",
        "dm_tid",
        "ch_tid",
        "buffer",
        "zindex",
        "node_id",
        "storage_idx",
        "block_coords",
        "parent",
        "children",
    )

    def __init__(self, kind, extent=None, payload=None, outside_domain=False):
        self.kind = kind
        self.extent = extent
        self.outside_domain = outside_domain
        self.payload = payload
        self.is_valid = kind in (
            BlockKind.DATA,
            BlockKind.STATIC_DATA,
            BlockKind.ARITHMETIC,
            BlockKind.REFERENCE,
        )
        self.dm_tid = None
        self.ch_tid = None
        self.buffer = None
        self.zindex = BOUNDARY_ZINDEX if outside_domain or extent is None else 0
        self.node_id = -1
        self.storage_idx = -1
        self.block_coords = None
        self.parent = None
        self.children = []

    def add_child(self, node: "BlockNode") -> None:
        node.parent = self
        self.children.append(node)

    def covers(self, g: Address, domain: Extent) -> bool:
        """Whether a read of ``g`` can be served from this node."""
        if self.kind is BlockKind.EMPTY:
            return False
        if self.extent is not None:
            return self.extent.contains(g)
        if (
            self.kind is BlockKind.STATIC_DATA
            and isinstance(self.payload, StaticTable)
            and self.payload.bounded
        ):
            return tuple(g) in self.payload.table
        if self.outside_domain:
            return not domain.contains(g)
        return False

    def __repr__(self):
        where = str(self.extent) if self.extent else ("outside" if self.outside_domain else "-")
        return f"<{self.kind.value} {where} z={self.zindex}>"


class Env:
    """Tree of block nodes plus per-task access state.

    One Env instance is shared inside a shared-memory task group; separate
    groups hold independent copies built from the same geometry.
    """

    def __init__(self, domain: Extent, block_size: Address):
        self.domain = domain
        self.block_size = block_size
        self.root = BlockNode(BlockKind.EMPTY)
        self.data_joint = BlockNode(BlockKind.EMPTY)
        self.root.add_child(self.data_joint)
        self.boundary_branch: BlockNode | None = None
        self.nodes: list[BlockNode] = []
        self.data_blocks: list[BlockNode] = []
        self.access_state: dict = {}
        self.specialized_for: frozenset | None = None
        self.tables = None  # kernel-table cache, built lazily
        self.storage = None  # StorageSpec once buffers are attached
        self.pools: list = []
        self.step = 0
        self._register(self.root)
        self._register(self.data_joint)

    def _register(self, node: BlockNode) -> None:
        node.node_id = len(self.nodes)
        self.nodes.append(node)

    def add_data_block(self, extent: Extent, block_coords: Address) -> BlockNode:
        node = BlockNode(BlockKind.DATA, extent=extent)
        node.block_coords = block_coords
        node.zindex = zorder_index(block_coords)
        node.storage_idx = len(self.data_blocks)
        self._register(node)
        self.data_blocks.append(node)
        self.data_joint.add_child(node)
        return node

    def attach_boundary(self, nodes: Iterable[BlockNode]) -> None:
        nodes = list(nodes)
        if not nodes:
            return
        if len(nodes) == 1:
            self.boundary_branch = nodes[0]
        else:
            self.boundary_branch = BlockNode(BlockKind.EMPTY)
            self.boundary_branch.zindex = BOUNDARY_ZINDEX
            self._register(self.boundary_branch)
            for n in nodes:
                self.boundary_branch.add_child(n)
        for n in nodes:
            if n.node_id < 0:
                self._register(n)
        if self.boundary_branch.node_id < 0:
            self._register(self.boundary_branch)
        self.root.add_child(self.boundary_branch)

    def buffered_blocks(self) -> list[BlockNode]:
        """Data and BufferOnly nodes, ascending storage index."""
        return sorted(
            (n for n in self.nodes if n.kind in (BlockKind.DATA, BlockKind.BUFFER_ONLY)),
            key=lambda n: n.storage_idx,
        )

    def dump(self) -> str:
        """Tree as indented text, for debugging and golden-file comparison."""
        lines = []

        def walk(node, depth):
            where = str(node.extent) if node.extent else ("outside" if node.outside_domain else "-")
            z = "-" if node.zindex == BOUNDARY_ZINDEX else str(node.zindex)
            tids = ""
            if node.kind in (BlockKind.DATA, BlockKind.BUFFER_ONLY):
                tids = f" ch={node.ch_tid} dm={node.dm_tid}"
            lines.append(f"{'  ' * depth}{node.kind.value} z={z} extent={where}{tids}")
            for c in node.children:
                walk(c, depth + 1)

        walk(self.root, 0)
        return "\n".join(lines)


def env_build(
    domain_extent: Address,
    block_extent: Address,
    boundary_spec: Iterable[BlockNode] = (),
    joint_plan: Address | None = None,
) -> Env:
    """Build the default tree: one joint holding all data blocks, boundary last.

    ``joint_plan`` optionally groups blocks under extra joints: a tuple giving
    the group size in blocks per axis (e.g. ``(2, 2)`` collects each 2x2
    square of blocks under its own joint).
    """
    if len(domain_extent) != len(block_extent):
        raise InvalidGeometry("domain and block dimensionality differ")
    for d, b in zip(domain_extent, block_extent):
        if b <= 0 or d <= 0 or d % b != 0:
            raise InvalidGeometry(
                f"block extent {block_extent} does not tile domain {domain_extent}"
            )
    domain = Extent(tuple(0 for _ in domain_extent), tuple(domain_extent))
    env = Env(domain, tuple(block_extent))
    counts = tuple(d // b for d, b in zip(domain_extent, block_extent))
    coords = [()]
    for c in reversed(counts):  # last axis varies slowest
        coords = [(i,) + rest for rest in coords for i in range(c)]
    blocks = []
    for bc in coords:
        origin = tuple(i * b for i, b in zip(bc, block_extent))
        blocks.append((zorder_index(bc), bc, origin))
    blocks.sort()
    for _, bc, origin in blocks:
        env.add_data_block(Extent(origin, tuple(block_extent)), bc)
    env.attach_boundary(boundary_spec)
    if joint_plan is not None:
        groups: dict[Address, list[BlockNode]] = {}
        for node in env.data_blocks:
            key = tuple(c // g for c, g in zip(node.block_coords, joint_plan))
            groups.setdefault(key, []).append(node)
        for key in sorted(groups, key=zorder_index):
            env_insert_joint(env, env.data_joint, groups[key])
    return env


def block_contains(b: BlockNode, g: Address) -> bool:
    if b.extent is None:
        raise InvalidRead(f"{b!r} has no placement")
    return b.extent.contains(g)


def local_to_global(b: BlockNode, l: Address) -> Address:
    return tuple(c + o for c, o in zip(l, b.extent.origin))


def global_to_local(b: BlockNode, g: Address) -> Address:
    return tuple(c - o for c, o in zip(g, b.extent.origin))


def _subtree_find(node: BlockNode, g: Address, zref: int, domain: Extent, trace):
    if trace is not None:
        trace.append(node)
    if node.covers(g, domain):
        return node
    for child in sorted(node.children, key=lambda n: (abs(n.zindex - zref), n.zindex)):
        found = _subtree_find(child, g, zref, domain, trace)
        if found is not None:
            return found
    return None


def env_find_block(env: Env, start: BlockNode, g: Address, trace: list | None = None) -> BlockNode:
    """Locate the node covering ``g``, nearest siblings first, boundary last.

    The search tries ``start`` itself, then the siblings of ``start`` (and
    their subtrees) ordered by Z-index distance, then climbs one level and
    repeats. Raises NotFound if nothing covers ``g``.
    """
    zref = start.zindex
    if trace is not None:
        trace.append(start)
    if start.covers(g, env.domain):
        return start
    current = start
    while current.parent is not None:
        parent = current.parent
        siblings = sorted(
            (c for c in parent.children if c is not current),
            key=lambda n: (abs(n.zindex - zref), n.zindex),
        )
        for sib in siblings:
            found = _subtree_find(sib, g, zref, env.domain, trace)
            if found is not None:
                return found
        current = parent
    raise NotFound(f"no node covers {g}")


def env_specialize(env: Env, my_tids) -> Env:
    """Demote data blocks owned by other task groups to invalid buffer-only."""
    my_tids = frozenset(my_tids)
    for node in env.data_blocks:
        if node.ch_tid not in my_tids:
            node.kind = BlockKind.BUFFER_ONLY
            node.is_valid = False
            if node.buffer is not None:
                node.buffer.valid[:] = 0
    env.specialized_for = my_tids
    return env


def resolve_reference(b: BlockNode, g: Address) -> tuple[BlockNode, Address]:
    """Follow a reference chain to its non-reference end."""
    node, addr = b, g
    for _ in range(REFERENCE_DEPTH_CAP):
        if node.kind is not BlockKind.REFERENCE:
            return node, addr
        addr = node.payload.transform.apply(addr)
        node = node.payload.target
    raise CyclicReference(f"reference chain from {b!r} exceeds depth {REFERENCE_DEPTH_CAP}")


def virtual_read(b: BlockNode, g: Address, data_reader: Callable | None = None):
    """Produce the value a virtual block serves at ``g``.

    References redirect through ``data_reader(node, g)`` when they end on a
    buffered block.
    """
    if b.kind is BlockKind.STATIC_DATA:
        return b.payload.lookup(g)
    if b.kind is BlockKind.ARITHMETIC:
        return b.payload.evaluate(g)
    if b.kind is BlockKind.REFERENCE:
        node, addr = resolve_reference(b, g)
        if node.kind in (BlockKind.STATIC_DATA, BlockKind.ARITHMETIC):
            return virtual_read(node, addr)
        if node.kind in (BlockKind.DATA, BlockKind.BUFFER_ONLY):
            if data_reader is None:
                raise InvalidRead("reference ends on a buffered block but no reader given")
            return data_reader(node, addr)
        raise InvalidRead(f"reference ends on unreadable node {node!r}")
    raise InvalidRead(f"{b!r} is not a virtual block")


def env_insert_joint(env: Env, parent_joint: BlockNode, selector) -> BlockNode | None:
    """Re-parent selected children of a joint under a new empty joint."""
    if callable(selector):
        selected = [c for c in parent_joint.children if selector(c)]
    else:
        selected = list(selector)
    if not selected:
        return None
    for node in selected:
        if node.parent is not parent_joint:
            raise InvalidSelector(f"{node!r} is not a child of the given joint")
    joint = BlockNode(BlockKind.EMPTY)
    env._register(joint)
    for node in selected:
        parent_joint.children.remove(node)
        joint.add_child(node)
    joint.zindex = min(c.zindex for c in joint.children)
    parent_joint.add_child(joint)
    parent_joint.children.sort(key=lambda n: n.zindex)
    return joint


# -- boundary node constructors -------------------------------------------


def constant_boundary(value: float) -> BlockNode:
    """Arithmetic block serving one value everywhere outside the domain."""
    return BlockNode(
        BlockKind.ARITHMETIC, payload=ConstantField(value), outside_domain=True
    )


def affine_boundary(coeffs, offset=0.0) -> BlockNode:
    return BlockNode(
        BlockKind.ARITHMETIC, payload=AffineField(tuple(coeffs), offset), outside_domain=True
    )


def static_boundary(
    table: dict, default=None, extent: Extent | None = None, bounded: bool = False
) -> BlockNode:
    node = BlockNode(
        BlockKind.STATIC_DATA,
        extent=extent,
        payload=StaticTable(table, default, bounded),
        outside_domain=extent is None and not bounded,
    )
    return node



def reference_block(extent: Extent, target: BlockNode, transform: AxisMap) -> BlockNode:
    return BlockNode(
        BlockKind.REFERENCE, extent=extent, payload=ReferencePayload(target, transform)
    )

"""Flat lookup tables over an env, shared by both kernel implementations.

Node kinds, constant boundary values, block geometry and per-page views are
packed into arrays once per env; only slot indices and validity flags change
between steps, and those live in arrays the buffers themselves mutate.
"""

from __future__ import annotations

import numpy as np

from ..envtree import BlockKind, ConstantField

# node codes used by the kernels
NODE_OTHER = 0
NODE_BUFFERED = 1
NODE_CONST = 2
NODE_VIRTUAL = 3


class EnvTables:
    def __init__(self, env):
        nodes = env.nodes
        n = len(nodes)
        self.env = env
        self.kind_code = np.zeros(n, dtype=np.uint8)
        self.const_val = np.zeros(n, dtype=np.float64)
        self.storage_of = np.full(n, -1, dtype=np.int32)
        for node in nodes:
            if node.kind in (BlockKind.DATA, BlockKind.BUFFER_ONLY):
                self.kind_code[node.node_id] = NODE_BUFFERED
                self.storage_of[node.node_id] = node.storage_idx
            elif (
                node.kind is BlockKind.ARITHMETIC
                and isinstance(node.payload, ConstantField)
                and isinstance(node.payload.value, (int, float))
            ):
                self.kind_code[node.node_id] = NODE_CONST
                self.const_val[node.node_id] = node.payload.value
            elif node.kind in (
                BlockKind.STATIC_DATA,
                BlockKind.ARITHMETIC,
                BlockKind.REFERENCE,
            ):
                self.kind_code[node.node_id] = NODE_VIRTUAL

        blocks = env.data_blocks
        nb = len(blocks)
        self.n_blocks = nb
        self.node_of = np.array([b.node_id for b in blocks], dtype=np.int32)
        self.origin = np.array([b.extent.origin for b in blocks], dtype=np.int64)
        self.size = np.array([b.extent.size for b in blocks], dtype=np.int64)
        self.buffers = [b.buffer for b in blocks]
        self.n_slots = self.buffers[0].n_slots if nb else 0
        self.n_pages = self.buffers[0].n_pages if nb else 0
        self.items_per_page = env.storage.items_per_page
        self.item_bytes = env.storage.item_bytes
        # raw page views, [block][slot][page]; None marks a multi-extent page
        self.page_views = [
            [[p.view for p in slot_pages] for slot_pages in buf.slots]
            for buf in self.buffers
        ]
        self.valid = [buf.valid for buf in self.buffers]
        self.contiguous = all(
            v is not None
            for per_block in self.page_views
            for per_slot in per_block
            for v in per_slot
        )


def env_tables(env) -> EnvTables:
    if env.tables is None:
        env.tables = EnvTables(env)
    return env.tables

# cython: language_level=3
"""Compiled kernel core.

Mirrors pykernels exactly: same float operations in the same order, same
access ordinals, same counters. Slow paths (tree search, virtual blocks,
missing pages) call back into the access layer; everything else runs without
the GIL so thread layers can overlap block updates.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport NAN, sqrt
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy

cnp.import_array()

from ..errors import BucketOverflow
from .tables import NODE_CONST, NODE_VIRTUAL, env_tables

cdef int MEMO_EMPTY = 0
cdef int MEMO_INBLOCK = 1
cdef int MEMO_DATA = 2
cdef int MEMO_VIRTUAL = 3

cdef int C_NODE_CONST = NODE_CONST
cdef int C_NODE_VIRTUAL = NODE_VIRTUAL

# particle bucket layout (must match BUCKET_DTYPE)
cdef int BUCKET_SLOTS = 16
cdef int P_STRIDE = 80          # pid + 3 vec3
cdef int B_COUNT_OFF = 0
cdef int B_PARTS_OFF = 8
cdef int P_POS_OFF = 8
cdef int P_VEL_OFF = 32
cdef int P_ACC_OFF = 56
cdef int BUCKET_BYTES = 8 + BUCKET_SLOTS * P_STRIDE


@cython.final
cdef class KernelCtx:
    """Per-task snapshot of the env: flat pointers plus callback handles."""

    cdef object ctx, ta, nodes, tables
    cdef list buffers
    cdef object cur_memo
    cdef int nb, n_slots, n_pages, ipp, item_bytes, n_nodes
    cdef int ipp_shift
    cdef long long ipp_mask
    cdef cnp.uint8_t[::1] kind_code
    cdef double[::1] const_val
    cdef cnp.int32_t[::1] storage_of
    cdef cnp.int64_t[:, ::1] origin
    cdef cnp.int64_t[:, ::1] size
    cdef cnp.int32_t[::1] node_of
    cdef char** page_ptr
    cdef cnp.uint8_t** valid_ptr
    cdef cnp.uint8_t** dirty_ptr
    cdef int* rs
    cdef int* ws
    # bound per block step
    cdef bint memo_on
    cdef cnp.uint8_t[::1] mstate
    cdef cnp.int32_t[::1] mtgt
    cdef cnp.int64_t[::1] moff
    cdef long long cur_seq, cur_hits
    cdef int cur_start_nid, cur_sidx
    # scratch: 9 virtual-item slots plus one all-zero poison item
    cdef object scratch_arr, zero_arr, dummy_state, dummy_tgt, dummy_off
    cdef char* scratch
    cdef char* zero_item

    def __cinit__(self, ctx):
        t = env_tables(ctx.env)
        if not t.contiguous:
            raise RuntimeError(
                "compiled kernels need single-extent pages; use the python impl"
            )
        self.ctx = ctx
        self.ta = ctx.access
        self.ta._frozen_capacity = True
        self.nodes = ctx.env.nodes
        self.tables = t
        self.buffers = list(t.buffers)
        self.nb = t.n_blocks
        self.n_slots = t.n_slots
        self.n_pages = t.n_pages
        self.ipp = t.items_per_page
        self.ipp_shift = -1
        if self.ipp and (self.ipp & (self.ipp - 1)) == 0:
            self.ipp_shift = self.ipp.bit_length() - 1
        self.ipp_mask = self.ipp - 1
        self.item_bytes = t.item_bytes
        self.n_nodes = len(t.kind_code)
        self.kind_code = t.kind_code
        self.const_val = t.const_val
        self.storage_of = t.storage_of
        self.origin = t.origin
        self.size = t.size
        self.node_of = t.node_of

        cdef int b, s, p
        self.page_ptr = <char**> malloc(self.nb * self.n_slots * self.n_pages * sizeof(char*))
        self.valid_ptr = <cnp.uint8_t**> malloc(self.nb * self.n_slots * sizeof(cnp.uint8_t*))
        self.dirty_ptr = <cnp.uint8_t**> malloc(self.nb * self.n_slots * sizeof(cnp.uint8_t*))
        self.rs = <int*> malloc(self.nb * sizeof(int))
        self.ws = <int*> malloc(self.nb * sizeof(int))
        if not (self.page_ptr and self.valid_ptr and self.dirty_ptr and self.rs and self.ws):
            raise MemoryError
        for b in range(self.nb):
            buf = self.buffers[b]
            valid = buf.valid
            dirty = buf.dirty
            for s in range(self.n_slots):
                self.valid_ptr[b * self.n_slots + s] = (
                    <cnp.uint8_t*> cnp.PyArray_DATA(valid) + s * self.n_pages
                )
                self.dirty_ptr[b * self.n_slots + s] = (
                    <cnp.uint8_t*> cnp.PyArray_DATA(dirty) + s * self.n_pages
                )
                views = t.page_views[b][s]
                for p in range(self.n_pages):
                    self.page_ptr[(b * self.n_slots + s) * self.n_pages + p] = (
                        <char*> cnp.PyArray_DATA(views[p])
                    )
        self.scratch_arr = np.zeros(9 * self.item_bytes, dtype=np.uint8)
        self.zero_arr = np.zeros(self.item_bytes, dtype=np.uint8)
        self.scratch = <char*> cnp.PyArray_DATA(self.scratch_arr)
        self.zero_item = <char*> cnp.PyArray_DATA(self.zero_arr)
        self.dummy_state = np.zeros(1, dtype=np.uint8)
        self.dummy_tgt = np.zeros(1, dtype=np.int32)
        self.dummy_off = np.zeros(1, dtype=np.int64)
        self.cur_memo = None

    def __dealloc__(self):
        free(self.page_ptr)
        free(self.valid_ptr)
        free(self.dirty_ptr)
        free(self.rs)
        free(self.ws)

    # -- per-step binding (GIL held) --------------------------------------

    cdef void _bind(self, object block) except *:
        cdef int b
        for b in range(self.nb):
            buf = self.buffers[b]
            self.rs[b] = buf.read_slot
            self.ws[b] = buf.write_slot
        ta = self.ta
        self.memo_on = 1 if ta.memo_enabled else 0
        if self.memo_on:
            memo = ta.memo_for(block)
            self.cur_memo = memo
            self.mstate = memo.state
            self.mtgt = memo.target
            self.moff = memo.offset
        else:
            self.cur_memo = None
            self.mstate = self.dummy_state
            self.mtgt = self.dummy_tgt
            self.moff = self.dummy_off
        self.cur_seq = 0
        self.cur_hits = 0

    cdef void _unbind(self) except *:
        if self.cur_hits:
            self.ta.counters.mmat_hits += self.cur_hits
        self.cur_memo = None

    # -- slow paths (take the GIL) -----------------------------------------

    cdef int _resolve_slow(self, long long s, long long gx, long long gy,
                           int* tgt, long long* off) except -2 with gil:
        state, t, o = self.ta.resolve(
            self.nodes[self.cur_start_nid], (gx, gy),
            self.cur_memo, s,
        )
        tgt[0] = t
        off[0] = o
        return state

    cdef void _record_missing(self, int tgt, long long page) except * with gil:
        self.ta.record_missing(tgt, page)

    cdef double _virtual_scalar(self, int tgt, long long gx, long long gy) except? -1e308 with gil:
        return self.ta.virtual_scalar(tgt, (gx, gy))

    cdef char* _virtual_item(self, int tgt, long long gx, long long gy,
                             int slot) except? NULL with gil:
        from ..envtree import virtual_read

        item = virtual_read(
            self.nodes[tgt], (gx, gy), data_reader=self.ta._virtual_data_reader
        )
        raw = item.tobytes()
        if len(raw) != self.item_bytes:
            raise ValueError("virtual item size mismatch")
        cdef const char* src = raw
        memcpy(self.scratch + slot * self.item_bytes, src, self.item_bytes)
        return self.scratch + slot * self.item_bytes

    # -- resolution --------------------------------------------------------

    cdef int _resolution(self, long long gx, long long gy,
                         int* tgt, long long* off) except -2 nogil:
        """Memo hit or tree search for the next access ordinal."""
        cdef long long s = self.cur_seq
        self.cur_seq = s + 1
        cdef int state
        if self.memo_on and s < <long long> self.mstate.shape[0] and self.mstate[s] != MEMO_EMPTY:
            self.cur_hits += 1
            tgt[0] = self.mtgt[s]
            off[0] = self.moff[s]
            return self.mstate[s]
        return self._resolve_slow(s, gx, gy, tgt, off)

    # -- direct storage access ----------------------------------------------

    cdef inline char* _item_at(self, int sidx, int slot, long long off) noexcept nogil:
        cdef long long page, rem
        if self.ipp_shift >= 0:
            page = off >> self.ipp_shift
            rem = off & self.ipp_mask
        else:
            page = off / self.ipp
            rem = off % self.ipp
        return (
            self.page_ptr[(sidx * self.n_slots + slot) * self.n_pages + page]
            + rem * self.item_bytes
        )

    cdef char* _read_item(self, int state, int tgt, long long off,
                          long long gx, long long gy, int scratch_slot) except? NULL nogil:
        """Pointer to the resolved read item; NULL means poisoned (missing)."""
        cdef int sidx, slot
        cdef long long page
        if state == MEMO_VIRTUAL:
            return self._virtual_item(tgt, gx, gy, scratch_slot)
        sidx = self.storage_of[tgt]
        slot = self.rs[sidx]
        page = off / self.ipp
        if self.valid_ptr[sidx * self.n_slots + slot][page] == 0:
            self._record_missing(tgt, page)
            return NULL
        return self._item_at(sidx, slot, off)

    cdef double _read_scalar(self, int state, int tgt, long long off,
                             long long gx, long long gy) except? -1e308 nogil:
        cdef int sidx, slot
        cdef long long page
        if state == MEMO_VIRTUAL:
            if self.kind_code[tgt] == C_NODE_CONST:
                return self.const_val[tgt]
            return self._virtual_scalar(tgt, gx, gy)
        sidx = self.storage_of[tgt]
        slot = self.rs[sidx]
        page = off / self.ipp
        if self.valid_ptr[sidx * self.n_slots + slot][page] == 0:
            self._record_missing(tgt, page)
            return NAN
        return (<double*> self._item_at(sidx, slot, off))[0]

    cdef double _get_scalar(self, long long gx, long long gy) except? -1e308 nogil:
        cdef int tgt
        cdef long long off
        cdef int state = self._resolution(gx, gy, &tgt, &off)
        return self._read_scalar(state, tgt, off, gx, gy)


def get_kernel_context(ctx):
    kctx = getattr(ctx, "_c_kctx", None)
    if kctx is None:
        kctx = KernelCtx(ctx)
        ctx._c_kctx = kctx
    return kctx


def sgrid_block_step(KernelCtx k not None, block, double alpha, double beta):
    if k.item_bytes != 8:
        raise ValueError("sgrid kernels need plain float64 items")
    cdef int sidx = block.storage_idx
    k._bind(block)
    k.cur_sidx = sidx
    k.cur_start_nid = k.node_of[sidx]
    cdef long long bx = k.size[sidx, 0]
    cdef long long by = k.size[sidx, 1]
    cdef long long ox = k.origin[sidx, 0]
    cdef long long oy = k.origin[sidx, 1]
    cdef int rs = k.rs[sidx]
    cdef int ws = k.ws[sidx]
    cdef long long i, j, off
    cdef double e, e_n, e_w, e_e, e_s, ans
    cdef char* wp
    cdef long long page
    try:
        with nogil:
            for j in range(by):
                for i in range(bx):
                    if j > 0:
                        e_n = (<double*> k._item_at(sidx, rs, (j - 1) * bx + i))[0]
                    else:
                        e_n = k._get_scalar(ox + i, oy + j - 1)
                    if i > 0:
                        e_w = (<double*> k._item_at(sidx, rs, j * bx + i - 1))[0]
                    else:
                        e_w = k._get_scalar(ox + i - 1, oy + j)
                    e = (<double*> k._item_at(sidx, rs, j * bx + i))[0]
                    if i + 1 < bx:
                        e_e = (<double*> k._item_at(sidx, rs, j * bx + i + 1))[0]
                    else:
                        e_e = k._get_scalar(ox + i + 1, oy + j)
                    if j + 1 < by:
                        e_s = (<double*> k._item_at(sidx, rs, (j + 1) * bx + i))[0]
                    else:
                        e_s = k._get_scalar(ox + i, oy + j + 1)
                    ans = alpha * e + beta * (((e_e + e_w) + e_s) + e_n)
                    off = j * bx + i
                    page = off / k.ipp
                    (<double*> k._item_at(sidx, ws, off))[0] = ans
                    k.dirty_ptr[sidx * k.n_slots + ws][page] = 1
    finally:
        k._unbind()


def usgrid_block_step(KernelCtx k not None, block, double alpha, double beta):
    if k.item_bytes != 40:
        raise ValueError("usgrid kernels need the v + 4 address item layout")
    cdef int sidx = block.storage_idx
    k._bind(block)
    k.cur_sidx = sidx
    k.cur_start_nid = k.node_of[sidx]
    cdef long long bx = k.size[sidx, 0]
    cdef long long by = k.size[sidx, 1]
    cdef long long ox = k.origin[sidx, 0]
    cdef long long oy = k.origin[sidx, 1]
    cdef int ws = k.ws[sidx]
    cdef long long i, j, off, page
    cdef double e, e_n, e_w, e_e, e_s, ans
    cdef char* item
    cdef char* wp
    cdef cnp.int32_t nbr[8]
    cdef int state, tgt, t
    cdef long long ioff
    try:
        with nogil:
            for j in range(by):
                for i in range(bx):
                    state = k._resolution(ox + i, oy + j, &tgt, &ioff)
                    item = k._read_item(state, tgt, ioff, ox + i, oy + j, 0)
                    if item != NULL:
                        e = (<double*> item)[0]
                        memcpy(nbr, item + 8, 32)
                    else:
                        e = NAN
                        for t in range(8):
                            nbr[t] = 0
                    e_n = k._get_scalar(nbr[0], nbr[1])
                    e_w = k._get_scalar(nbr[2], nbr[3])
                    e_e = k._get_scalar(nbr[4], nbr[5])
                    e_s = k._get_scalar(nbr[6], nbr[7])
                    ans = alpha * e + beta * (((e_e + e_w) + e_s) + e_n)
                    off = j * bx + i
                    page = off / k.ipp
                    wp = k._item_at(sidx, ws, off)
                    (<double*> wp)[0] = ans
                    memcpy(wp + 8, nbr, 32)
                    k.dirty_ptr[sidx * k.n_slots + ws][page] = 1
    finally:
        k._unbind()


def particle_block_step(KernelCtx k not None, block, double dt, double radius):
    if k.item_bytes != BUCKET_BYTES:
        raise ValueError("particle kernels need the 16-slot bucket item layout")
    cdef int sidx = block.storage_idx
    k._bind(block)
    k.cur_sidx = sidx
    k.cur_start_nid = k.node_of[sidx]
    cdef long long bx = k.size[sidx, 0]
    cdef long long by = k.size[sidx, 1]
    cdef long long ox = k.origin[sidx, 0]
    cdef long long oy = k.origin[sidx, 1]
    cdef int rs = k.rs[sidx]
    cdef int ws = k.ws[sidx]
    cdef long long ib, jb, off, page
    cdef long long ni, nj
    cdef int c, a, b, m, n_own, state, tgt, scratch
    cdef long long ioff
    cdef char* nb_ptr[9]
    cdef char* own_r
    cdef char* own_w
    cdef char* pa
    cdef char* pb
    cdef char* sa
    cdef double pax, pay, paz, fx, fy, fz, dx, dy, dz, r, t, s
    cdef double vx, vy, vz, px, py, pz
    cdef long long overflow_pid = -1
    cdef long long ogx = 0, ogy = 0
    cdef double opx = 0, opy = 0
    try:
        with nogil:
            for jb in range(by):
                for ib in range(bx):
                    off = jb * bx + ib
                    own_r = k._item_at(sidx, rs, off)
                    own_w = k._item_at(sidx, ws, off)
                    scratch = 0
                    c = 0
                    for nj in range(jb - 1, jb + 2):
                        for ni in range(ib - 1, ib + 2):
                            if 0 <= ni < bx and 0 <= nj < by:
                                nb_ptr[c] = k._item_at(sidx, rs, nj * bx + ni)
                            else:
                                state = k._resolution(ox + ni, oy + nj, &tgt, &ioff)
                                nb_ptr[c] = k._read_item(
                                    state, tgt, ioff, ox + ni, oy + nj, scratch
                                )
                                if nb_ptr[c] == NULL:
                                    nb_ptr[c] = k.zero_item
                                elif state == MEMO_VIRTUAL:
                                    scratch += 1
                            c += 1
                    n_own = <int> (<long long*> own_r)[0]
                    (<long long*> own_w)[0] = n_own
                    for a in range(n_own):
                        pa = own_r + B_PARTS_OFF + a * P_STRIDE
                        pax = (<double*> (pa + P_POS_OFF))[0]
                        pay = (<double*> (pa + P_POS_OFF))[1]
                        paz = (<double*> (pa + P_POS_OFF))[2]
                        fx = 0.0
                        fy = 0.0
                        fz = 0.0
                        for c in range(9):
                            m = <int> (<long long*> nb_ptr[c])[0]
                            for b in range(m):
                                pb = nb_ptr[c] + B_PARTS_OFF + b * P_STRIDE
                                dx = pax - (<double*> (pb + P_POS_OFF))[0]
                                dy = pay - (<double*> (pb + P_POS_OFF))[1]
                                dz = paz - (<double*> (pb + P_POS_OFF))[2]
                                r = sqrt((dx * dx + dy * dy) + dz * dz)
                                if 0.0 < r < radius:
                                    t = 1.0 - r / radius
                                    s = (t * t) / r
                                    fx = fx + dx * s
                                    fy = fy + dy * s
                                    fz = fz + dz * s
                                else:
                                    fx = fx + 0.0
                                    fy = fy + 0.0
                                    fz = fz + 0.0
                        vx = (<double*> (pa + P_VEL_OFF))[0] + fx * dt
                        vy = (<double*> (pa + P_VEL_OFF))[1] + fy * dt
                        vz = (<double*> (pa + P_VEL_OFF))[2] + fz * dt
                        px = pax + vx * dt
                        py = pay + vy * dt
                        pz = paz + vz * dt
                        if not (ox + ib <= px < ox + ib + 1.0 and oy + jb <= py < oy + jb + 1.0):
                            overflow_pid = (<long long*> pa)[0]
                            ogx = ox + ib
                            ogy = oy + jb
                            opx = px
                            opy = py
                            break
                        sa = own_w + B_PARTS_OFF + a * P_STRIDE
                        (<long long*> sa)[0] = (<long long*> pa)[0]
                        (<double*> (sa + P_POS_OFF))[0] = px
                        (<double*> (sa + P_POS_OFF))[1] = py
                        (<double*> (sa + P_POS_OFF))[2] = pz
                        (<double*> (sa + P_VEL_OFF))[0] = vx
                        (<double*> (sa + P_VEL_OFF))[1] = vy
                        (<double*> (sa + P_VEL_OFF))[2] = vz
                        (<double*> (sa + P_ACC_OFF))[0] = fx
                        (<double*> (sa + P_ACC_OFF))[1] = fy
                        (<double*> (sa + P_ACC_OFF))[2] = fz
                    if overflow_pid >= 0:
                        break
                    for a in range(n_own, BUCKET_SLOTS):
                        memcpy(
                            own_w + B_PARTS_OFF + a * P_STRIDE,
                            own_r + B_PARTS_OFF + a * P_STRIDE,
                            P_STRIDE,
                        )
                    page = off / k.ipp
                    k.dirty_ptr[sidx * k.n_slots + ws][page] = 1
                if overflow_pid >= 0:
                    break
    finally:
        k._unbind()
    if overflow_pid >= 0:
        raise BucketOverflow(
            f"particle {overflow_pid} left bucket ({ogx},{ogy}): pos ({opx:.6g},{opy:.6g})"
        )

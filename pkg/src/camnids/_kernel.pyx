# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled cycle loop; must stay cycle-for-cycle identical to engine.Engine."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int32_t i32
ctypedef cnp.int64_t i64
ctypedef cnp.uint16_t u16
ctypedef cnp.uint8_t u8

# global counter indices (engine.GLOBAL_COUNTERS)
cdef enum:
    G_CYCLES = 0
    G_INPUT_CYCLES = 1
    G_BYTES_A = 2
    G_GATED_BYTES = 4
    G_GATED_CYCLES = 5
    G_STALL = 6
    G_DROPPED = 7
    G_P2_BUSY = 8
    G_P2_SEARCH_A = 9
    G_ROUTES = 11
    G_CLOCK = 12
    G_S1_READS = 13
    G_S1_BITS = 14
    G_REQUESTS = 15
    G_TERM_EV = 16
    G_P2_EV = 17
    N_GLOBAL = 18
    N_BLOCK = 7
    MASK11 = 0x7FF


def run(const i32[:, ::1] stage1, const u16[:, ::1] pe_code, const i32[:, :, ::1] pe_e,
        const u16[:, :, ::1] bank_code, const i32[:, :, ::1] bank_meta, const u16[::1] book,
        const u8[::1] sa, const u8[::1] sb, int nlanes, int D, int W, int gating, int stall,
        int qd, int lat, int range_bits, int p2_bits):
    cdef int P = pe_code.shape[0]
    cdef int B = bank_code.shape[0]
    cdef i64[::1] g = np.zeros(N_GLOBAL, dtype=np.int64)
    cdef i64[:, ::1] pst = np.zeros((P, N_BLOCK), dtype=np.int64)
    cdef i64[:, ::1] bst = np.zeros((B, N_BLOCK), dtype=np.int64)
    cdef i32[:, ::1] rv = np.zeros((2, D + 2), dtype=np.int32)   # valid
    cdef i32[:, ::1] rpe = np.zeros((2, D + 2), dtype=np.int32)
    cdef i32[:, ::1] rdn = np.zeros((2, D + 2), dtype=np.int32)
    cdef i32[:, ::1] rup = np.zeros((2, D + 2), dtype=np.int32)
    cdef i64[:, ::1] rst = np.zeros((2, D + 2), dtype=np.int64)
    # per-lane FIFO ring: bank, dn, up, window_start, start
    cdef i64[:, :, ::1] fq = np.zeros((2, qd, 5), dtype=np.int64)
    cdef int[2] fhead
    cdef int[2] fcount
    cdef i64[2] pos
    cdef i64[2] gate
    cdef i64[2] n
    cdef const u8[::1] data
    cdef i64[::1] win = np.zeros(W, dtype=np.int64)
    cdef u8[::1] touched = np.zeros(max(P, 1), dtype=np.uint8)
    cdef int ntouched

    cdef i64 cycle = 0
    cdef int p2_active = 0, p2_lane = 0, p2_bank = 0, p2_dn = 0, p2_up = 0
    cdef i64 p2_ws = 0, p2_start = 0, p2_end = 0
    cdef int lane, d, r, pe, dn, up, hit, flags, target, emit, i, j, k, slot, ok
    cdef int any_read, any_gated, any_stall, any_consumed, busy, spid, slen
    cdef unsigned int code, stored, mismatch
    cdef i64 t, start, end, last, resume, ws
    events = []
    issues = []

    fhead[0] = fhead[1] = 0
    fcount[0] = fcount[1] = 0
    pos[0] = pos[1] = 0
    gate[0] = gate[1] = 0
    n[0] = sa.shape[0]
    n[1] = sb.shape[0] if nlanes > 1 else 0

    while True:
        if not p2_active and pos[0] >= n[0] and fcount[0] == 0 and pos[1] >= n[1] and fcount[1] == 0:
            break

        # 1. arbiter
        if not p2_active:
            for lane in range(nlanes):
                if fcount[lane] > 0:
                    i = fhead[lane]
                    p2_bank = <int>fq[lane, i, 0]
                    p2_dn = <int>fq[lane, i, 1]
                    p2_up = <int>fq[lane, i, 2]
                    p2_ws = fq[lane, i, 3]
                    p2_start = fq[lane, i, 4]
                    fhead[lane] = (i + 1) % qd
                    fcount[lane] -= 1
                    p2_active = 1
                    p2_lane = lane
                    p2_end = cycle + lat - 1
                    issues.append((cycle, lane, p2_start))
                    g[G_P2_SEARCH_A + lane] += 1
                    break
        busy = p2_active

        # 2. input
        any_read = any_gated = any_stall = any_consumed = 0
        ntouched = 0
        for lane in range(nlanes):
            if pos[lane] >= n[lane]:
                continue
            if stall and fcount[lane] >= qd:
                any_stall = 1
                continue
            any_consumed = 1
            t = pos[lane]
            pos[lane] += 1
            g[G_BYTES_A + lane] += 1
            if t < gate[lane]:
                g[G_GATED_BYTES] += 1
                any_gated = 1
                continue
            any_read = 1
            data = sa if lane == 0 else sb
            code = book[data[t]]
            d = D
            while d >= 1:
                hit = 0
                if d >= 2:
                    if rv[lane, d]:
                        rv[lane, d] = 0
                        pe = rpe[lane, d]
                        dn = rdn[lane, d]
                        up = rup[lane, d]
                        start = rst[lane, d]
                        if not touched[pe]:
                            touched[pe] = 1
                            ntouched += 1
                        pst[pe, lane] += 1
                        pst[pe, 2] += up - dn + 1
                        pst[pe, 3] += (up - dn + 1) * 11
                        pst[pe, 4] += (up + 8) // 8 - dn // 8
                        for r in range(dn, up + 1):
                            stored = pe_code[pe, r]
                            if lane == 0:
                                mismatch = stored & ~code & MASK11
                            else:
                                mismatch = code & ~stored & MASK11
                            if mismatch == 0:
                                hit = 1
                                pst[pe, 5] += range_bits
                                pst[pe, 6] += 1
                                flags = pe_e[pe, r, 0]
                                target = pe_e[pe, r, 1]
                                dn = pe_e[pe, r, 2]
                                up = pe_e[pe, r, 3]
                                emit = pe_e[pe, r, 4]
                                break
                else:
                    g[G_S1_READS] += 1
                    g[G_S1_BITS] += range_bits
                    flags = stage1[data[t], 0]
                    if flags != 0:
                        hit = 1
                        target = stage1[data[t], 1]
                        dn = stage1[data[t], 2]
                        up = stage1[data[t], 3]
                        emit = stage1[data[t], 4]
                        start = t
                if hit:
                    if flags & 4:
                        events.append((cycle, lane, emit, start, t))
                        g[G_TERM_EV] += 1
                    if flags & 1:
                        g[G_ROUTES] += 1
                        rv[lane, d + 1] = 1
                        rpe[lane, d + 1] = target
                        rdn[lane, d + 1] = dn
                        rup[lane, d + 1] = up
                        rst[lane, d + 1] = start
                    elif flags & 2:
                        g[G_ROUTES] += 1
                        g[G_REQUESTS] += 1
                        if fcount[lane] >= qd:
                            g[G_DROPPED] += 1
                        else:
                            i = (fhead[lane] + fcount[lane]) % qd
                            fq[lane, i, 0] = target
                            fq[lane, i, 1] = dn
                            fq[lane, i, 2] = up
                            fq[lane, i, 3] = t + 1
                            fq[lane, i, 4] = start
                            fcount[lane] += 1
                d -= 1

        if any_consumed:
            g[G_INPUT_CYCLES] += 1
        if any_stall:
            g[G_STALL] += 1
        if any_gated:
            g[G_GATED_CYCLES] += 1
        if busy:
            g[G_P2_BUSY] += 1
        g[G_CLOCK] += any_read + ntouched + busy
        if ntouched:
            for pe in range(P):
                touched[pe] = 0

        # 3. completion
        if p2_active and p2_end == cycle:
            p2_active = 0
            lane = p2_lane
            data = sa if lane == 0 else sb
            ws = p2_ws
            for j in range(W):
                if ws + j < n[lane]:
                    win[j] = book[data[ws + j]]
                else:
                    win[j] = 0
            bst[p2_bank, lane] += 1
            bst[p2_bank, 2] += p2_up - p2_dn + 1
            bst[p2_bank, 3] += (p2_up - p2_dn + 1) * W * 11
            bst[p2_bank, 4] += (p2_up + 8) // 8 - p2_dn // 8
            last = -1
            for r in range(p2_dn, p2_up + 1):
                ok = 1
                for slot in range(W):
                    if bank_code[p2_bank, r, slot] & ~win[slot] & MASK11:
                        ok = 0
                        break
                if ok:
                    bst[p2_bank, 5] += p2_bits
                    bst[p2_bank, 6] += 1
                    spid = bank_meta[p2_bank, r, 0]
                    slen = bank_meta[p2_bank, r, 1]
                    end = ws + slen - 1
                    if end < n[lane]:
                        events.append((cycle, lane, spid, p2_start, end))
                        g[G_P2_EV] += 1
                        if end > last:
                            last = end
            if gating and last >= 0:
                resume = last + 1
                for d in range(D + 2):
                    if rv[lane, d] and rst[lane, d] < resume:
                        rv[lane, d] = 0
                # drop queued requests that start inside the match, keep order
                k = 0
                for j in range(fcount[lane]):
                    i = (fhead[lane] + j) % qd
                    if fq[lane, i, 4] >= resume:
                        r = (fhead[lane] + k) % qd
                        if r != i:
                            fq[lane, r, 0] = fq[lane, i, 0]
                            fq[lane, r, 1] = fq[lane, i, 1]
                            fq[lane, r, 2] = fq[lane, i, 2]
                            fq[lane, r, 3] = fq[lane, i, 3]
                            fq[lane, r, 4] = fq[lane, i, 4]
                        k += 1
                fcount[lane] = k
                if resume > gate[lane]:
                    gate[lane] = resume

        g[G_CYCLES] += 1
        cycle += 1

    return events, np.asarray(g), np.asarray(pst), np.asarray(bst), issues

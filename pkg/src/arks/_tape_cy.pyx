# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tape evaluator.

Mirrors ``_tape_py`` instruction for instruction; opcode values must match
``_ops.py``.  All node buffers live in one contiguous value (and gradient)
array addressed through per-node offsets, so the dispatch loop runs
without any per-node Python object traffic -- that overhead dominates at
the small tensor shapes this package trains on.
"""

from libc.math cimport exp as c_exp, log as c_log, expm1 as c_expm1, fabs

NAME = "cython"
PACKED = True

cdef enum:
    OP_LEAF = 0
    OP_CONST = 1
    OP_ADD = 2
    OP_MUL = 3
    OP_MATMUL = 4
    OP_EXP = 5
    OP_LOG = 6
    OP_NEG = 7
    OP_SUM = 8
    OP_MEAN = 9
    OP_ELU = 10
    OP_RELU = 11
    OP_XENT = 12
    OP_SQNORM = 13
    OP_L1NORM = 14
    OP_SCALE = 15


def run_forward(int[::1] ops, int[::1] ia, int[::1] ib, int[::1] iaux,
                int[:, ::1] mm, double[::1] faux, long long[::1] off,
                long long[::1] ln, double[::1] buf, int out_idx):
    cdef int i, op, m, k, n, r, c
    cdef long long j, na, nb, oa, ob, oo
    cdef double acc, hi, s
    for i in range(out_idx + 1):
        op = ops[i]
        if op == OP_LEAF or op == OP_CONST:
            continue
        oa = off[ia[i]]
        na = ln[ia[i]]
        oo = off[i]
        if op == OP_ADD:
            ob = off[ib[i]]
            nb = ln[ib[i]]
            if na == nb:
                for j in range(na):
                    buf[oo + j] = buf[oa + j] + buf[ob + j]
            elif na == 1:
                for j in range(nb):
                    buf[oo + j] = buf[oa] + buf[ob + j]
            else:
                for j in range(na):
                    buf[oo + j] = buf[oa + j] + buf[ob]
        elif op == OP_MUL:
            ob = off[ib[i]]
            nb = ln[ib[i]]
            if na == nb:
                for j in range(na):
                    buf[oo + j] = buf[oa + j] * buf[ob + j]
            elif na == 1:
                for j in range(nb):
                    buf[oo + j] = buf[oa] * buf[ob + j]
            else:
                for j in range(na):
                    buf[oo + j] = buf[oa + j] * buf[ob]
        elif op == OP_MATMUL:
            ob = off[ib[i]]
            m = mm[i, 0]
            k = mm[i, 1]
            n = mm[i, 2]
            if n == 0:
                for r in range(m):
                    acc = 0.0
                    for j in range(k):
                        acc += buf[oa + r * k + j] * buf[ob + j]
                    buf[oo + r] = acc
            else:
                for r in range(m):
                    for c in range(n):
                        acc = 0.0
                        for j in range(k):
                            acc += buf[oa + r * k + j] * buf[ob + j * n + c]
                        buf[oo + r * n + c] = acc
        elif op == OP_EXP:
            for j in range(na):
                buf[oo + j] = c_exp(buf[oa + j])
        elif op == OP_LOG:
            for j in range(na):
                if buf[oa + j] <= 0.0:
                    return i
                buf[oo + j] = c_log(buf[oa + j])
        elif op == OP_NEG:
            for j in range(na):
                buf[oo + j] = -buf[oa + j]
        elif op == OP_SUM:
            acc = 0.0
            for j in range(na):
                acc += buf[oa + j]
            buf[oo] = acc
        elif op == OP_MEAN:
            acc = 0.0
            for j in range(na):
                acc += buf[oa + j]
            buf[oo] = acc / na
        elif op == OP_ELU:
            for j in range(na):
                buf[oo + j] = buf[oa + j] if buf[oa + j] > 0.0 else c_expm1(buf[oa + j])
        elif op == OP_RELU:
            for j in range(na):
                buf[oo + j] = buf[oa + j] if buf[oa + j] > 0.0 else 0.0
        elif op == OP_XENT:
            hi = buf[oa]
            for j in range(1, na):
                if buf[oa + j] > hi:
                    hi = buf[oa + j]
            s = 0.0
            for j in range(na):
                s += c_exp(buf[oa + j] - hi)
            buf[oo] = hi + c_log(s) - buf[oa + iaux[i]]
        elif op == OP_SQNORM:
            acc = 0.0
            for j in range(na):
                acc += buf[oa + j] * buf[oa + j]
            buf[oo] = acc
        elif op == OP_L1NORM:
            acc = 0.0
            for j in range(na):
                acc += fabs(buf[oa + j])
            buf[oo] = acc
        elif op == OP_SCALE:
            s = faux[i]
            for j in range(na):
                buf[oo + j] = buf[oa + j] * s
    return -1


def run_backward(int[::1] ops, int[::1] ia, int[::1] ib, int[::1] iaux,
                 int[:, ::1] mm, double[::1] faux, long long[::1] off,
                 long long[::1] ln, double[::1] buf, double[::1] gbuf,
                 int out_idx, unsigned char[::1] active):
    cdef int i, op, jja, jjb, m, k, n, r, c
    cdef long long j, na, nb, oa, ob, oo, ga, gb, go
    cdef double acc, hi, s, g0
    for i in range(out_idx + 1):
        if active[i]:
            oo = off[i]
            for j in range(ln[i]):
                gbuf[oo + j] = 0.0
    if not active[out_idx]:
        return
    gbuf[off[out_idx]] = 1.0
    for i in range(out_idx, -1, -1):
        op = ops[i]
        if (not active[i]) or op == OP_LEAF or op == OP_CONST:
            continue
        go = off[i]
        jja = ia[i]
        oa = off[jja]
        ga = oa
        na = ln[jja]
        if op == OP_ADD:
            jjb = ib[i]
            nb = ln[jjb]
            gb = off[jjb]
            if active[jja]:
                if na == 1 and nb > 1:
                    acc = 0.0
                    for j in range(nb):
                        acc += gbuf[go + j]
                    gbuf[ga] += acc
                else:
                    for j in range(na):
                        gbuf[ga + j] += gbuf[go + j]
            if active[jjb]:
                if nb == 1 and na > 1:
                    acc = 0.0
                    for j in range(na):
                        acc += gbuf[go + j]
                    gbuf[gb] += acc
                else:
                    for j in range(nb):
                        gbuf[gb + j] += gbuf[go + j]
        elif op == OP_MUL:
            jjb = ib[i]
            nb = ln[jjb]
            ob = off[jjb]
            gb = ob
            if active[jja]:
                if na == 1 and nb > 1:
                    acc = 0.0
                    for j in range(nb):
                        acc += gbuf[go + j] * buf[ob + j]
                    gbuf[ga] += acc
                elif nb == 1 and na > 1:
                    for j in range(na):
                        gbuf[ga + j] += gbuf[go + j] * buf[ob]
                else:
                    for j in range(na):
                        gbuf[ga + j] += gbuf[go + j] * buf[ob + j]
            if active[jjb]:
                if nb == 1 and na > 1:
                    acc = 0.0
                    for j in range(na):
                        acc += gbuf[go + j] * buf[oa + j]
                    gbuf[gb] += acc
                elif na == 1 and nb > 1:
                    for j in range(nb):
                        gbuf[gb + j] += gbuf[go + j] * buf[oa]
                else:
                    for j in range(nb):
                        gbuf[gb + j] += gbuf[go + j] * buf[oa + j]
        elif op == OP_MATMUL:
            jjb = ib[i]
            ob = off[jjb]
            gb = ob
            m = mm[i, 0]
            k = mm[i, 1]
            n = mm[i, 2]
            if n == 0:
                if active[jja]:
                    for r in range(m):
                        g0 = gbuf[go + r]
                        for j in range(k):
                            gbuf[ga + r * k + j] += g0 * buf[ob + j]
                if active[jjb]:
                    for j in range(k):
                        acc = 0.0
                        for r in range(m):
                            acc += buf[oa + r * k + j] * gbuf[go + r]
                        gbuf[gb + j] += acc
            else:
                if active[jja]:
                    for r in range(m):
                        for j in range(k):
                            acc = 0.0
                            for c in range(n):
                                acc += gbuf[go + r * n + c] * buf[ob + j * n + c]
                            gbuf[ga + r * k + j] += acc
                if active[jjb]:
                    for j in range(k):
                        for c in range(n):
                            acc = 0.0
                            for r in range(m):
                                acc += buf[oa + r * k + j] * gbuf[go + r * n + c]
                            gbuf[gb + j * n + c] += acc
        elif op == OP_EXP:
            if active[jja]:
                oo = off[i]
                for j in range(na):
                    gbuf[ga + j] += gbuf[go + j] * buf[oo + j]
        elif op == OP_LOG:
            if active[jja]:
                for j in range(na):
                    gbuf[ga + j] += gbuf[go + j] / buf[oa + j]
        elif op == OP_NEG:
            if active[jja]:
                for j in range(na):
                    gbuf[ga + j] -= gbuf[go + j]
        elif op == OP_SUM:
            if active[jja]:
                g0 = gbuf[go]
                for j in range(na):
                    gbuf[ga + j] += g0
        elif op == OP_MEAN:
            if active[jja]:
                g0 = gbuf[go] / na
                for j in range(na):
                    gbuf[ga + j] += g0
        elif op == OP_ELU:
            if active[jja]:
                oo = off[i]
                for j in range(na):
                    gbuf[ga + j] += gbuf[go + j] * (
                        1.0 if buf[oa + j] > 0.0 else buf[oo + j] + 1.0
                    )
        elif op == OP_RELU:
            if active[jja]:
                for j in range(na):
                    if buf[oa + j] > 0.0:
                        gbuf[ga + j] += gbuf[go + j]
        elif op == OP_XENT:
            if active[jja]:
                g0 = gbuf[go]
                hi = buf[oa]
                for j in range(1, na):
                    if buf[oa + j] > hi:
                        hi = buf[oa + j]
                s = 0.0
                for j in range(na):
                    s += c_exp(buf[oa + j] - hi)
                for j in range(na):
                    acc = c_exp(buf[oa + j] - hi) / s
                    if j == iaux[i]:
                        acc -= 1.0
                    gbuf[ga + j] += g0 * acc
        elif op == OP_SQNORM:
            if active[jja]:
                g0 = 2.0 * gbuf[go]
                for j in range(na):
                    gbuf[ga + j] += g0 * buf[oa + j]
        elif op == OP_L1NORM:
            if active[jja]:
                g0 = gbuf[go]
                for j in range(na):
                    if buf[oa + j] > 0.0:
                        gbuf[ga + j] += g0
                    elif buf[oa + j] < 0.0:
                        gbuf[ga + j] -= g0
        elif op == OP_SCALE:
            if active[jja]:
                s = faux[i]
                for j in range(na):
                    gbuf[ga + j] += gbuf[go + j] * s

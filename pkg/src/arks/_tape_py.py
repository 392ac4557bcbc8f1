"""Pure-Python tape evaluator.

Reference implementation of the instruction set in ``_ops``; the compiled
evaluator in ``_tape_cy`` mirrors it node for node.  ``run_forward``
returns -1 on success or the index of the node that hit a domain error
(log of a non-positive value).
"""

import numpy as np

from ._ops import (
    OP_ADD,
    OP_CONST,
    OP_ELU,
    OP_EXP,
    OP_L1NORM,
    OP_LEAF,
    OP_LOG,
    OP_MATMUL,
    OP_MEAN,
    OP_MUL,
    OP_NEG,
    OP_RELU,
    OP_SCALE,
    OP_SQNORM,
    OP_SUM,
    OP_XENT,
)

NAME = "python"
PACKED = False


def run_forward(ops, ia, ib, iaux, mm, faux, values, out_idx):
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        for i in range(out_idx + 1):
            op = ops[i]
            if op == OP_LEAF or op == OP_CONST:
                continue
            a = values[ia[i]]
            out = values[i]
            if op == OP_ADD:
                np.add(a, values[ib[i]], out=out)
            elif op == OP_MUL:
                np.multiply(a, values[ib[i]], out=out)
            elif op == OP_MATMUL:
                m, k, n = mm[i]
                A = a.reshape(m, k)
                b = values[ib[i]]
                if n == 0:
                    np.matmul(A, b, out=out)
                else:
                    np.matmul(A, b.reshape(k, n), out=out.reshape(m, n))
            elif op == OP_EXP:
                np.exp(a, out=out)
            elif op == OP_LOG:
                if np.any(a <= 0.0):
                    return i
                np.log(a, out=out)
            elif op == OP_NEG:
                np.negative(a, out=out)
            elif op == OP_SUM:
                out[0] = a.sum()
            elif op == OP_MEAN:
                out[0] = a.mean()
            elif op == OP_ELU:
                np.expm1(a, out=out)
                np.copyto(out, a, where=a > 0.0)
            elif op == OP_RELU:
                np.maximum(a, 0.0, out=out)
            elif op == OP_XENT:
                hi = a.max()
                out[0] = hi + np.log(np.exp(a - hi).sum()) - a[iaux[i]]
            elif op == OP_SQNORM:
                out[0] = np.dot(a, a)
            elif op == OP_L1NORM:
                out[0] = np.abs(a).sum()
            elif op == OP_SCALE:
                np.multiply(a, faux[i], out=out)
    return -1


def _acc(dst, src):
    # src may be scalar-shaped against a vector dst (broadcast add/mul)
    if dst.shape == src.shape:
        dst += src
    else:
        dst += src.sum()


def run_backward(ops, ia, ib, iaux, mm, faux, values, grads, out_idx, active):
    for i in range(out_idx + 1):
        if active[i]:
            grads[i][:] = 0.0
    if not active[out_idx]:
        return
    grads[out_idx][0] = 1.0
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        for i in range(out_idx, -1, -1):
            op = ops[i]
            if not active[i] or op == OP_LEAF or op == OP_CONST:
                continue
            g = grads[i]
            j = ia[i]
            a = values[j]
            if op == OP_ADD:
                jb = ib[i]
                if active[j]:
                    _acc(grads[j], g)
                if active[jb]:
                    _acc(grads[jb], g)
            elif op == OP_MUL:
                jb = ib[i]
                b = values[jb]
                if active[j]:
                    _acc(grads[j], g * b)
                if active[jb]:
                    _acc(grads[jb], g * a)
            elif op == OP_MATMUL:
                m, k, n = mm[i]
                jb = ib[i]
                A = a.reshape(m, k)
                if n == 0:
                    if active[j]:
                        grads[j] += np.outer(g, values[jb]).ravel()
                    if active[jb]:
                        grads[jb] += A.T @ g
                else:
                    G = g.reshape(m, n)
                    B = values[jb].reshape(k, n)
                    if active[j]:
                        grads[j] += (G @ B.T).ravel()
                    if active[jb]:
                        grads[jb] += (A.T @ G).ravel()
            elif op == OP_EXP:
                if active[j]:
                    grads[j] += g * values[i]
            elif op == OP_LOG:
                if active[j]:
                    grads[j] += g / a
            elif op == OP_NEG:
                if active[j]:
                    grads[j] -= g
            elif op == OP_SUM:
                if active[j]:
                    grads[j] += g[0]
            elif op == OP_MEAN:
                if active[j]:
                    grads[j] += g[0] / a.size
            elif op == OP_ELU:
                if active[j]:
                    grads[j] += g * np.where(a > 0.0, 1.0, values[i] + 1.0)
            elif op == OP_RELU:
                if active[j]:
                    grads[j] += g * (a > 0.0)
            elif op == OP_XENT:
                if active[j]:
                    hi = a.max()
                    p = np.exp(a - hi)
                    p /= p.sum()
                    p[iaux[i]] -= 1.0
                    grads[j] += g[0] * p
            elif op == OP_SQNORM:
                if active[j]:
                    grads[j] += (2.0 * g[0]) * a
            elif op == OP_L1NORM:
                if active[j]:
                    grads[j] += g[0] * np.sign(a)
            elif op == OP_SCALE:
                if active[j]:
                    grads[j] += g * faux[i]

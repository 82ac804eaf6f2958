"""Hot loops of the loss engine.

Each kernel has a numba version and a vectorised numpy version. The numba
path is used when numba imports and ``RISKSCORE_BACKEND`` is not ``numpy``.
Both sum per-example losses with compensation in a fixed order, so a given
backend is bit-reproducible; the two backends may differ in the last ulp.
"""

import os

import numpy as np

BACKEND_ENV = "RISKSCORE_BACKEND"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False


def _requested():
    return os.environ.get(BACKEND_ENV, "numba").strip().lower()


USE_NUMBA = HAS_NUMBA and _requested() != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

def _log1pexp_neg_np(s):
    # log(1 + exp(-s)) without overflow
    return np.log1p(np.exp(-np.abs(s))) + np.maximum(-s, 0.0)


def csum_np(v):
    """Compensated pairwise sum: TwoSum at every level, errors added at the end."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    err = 0.0
    while v.size > 1:
        if v.size & 1:
            v = np.append(v, 0.0)
        a = v[0::2]
        b = v[1::2]
        s = a + b
        bb = s - a
        err += float(np.sum((a - (s - bb)) + (b - bb)))
        v = s
    return float(v[0] + err)


def loss_scores_np(s):
    return csum_np(_log1pexp_neg_np(s)) / s.shape[0]


def loss_grad_np(Z, lam):
    s = Z @ lam
    val = csum_np(_log1pexp_neg_np(s)) / s.shape[0]
    # sigma(-s) computed stably
    e = np.exp(-np.abs(s))
    p = np.where(s >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    grad = -(Z.T @ p) / s.shape[0]
    return val, grad


def loss_table_np(s_int, table, offset):
    return csum_np(table[s_int - offset]) / s_int.shape[0]


def coord_losses_np(s, z, deltas):
    """Loss at scores s + delta * z for every delta."""
    out = np.empty(len(deltas))
    for k, dl in enumerate(deltas):
        out[k] = loss_scores_np(s + dl * z)
    return out


def coord_losses_table_np(s_int, z_int, deltas, table, offset):
    out = np.empty(len(deltas))
    for k, dl in enumerate(deltas):
        out[k] = csum_np(table[s_int + dl * z_int - offset]) / s_int.shape[0]
    return out


# ---------------------------------------------------------------- numba path

if HAS_NUMBA:
    _jit = numba.njit(cache=True, fastmath=False, nogil=True)

    @_jit
    def _l1pe(s):
        if s >= 0.0:
            return np.log1p(np.exp(-s))
        return -s + np.log1p(np.exp(s))

    @_jit
    def loss_scores_nb(s):
        # Neumaier summation in index order
        tot = 0.0
        c = 0.0
        n = s.shape[0]
        for i in range(n):
            v = _l1pe(s[i])
            t = tot + v
            if abs(tot) >= abs(v):
                c += (tot - t) + v
            else:
                c += (v - t) + tot
            tot = t
        return (tot + c) / n

    @_jit
    def loss_grad_nb(Z, lam):
        n, p = Z.shape
        grad = np.zeros(p)
        tot = 0.0
        c = 0.0
        for i in range(n):
            si = 0.0
            for j in range(p):
                si += Z[i, j] * lam[j]
            v = _l1pe(si)
            t = tot + v
            if abs(tot) >= abs(v):
                c += (tot - t) + v
            else:
                c += (v - t) + tot
            tot = t
            if si >= 0.0:
                e = np.exp(-si)
                q = e / (1.0 + e)
            else:
                q = 1.0 / (1.0 + np.exp(si))
            for j in range(p):
                grad[j] -= Z[i, j] * q
        for j in range(p):
            grad[j] /= n
        return (tot + c) / n, grad

    @_jit
    def loss_table_nb(s_int, table, offset):
        tot = 0.0
        c = 0.0
        n = s_int.shape[0]
        for i in range(n):
            v = table[s_int[i] - offset]
            t = tot + v
            if abs(tot) >= abs(v):
                c += (tot - t) + v
            else:
                c += (v - t) + tot
            tot = t
        return (tot + c) / n

    @_jit
    def coord_losses_nb(s, z, deltas):
        n = s.shape[0]
        out = np.empty(deltas.shape[0])
        for k in range(deltas.shape[0]):
            dl = deltas[k]
            tot = 0.0
            c = 0.0
            for i in range(n):
                v = _l1pe(s[i] + dl * z[i])
                t = tot + v
                if abs(tot) >= abs(v):
                    c += (tot - t) + v
                else:
                    c += (v - t) + tot
                tot = t
            out[k] = (tot + c) / n
        return out

    @_jit
    def coord_losses_table_nb(s_int, z_int, deltas, table, offset):
        n = s_int.shape[0]
        out = np.empty(deltas.shape[0])
        for k in range(deltas.shape[0]):
            dl = deltas[k]
            tot = 0.0
            c = 0.0
            for i in range(n):
                v = table[s_int[i] + dl * z_int[i] - offset]
                t = tot + v
                if abs(tot) >= abs(v):
                    c += (tot - t) + v
                else:
                    c += (v - t) + tot
                tot = t
            out[k] = (tot + c) / n
        return out


# ---------------------------------------------------------------- dispatch

class _Backend:
    def __init__(self, name):
        self.name = name
        if name == "numba":
            self.loss_scores = loss_scores_nb
            self.loss_grad = loss_grad_nb
            self.loss_table = loss_table_nb
            self.coord_losses = coord_losses_nb
            self.coord_losses_table = coord_losses_table_nb
        else:
            self.loss_scores = loss_scores_np
            self.loss_grad = loss_grad_np
            self.loss_table = loss_table_np
            self.coord_losses = coord_losses_np
            self.coord_losses_table = coord_losses_table_np


def get_backend(name=None):
    """Kernel table for ``name`` ('numba' or 'numpy'); default is the env choice."""
    name = BACKEND if name is None else name
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    return _Backend(name)


K = get_backend()

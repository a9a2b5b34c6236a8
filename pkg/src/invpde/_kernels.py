"""Hot elementwise kernels for the tanh jet network.

Each kernel exists twice: a numba ``@njit`` version and a plain numpy
version.  ``INVPDE_BACKEND=numpy`` (or a missing numba) selects the numpy
path; the two are interchangeable to rounding and are benchmarked against
each other in ``benchmarks/bench_kernels.py``.

Jet layout: one ``(N, 1 + A + P, W)`` array per layer.  Channel 0 holds
values, channels ``1..A`` first derivatives along A input directions and the
last P channels second derivatives for ``pairs[p] = (i, j)`` (indices into
the A directions).
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

BACKEND = os.environ.get("INVPDE_BACKEND", "numba").lower()
USE_NUMBA = numba is not None and BACKEND != "numpy"


def tanh_jet_forward_np(Z, A, pairs):
    """``Z``/return are ``(N, 1 + A + P, W)``: value, first, second channels."""
    s = np.tanh(Z[:, 0])
    s1 = 1.0 - s * s
    s2 = -2.0 * s * s1
    H = np.empty_like(Z)
    H[:, 0] = s
    H[:, 1:] = s1[:, None] * Z[:, 1:]
    for p in range(pairs.shape[0]):
        i, j = pairs[p]
        H[:, 1 + A + p] += s2 * Z[:, 1 + i] * Z[:, 1 + j]
    return H


def tanh_jet_backward_np(G, Z, H, A, pairs):
    """Pull ``G = dL/dH`` back to ``dL/dZ`` (same channel layout)."""
    s = H[:, 0]
    s1 = 1.0 - s * s
    s2 = -2.0 * s * s1
    GZ = np.empty_like(G)
    GZ[:, 1:] = G[:, 1:] * s1[:, None]
    ds1 = np.einsum("ncw,ncw->nw", G[:, 1:], Z[:, 1:])
    ds2 = np.zeros_like(s)
    for p in range(pairs.shape[0]):
        i, j = pairs[p]
        g = G[:, 1 + A + p]
        gs = g * s2
        GZ[:, 1 + i] += gs * Z[:, 1 + j]
        GZ[:, 1 + j] += gs * Z[:, 1 + i]
        ds2 += g * Z[:, 1 + i] * Z[:, 1 + j]
    GZ[:, 0] = G[:, 0] * s1 + ds1 * s2 + ds2 * (4.0 * s * s * s1 - 2.0 * s1 * s1)
    return GZ


if USE_NUMBA:

    # tanh itself stays in numpy (SIMD); numba fuses the channel arithmetic
    @numba.njit(cache=True)
    def _fwd_nb(Z, s, A, pairs, H):
        N, C, W = Z.shape
        P = pairs.shape[0]
        s1 = np.empty(W)
        s2 = np.empty(W)
        for n in range(N):
            for w in range(W):
                sv = s[n, w]
                s1[w] = 1.0 - sv * sv
                s2[w] = -2.0 * sv * s1[w]
                H[n, 0, w] = sv
            for c in range(1, C):
                for w in range(W):
                    H[n, c, w] = s1[w] * Z[n, c, w]
            for p in range(P):
                i = 1 + pairs[p, 0]
                j = 1 + pairs[p, 1]
                for w in range(W):
                    H[n, 1 + A + p, w] += s2[w] * Z[n, i, w] * Z[n, j, w]

    @numba.njit(cache=True)
    def _bwd_nb(G, Z, H, A, pairs, GZ):
        N, C, W = Z.shape
        P = pairs.shape[0]
        s1 = np.empty(W)
        s2 = np.empty(W)
        ds1 = np.empty(W)
        ds2 = np.empty(W)
        for n in range(N):
            for w in range(W):
                sv = H[n, 0, w]
                s1[w] = 1.0 - sv * sv
                s2[w] = -2.0 * sv * s1[w]
                ds1[w] = 0.0
                ds2[w] = 0.0
            for c in range(1, C):
                for w in range(W):
                    GZ[n, c, w] = G[n, c, w] * s1[w]
                    ds1[w] += G[n, c, w] * Z[n, c, w]
            for p in range(P):
                i = 1 + pairs[p, 0]
                j = 1 + pairs[p, 1]
                for w in range(W):
                    g = G[n, 1 + A + p, w]
                    zi = Z[n, i, w]
                    zj = Z[n, j, w]
                    ds2[w] += g * zi * zj
                    gs = g * s2[w]
                    GZ[n, i, w] += gs * zj
                    GZ[n, j, w] += gs * zi
            for w in range(W):
                sv = H[n, 0, w]
                GZ[n, 0, w] = G[n, 0, w] * s1[w] + ds1[w] * s2[w] + ds2[w] * (
                    4.0 * sv * sv * s1[w] - 2.0 * s1[w] * s1[w])

    def tanh_jet_forward_nb(Z, A, pairs):
        H = np.empty_like(Z)
        _fwd_nb(Z, np.tanh(Z[:, 0]), A, pairs, H)
        return H

    def tanh_jet_backward_nb(G, Z, H, A, pairs):
        GZ = np.empty_like(G)
        _bwd_nb(G, Z, H, A, pairs, GZ)
        return GZ

    tanh_jet_forward = tanh_jet_forward_nb
    tanh_jet_backward = tanh_jet_backward_nb
else:
    tanh_jet_forward = tanh_jet_forward_np
    tanh_jet_backward = tanh_jet_backward_np


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"

"""Extended-precision cost evaluation for closed loops whose slowest mode is
too close to the imaginary axis for double precision.

Only small realizations are supported: the Lyapunov equation is solved by
Kronecker vectorization and the H-infinity norm by a frequency search.
"""

from __future__ import annotations

from typing import Callable, Sequence

import mpmath as mp
import numpy as np

from .errors import NotStabilizingError
from .statespace import Plant

MpMatrix = mp.matrix
# policy entries as functions of epsilon: (D_K, C_K, B_K, A_K), scalar plants only
ScalarPath = Callable[[mp.mpf], tuple[mp.mpf, mp.mpf, mp.mpf, mp.mpf]]


def scalar_closed_loop(plant: Plant, D: mp.mpf, C: mp.mpf, B: mp.mpf, A: mp.mpf):
    """Closed-loop matrices of an order-one policy on a scalar plant."""
    if (plant.n, plant.m, plant.p) != (1, 1, 1):
        raise ValueError("extended-precision paths need a scalar plant")
    a, b, c = (mp.mpf(float(x)) for x in (plant.A[0, 0], plant.B[0, 0], plant.C[0, 0]))
    wh, vh, qh, rh = (mp.sqrt(mp.mpf(float(M[0, 0]))) for M in (plant.W, plant.V, plant.Q, plant.R))
    Acl = mp.matrix([[a + b * D * c, b * C], [B * c, A]])
    Bcl = mp.matrix([[wh, b * D * vh], [0, B * vh]])
    Ccl = mp.matrix([[qh, 0], [rh * D * c, rh * C]])
    Dcl = mp.matrix([[0, 0], [0, rh * D * vh]])
    return Acl, Bcl, Ccl, Dcl


def _check_stable(A: MpMatrix) -> None:
    ev = mp.eig(A, left=False, right=False)
    absc = max(mp.re(x) for x in ev)
    if absc >= 0:
        raise NotStabilizingError(f"closed loop not stable (abscissa {mp.nstr(absc, 5)})")


def h2_norm(Acl: MpMatrix, Bcl: MpMatrix, Ccl: MpMatrix) -> mp.mpf:
    """``sqrt(tr(C X C^T))`` with ``A X + X A^T + B B^T = 0``."""
    _check_stable(Acl)
    k = Acl.rows
    I = mp.eye(k)
    L = mp.zeros(k * k, k * k)
    # column-major vec: vec(AX + XA^T) = (I kron A + A kron I) vec(X)
    for i in range(k):
        for j in range(k):
            for r in range(k):
                for s in range(k):
                    L[i + k * j, r + k * s] = I[j, s] * Acl[i, r] + Acl[j, s] * I[i, r]
    BB = Bcl * Bcl.T
    rhs = mp.matrix([-BB[i, j] for j in range(k) for i in range(k)])
    x = mp.lu_solve(L, rhs)
    X = mp.matrix(k, k)
    for j in range(k):
        for i in range(k):
            X[i, j] = x[i + k * j]
    return mp.sqrt(sum((Ccl * X * Ccl.T)[i, i] for i in range(Ccl.rows)))


def _sigma_max(Acl, Bcl, Ccl, Dcl, w: mp.mpf) -> mp.mpf:
    k = Acl.rows
    T = Ccl * mp.inverse(mp.mpc(0, 1) * w * mp.eye(k) - Acl) * Bcl + Dcl
    return max(mp.svd_c(T, compute_uv=False))


def hinf_norm(Acl, Bcl, Ccl, Dcl, grid: Sequence[float] | None = None) -> tuple[mp.mpf, mp.mpf]:
    """Norm and peak frequency by a log grid followed by golden-section search."""
    _check_stable(Acl)
    if grid is None:
        grid = [0.0] + list(np.logspace(-14, 4, 721))
    vals = [(_sigma_max(Acl, Bcl, Ccl, Dcl, mp.mpf(w)), i) for i, w in enumerate(grid)]
    best, i = max(vals)
    lo = mp.mpf(grid[max(i - 1, 0)])
    hi = mp.mpf(grid[min(i + 1, len(grid) - 1)])
    f = lambda w: _sigma_max(Acl, Bcl, Ccl, Dcl, w)
    g = (mp.sqrt(5) - 1) / 2
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(200):
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = f(x2)
        if hi - lo <= mp.mpf(10) ** (-mp.mp.dps // 2) * (1 + abs(hi)):
            break
    peak_w = x1 if f1 >= f2 else x2
    peak = max(f1, f2)
    inf_val = max(mp.svd_r(Dcl, compute_uv=False)) if Dcl.rows else mp.mpf(0)
    if inf_val >= max(best, peak):
        return inf_val, mp.inf
    if best > peak:
        return best, mp.mpf(grid[i])
    return peak, peak_w


def path_costs(
    plant: Plant, path: ScalarPath, epsilons: Sequence[float], metric: str, dps: int = 60
) -> list[tuple[float, float]]:
    """Cost along an order-one policy path in ``dps``-digit arithmetic."""
    out = []
    with mp.workdps(dps):
        for eps in epsilons:
            e = mp.mpf(repr(float(eps)))
            Acl, Bcl, Ccl, Dcl = scalar_closed_loop(plant, *path(e))
            if metric == "lqg":
                val = h2_norm(Acl, Bcl, Ccl)
            elif metric == "hinf":
                val = hinf_norm(Acl, Bcl, Ccl, Dcl)[0]
            else:
                raise ValueError(f"unknown metric {metric!r}")
            out.append((float(eps), float(val)))
    return out

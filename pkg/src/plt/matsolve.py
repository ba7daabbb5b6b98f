"""Dense kernels: Lyapunov equations, Gramians, algebraic Riccati equations
and the Riccati-based LQG and H-infinity controller constructions."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy import linalg

from .errors import BracketError, NotStabilizingError, NumericalError
from .statespace import (
    EPS_STAB,
    TAU_RANK,
    Plant,
    Policy,
    assemble_closed_loop,
    spectral_abscissa,
)

EPS_LYAP = 1e-9
EPS_RIC = 1e-8
EPS_HAM = 1e-7
GAMMA_CAP = 2.0**40


def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


# ---------------------------------------------------------------------------
# Lyapunov
# ---------------------------------------------------------------------------

def lyapunov_residual(A: np.ndarray, X: np.ndarray, Q: np.ndarray) -> float:
    return float(np.linalg.norm(A @ X + X @ A.T + Q))


def solve_lyapunov(
    A: np.ndarray,
    Q: np.ndarray,
    method: Literal["schur", "kron"] = "schur",
    check: bool = True,
) -> np.ndarray:
    """Solve ``A X + X A^T + Q = 0`` for Hurwitz ``A``.

    ``schur`` is the Bartels-Stewart solver from scipy followed by one step
    of residual correction; ``kron`` vectorizes the equation and is kept as
    an independent path for small systems.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    k = A.shape[0]
    if Q.shape != (k, k):
        raise ValueError(f"Q has shape {Q.shape}, expected {(k, k)}")
    if k == 0:
        return np.zeros((0, 0))
    abscissa = spectral_abscissa(A)
    if abscissa >= -EPS_STAB:
        raise NotStabilizingError(f"Lyapunov operator needs a Hurwitz matrix (abscissa {abscissa:.3e})")
    if method == "kron":
        I = np.eye(k)
        L = np.kron(I, A) + np.kron(A, I)
        X = np.linalg.solve(L, -Q.reshape(-1, order="F")).reshape(k, k, order="F")
        return _sym(X)
    if method != "schur":
        raise ValueError(f"unknown method {method!r}")
    X = _sym(linalg.solve_continuous_lyapunov(A, -Q))
    res = A @ X + X @ A.T + Q
    if np.linalg.norm(res) > EPS_LYAP * (1.0 + np.linalg.norm(Q)):
        X = _sym(X + linalg.solve_continuous_lyapunov(A, -res))
    if check:
        res_norm = lyapunov_residual(A, X, Q)
        scale = np.linalg.norm(Q) + 2.0 * np.linalg.norm(A) * np.linalg.norm(X)
        if not np.isfinite(res_norm) or res_norm > 1e-6 * max(scale, 1.0):
            raise NumericalError(f"Lyapunov residual {res_norm:.3e} too large (scale {scale:.3e})")
    return X


@dataclass(frozen=True)
class Gramians:
    L_c: np.ndarray
    L_o: np.ndarray
    controllable: bool
    observable: bool


def _is_pd(M: np.ndarray, tau: float = TAU_RANK) -> bool:
    if M.size == 0:
        return True
    w = np.linalg.eigvalsh(M)
    return bool(w[0] > tau * max(w[-1], 0.0)) and w[-1] > 0


def gramians(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> Gramians:
    """Controllability and observability Gramians of a stable triple."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    Lc = solve_lyapunov(A, B @ B.T)
    Lo = solve_lyapunov(A.T, C.T @ C)
    return Gramians(Lc, Lo, _is_pd(Lc), _is_pd(Lo))


# ---------------------------------------------------------------------------
# Riccati
# ---------------------------------------------------------------------------

def axis_gap(H: np.ndarray, ev: Optional[np.ndarray] = None) -> float:
    """Smallest ``|Re(lambda)|`` over the eigenvalues of ``H`` in units of the
    imaginary-axis tolerance; values ``<= 1`` count as on the axis.

    The tolerance is ``EPS_HAM (1 + |lambda|)`` per eigenvalue, floored at a
    rounding-error level ``1e3 eps ||H||``. A purely norm-relative tolerance
    misclassifies moderate eigenvalues of stiff Hamiltonians.
    """
    if ev is None:
        ev = np.linalg.eigvals(H)
    floor = 1e3 * np.finfo(float).eps * np.linalg.norm(H, 2)
    tol = np.maximum(EPS_HAM * (1.0 + np.abs(ev)), floor)
    return float(np.min(np.abs(ev.real) / tol))


class AreFailure(enum.Enum):
    IMAGINARY_AXIS = "Hamiltonian has eigenvalues on the imaginary axis"
    SINGULAR_BASIS = "stable invariant subspace is not a graph"
    RESIDUAL = "Riccati residual too large"


@dataclass(frozen=True)
class AreResult:
    X: Optional[np.ndarray]
    failure: Optional[AreFailure]
    axis_distance: float  # see axis_gap

    @property
    def ok(self) -> bool:
        return self.failure is None


def are_residual(A: np.ndarray, G: np.ndarray, Qm: np.ndarray, X: np.ndarray) -> float:
    return float(np.linalg.norm(A.T @ X + X @ A - X @ G @ X + Qm))


def stabilizing_are(A: np.ndarray, G: np.ndarray, Qm: np.ndarray) -> AreResult:
    """Stabilizing solution of ``A^T X + X A - X G X + Qm = 0``.

    ``G`` and ``Qm`` are symmetric but may be indefinite. The solution is read
    off the stable invariant subspace of the Hamiltonian
    ``[[A, -G], [-Qm, -A^T]]`` via an ordered real Schur form, so that
    ``A - G X`` is Hurwitz.
    """
    k = A.shape[0]
    H = np.block([[A, -G], [-Qm, -A.T]])
    ev = np.linalg.eigvals(H)
    axis_distance = axis_gap(H, ev)
    if axis_distance <= 1.0:
        return AreResult(None, AreFailure.IMAGINARY_AXIS, axis_distance)
    T, Z, sdim = linalg.schur(H, output="real", sort="lhp")
    if sdim != k:
        return AreResult(None, AreFailure.IMAGINARY_AXIS, axis_distance)
    U11, U21 = Z[:k, :k], Z[k:, :k]
    if np.linalg.cond(U11) > 1e12:
        return AreResult(None, AreFailure.SINGULAR_BASIS, axis_distance)
    X = _sym(np.linalg.solve(U11.T, U21.T).T)
    res = are_residual(A, G, Qm, X)
    scale = 1.0 + np.linalg.norm(X) ** 2 + np.linalg.norm(Qm)
    if res > EPS_RIC * scale:
        # one Newton step on the residual usually restores full accuracy
        Acl = A - G @ X
        try:
            dX = linalg.solve_continuous_lyapunov(Acl.T, -(A.T @ X + X @ A - X @ G @ X + Qm))
            X = _sym(X + dX)
        except (np.linalg.LinAlgError, ValueError):
            pass
        res = are_residual(A, G, Qm, X)
        if res > EPS_RIC * (1.0 + np.linalg.norm(X) ** 2 + np.linalg.norm(Qm)):
            return AreResult(X, AreFailure.RESIDUAL, axis_distance)
    return AreResult(X, None, axis_distance)


@dataclass(frozen=True)
class LqgRiccatiSolution:
    P: np.ndarray
    S: np.ndarray
    L: np.ndarray
    K_gain: np.ndarray


def solve_lqg_riccati(plant: Plant) -> LqgRiccatiSolution:
    """Filter and control Riccati equations with the Kalman and feedback gains."""
    A, B, C = plant.A, plant.B, plant.C
    Vinv = np.linalg.inv(plant.V)
    Rinv = np.linalg.inv(plant.R)
    filt = stabilizing_are(A.T, C.T @ Vinv @ C, plant.W)
    ctrl = stabilizing_are(A, B @ Rinv @ B.T, plant.Q)
    for nm, res in (("filter", filt), ("control", ctrl)):
        if not res.ok:
            raise NumericalError(f"{nm} Riccati equation: {res.failure.value}")
    P, S = filt.X, ctrl.X
    return LqgRiccatiSolution(P, S, P @ C.T @ Vinv, Rinv @ B.T @ S)


def lqg_optimal_policy(sol: LqgRiccatiSolution, plant: Plant) -> Policy:
    """Observer-based controller built from the two LQG Riccati solutions."""
    A, B, C = plant.A, plant.B, plant.C
    A_K = A - B @ sol.K_gain - sol.L @ C
    return Policy(np.zeros((plant.m, plant.p)), -sol.K_gain, sol.L, A_K)


# ---------------------------------------------------------------------------
# H-infinity Riccati pair
# ---------------------------------------------------------------------------

class HinfFailure(enum.Enum):
    NO_STABILIZING_X = "no stabilizing X_inf"
    NO_STABILIZING_Y = "no stabilizing Y_inf"
    NOT_PD = "Riccati solution not positive definite"
    COUPLING = "spectral radius condition rho(X Y) < gamma^2 violated"


@dataclass(frozen=True)
class HinfRiccatiSolution:
    gamma: float
    X_inf: np.ndarray
    Y_inf: np.ndarray
    F_inf: np.ndarray
    L_inf: np.ndarray
    Z_inf: np.ndarray
    rho: float
    coupling_ok: bool


@dataclass(frozen=True)
class HinfRiccatiStatus:
    """Outcome of the existence test at one value of gamma.

    ``certified`` distinguishes a proven failure from one that only failed
    within numerical margins.
    """

    gamma: float
    solution: Optional[HinfRiccatiSolution]
    failure: Optional[HinfFailure]
    certified: bool

    @property
    def feasible(self) -> bool:
        return self.solution is not None and self.solution.coupling_ok


_MARGIN = 1e-8


def hinf_riccati_status(plant: Plant, gamma: float) -> HinfRiccatiStatus:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    A, B, C = plant.A, plant.B, plant.C
    Rinv = np.linalg.inv(plant.R)
    Vinv = np.linalg.inv(plant.V)
    g2 = gamma ** -2
    rx = stabilizing_are(A, B @ Rinv @ B.T - g2 * plant.W, plant.Q)
    if rx.failure is not None:
        certified = rx.failure is AreFailure.IMAGINARY_AXIS
        return HinfRiccatiStatus(gamma, None, HinfFailure.NO_STABILIZING_X, certified)
    ry = stabilizing_are(A.T, C.T @ Vinv @ C - g2 * plant.Q, plant.W)
    if ry.failure is not None:
        certified = ry.failure is AreFailure.IMAGINARY_AXIS
        return HinfRiccatiStatus(gamma, None, HinfFailure.NO_STABILIZING_Y, certified)
    X, Y = rx.X, ry.X
    for M in (X, Y):
        w = np.linalg.eigvalsh(M)
        if w[0] <= 0:
            scale = max(1.0, abs(w[-1]))
            return HinfRiccatiStatus(gamma, None, HinfFailure.NOT_PD, w[0] < -_MARGIN * scale)
    rho = float(np.max(np.abs(np.linalg.eigvals(X @ Y))))
    F = Rinv @ B.T @ X
    L = Y @ C.T @ Vinv
    n = plant.n
    coupling_ok = rho < gamma**2
    if not coupling_ok:
        certified = rho > gamma**2 * (1 + _MARGIN)
        sol = HinfRiccatiSolution(gamma, X, Y, F, L, np.full((n, n), np.nan), rho, False)
        return HinfRiccatiStatus(gamma, sol, HinfFailure.COUPLING, certified)
    Z = np.linalg.inv(np.eye(n) - g2 * Y @ X)
    sol = HinfRiccatiSolution(gamma, X, Y, F, L, Z, rho, True)
    return HinfRiccatiStatus(gamma, sol, None, True)


def solve_hinf_riccati_pair(plant: Plant, gamma: float) -> Optional[HinfRiccatiSolution]:
    """Stabilizing H-infinity Riccati pair at level ``gamma``.

    Returns ``None`` when non-existence is certified and raises
    ``NumericalError`` when the test is inconclusive within margins.
    """
    status = hinf_riccati_status(plant, gamma)
    if status.feasible:
        return status.solution
    if not status.certified:
        raise NumericalError(f"inconclusive at gamma={gamma:.6g}: {status.failure.value}")
    return None


def central_controller(sol: HinfRiccatiSolution, plant: Plant) -> Policy:
    """Strictly proper central controller for a feasible Riccati pair."""
    if not sol.coupling_ok:
        raise NumericalError("coupling condition violated; central controller undefined")
    A, B, C = plant.A, plant.B, plant.C
    g2 = sol.gamma ** -2
    ZL = sol.Z_inf @ sol.L_inf
    A_K = A + g2 * plant.W @ sol.X_inf - B @ sol.F_inf - ZL @ C
    return Policy(np.zeros((plant.m, plant.p)), -sol.F_inf, ZL, A_K)


@dataclass(frozen=True)
class GammaIteration:
    gamma_lo: float
    gamma_hi: float
    policy: Policy
    solution: HinfRiccatiSolution
    iterations: int

    @property
    def gamma(self) -> float:
        return self.gamma_hi


def gamma_iteration(plant: Plant, tol: float = 1e-6, gamma_lo: Optional[float] = None) -> GammaIteration:
    """Bisection on gamma over the Riccati existence test.

    On exit ``gamma_hi - gamma_lo <= tol``, ``gamma_hi`` is feasible and
    ``gamma_lo`` is not. The returned policy is the central controller at
    ``gamma_hi``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    # zero policy has no feedthrough for this plant class, so the floor is tiny
    lo = 1e-8 if gamma_lo is None else gamma_lo
    while hinf_riccati_status(plant, lo).feasible:
        lo *= 0.5
        if lo < 1e-300:
            raise BracketError("no infeasible lower bound found")
    hi = 1.0
    while True:
        st = hinf_riccati_status(plant, hi)
        if st.feasible:
            break
        lo = max(lo, hi)
        hi *= 2.0
        if hi > GAMMA_CAP:
            raise BracketError(f"no feasible gamma below {GAMMA_CAP:.3g}")
    best = st.solution
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        st = hinf_riccati_status(plant, mid)
        if st.feasible:
            hi, best = mid, st.solution
        else:
            lo = mid
        it += 1
    return GammaIteration(lo, hi, central_controller(best, plant), best, it)


def closed_loop_is_stable(plant: Plant, policy: Policy) -> bool:
    return assemble_closed_loop(plant, policy).stable

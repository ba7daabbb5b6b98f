"""LQG (H2) cost of dynamic output-feedback policies, its gradient, and the
Lyapunov certificates used to classify policies as degenerate or not."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import IllConditionedError, InfiniteCostError, NotStabilizingError, OrderError
from .matsolve import solve_lyapunov
from .statespace import (
    TAU_RANK,
    ClosedLoop,
    Plant,
    Policy,
    assemble_closed_loop,
    policy_to_vector,
    vector_to_policy,
)

EPS_LMI = 1e-7
EPS_PD = 1e-10


@dataclass(frozen=True)
class GramianPair:
    """Solutions of the two closed-loop Lyapunov equations.

    ``X`` is driven by ``B_cl B_cl^T`` and ``Y`` by ``C_cl^T C_cl``; block
    accessors split them at the plant order ``n``.
    """

    X: np.ndarray
    Y: np.ndarray
    n: int
    closed_loop: ClosedLoop

    def _blk(self, M: np.ndarray, i: int, j: int) -> np.ndarray:
        n = self.n
        rows = slice(0, n) if i == 1 else slice(n, None)
        cols = slice(0, n) if j == 1 else slice(n, None)
        return M[rows, cols]

    @property
    def X11(self) -> np.ndarray:
        return self._blk(self.X, 1, 1)

    @property
    def X12(self) -> np.ndarray:
        return self._blk(self.X, 1, 2)

    @property
    def X22(self) -> np.ndarray:
        return self._blk(self.X, 2, 2)

    @property
    def Y11(self) -> np.ndarray:
        return self._blk(self.Y, 1, 1)

    @property
    def Y12(self) -> np.ndarray:
        return self._blk(self.Y, 1, 2)

    @property
    def Y22(self) -> np.ndarray:
        return self._blk(self.Y, 2, 2)

    @property
    def cost_sq_x(self) -> float:
        C = self.closed_loop.C
        return float(np.trace(C @ self.X @ C.T))

    @property
    def cost_sq_y(self) -> float:
        B = self.closed_loop.B
        return float(np.trace(B.T @ self.Y @ B))


def _check_domain(plant: Plant, policy: Policy) -> ClosedLoop:
    if not policy.strictly_proper:
        raise InfiniteCostError("LQG cost is infinite for a policy with D_K != 0")
    cl = assemble_closed_loop(plant, policy)
    if not cl.stable:
        raise NotStabilizingError(f"closed loop not stable (abscissa {cl.abscissa:.3e})")
    return cl


def gramian_pair(plant: Plant, policy: Policy) -> GramianPair:
    cl = _check_domain(plant, policy)
    X = solve_lyapunov(cl.A, cl.B @ cl.B.T)
    Y = solve_lyapunov(cl.A.T, cl.C.T @ cl.C)
    return GramianPair(X, Y, plant.n, cl)


def lqg_cost(plant: Plant, policy: Policy) -> float:
    """Closed-loop H2 norm ``sqrt(tr(C_cl X C_cl^T))``."""
    g = gramian_pair(plant, policy)
    return float(np.sqrt(max(g.cost_sq_x, 0.0)))


@dataclass(frozen=True)
class LqgGradient:
    A_K: np.ndarray
    B_K: np.ndarray
    C_K: np.ndarray
    cost: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.A_K.ravel(), self.B_K.ravel(), self.C_K.ravel()])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector()))


def lqg_gradient(plant: Plant, policy: Policy, gram: Optional[GramianPair] = None) -> LqgGradient:
    """Gradient of the (unsquared) LQG cost with respect to ``A_K, B_K, C_K``.

    Differentiating ``J^2 = tr(C_cl X C_cl^T)`` through the Lyapunov equation
    gives ``dJ^2 = 2 tr(Y dA_cl X) + tr(Y d(B_cl B_cl^T)) + tr(X d(C_cl^T C_cl))``;
    the three policy blocks enter ``A_cl``, ``B_cl`` and ``C_cl`` affinely.
    """
    g = gram if gram is not None else gramian_pair(plant, policy)
    cl = g.closed_loop
    n = plant.n
    J = float(np.sqrt(max(g.cost_sq_x, 0.0)))
    if J == 0.0:
        raise NotStabilizingError("zero cost; gradient of the norm is undefined")
    YX = g.Y @ g.X
    YB = g.Y @ cl.B
    CX = cl.C @ g.X
    dA = 2.0 * YX[n:, n:]
    dB = 2.0 * YX[n:, :n] @ plant.C.T + 2.0 * YB[n:, n:] @ plant.V_half
    dC = 2.0 * plant.B.T @ YX[:n, n:] + 2.0 * plant.R_half @ CX[n:, n:]
    s = 1.0 / (2.0 * J)
    return LqgGradient(dA * s, dB * s, dC * s, J)


def fd_hessian(
    plant: Plant,
    policy: Policy,
    h: Optional[float] = None,
    squared: bool = False,
) -> np.ndarray:
    """Central-difference Hessian over ``vec(A_K, B_K, C_K)``.

    Differences of the analytic gradient are used, so one evaluation per
    coordinate direction suffices. With ``squared=True`` the Hessian of
    ``J^2`` is returned instead of that of ``J``.
    """
    x0 = policy_to_vector(policy)
    if h is None:
        h = 1e-6 * (1.0 + np.linalg.norm(x0))
    if not 1e-6 <= h <= 1e-3 * max(1.0, np.linalg.norm(x0)):
        raise ValueError(f"step h={h:.2e} outside [1e-6, 1e-3]")

    def grad(x: np.ndarray) -> np.ndarray:
        K = vector_to_policy(x, policy)
        gr = lqg_gradient(plant, K)
        v = gr.vector()
        return 2.0 * gr.cost * v if squared else v

    d = x0.size
    H = np.zeros((d, d))
    for i in range(d):
        step = h
        while True:
            e = np.zeros(d)
            e[i] = step
            try:
                H[:, i] = (grad(x0 + e) - grad(x0 - e)) / (2.0 * step)
                break
            except NotStabilizingError:
                step *= 0.5
                if step < 1e-12:
                    raise
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# Informativity and certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InformativityReport:
    verdict: str  # "informative" | "marginal" | "not-informative"
    sigma_min_x12: float
    sigma_max_x: float
    sigma_min_xinv12: Optional[float]

    @property
    def informative(self) -> bool:
        return self.verdict != "not-informative"


def _require_full_order(plant: Plant, policy: Policy) -> None:
    if policy.q != plant.n:
        raise OrderError(f"full-order policy required (q={policy.q}, n={plant.n})")


def informativity_test(plant: Plant, policy: Policy, tau: float = TAU_RANK) -> InformativityReport:
    """Rank of the plant/controller state correlation block ``X_12``."""
    _require_full_order(plant, policy)
    g = gramian_pair(plant, policy)
    smin = float(np.linalg.svd(g.X12, compute_uv=False)[-1])
    smax = float(np.linalg.norm(g.X, 2))
    xinv12 = None
    if np.linalg.cond(g.X) < 1e12:
        Xi = np.linalg.inv(g.X)
        xinv12 = float(np.linalg.svd(Xi[: plant.n, plant.n :], compute_uv=False)[-1])
    thresh = tau * smax
    if smin <= thresh:
        verdict = "not-informative"
    elif smin <= 10.0 * thresh:
        verdict = "marginal"
    else:
        verdict = "informative"
    return InformativityReport(verdict, smin, smax, xinv12)


@dataclass(frozen=True)
class LmiReport:
    lmi_residual_1: float
    lmi_residual_2: float
    trace_slack: float
    p_min_eig: float

    def valid(self, eps: float = EPS_LMI, eps_pd: float = EPS_PD) -> bool:
        return (
            self.lmi_residual_1 <= eps
            and self.lmi_residual_2 >= -eps
            and self.trace_slack >= -eps
            and self.p_min_eig > eps_pd
        )


def check_lmi_residual_h2(
    closed_loop: ClosedLoop, gamma: float, P: np.ndarray, Gamma: np.ndarray
) -> LmiReport:
    """Eigenvalue residuals of the nonstrict H2 bilinear LMIs at ``(gamma, P, Gamma)``."""
    A, B, C = closed_loop.A, closed_loop.B, closed_loop.C
    k, d, r = A.shape[0], B.shape[1], C.shape[0]
    P = np.asarray(P, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float)
    if P.shape != (k, k) or Gamma.shape != (r, r):
        raise ValueError(f"P must be {k}x{k} and Gamma {r}x{r}")
    M1 = np.block([[A.T @ P + P @ A, P @ B], [B.T @ P, -gamma * np.eye(d)]])
    M2 = np.block([[P, C.T], [C, Gamma]])
    e1 = np.linalg.eigvalsh(0.5 * (M1 + M1.T))[-1]
    e2 = np.linalg.eigvalsh(0.5 * (M2 + M2.T))[0]
    pmin = np.linalg.eigvalsh(0.5 * (P + P.T))[0]
    return LmiReport(float(e1), float(e2), float(gamma - np.trace(Gamma)), float(pmin))


@dataclass(frozen=True)
class H2Certificate:
    gamma: float
    P: np.ndarray
    Gamma: np.ndarray
    lmi_residual_1: float
    lmi_residual_2: float
    trace_slack: float
    p12_sigma_min: float
    p_min_eig: float
    n: int

    @property
    def valid(self) -> bool:
        return LmiReport(
            self.lmi_residual_1, self.lmi_residual_2, self.trace_slack, self.p_min_eig
        ).valid()

    @property
    def P12(self) -> np.ndarray:
        return self.P[: self.n, self.n :]


def build_h2_certificate(plant: Plant, policy: Policy) -> H2Certificate:
    """Certificate ``P = J X^{-1}``, ``Gamma = C_cl P^{-1} C_cl^T`` at ``gamma = J``."""
    g = gramian_pair(plant, policy)
    w = np.linalg.eigvalsh(g.X)
    if w[0] <= EPS_PD * max(1.0, w[-1]):
        raise IllConditionedError(
            f"X_K is singular (min eigenvalue {w[0]:.3e}); certificate construction undefined"
        )
    cl = g.closed_loop
    gamma = float(np.sqrt(g.cost_sq_x))
    P = gamma * np.linalg.inv(g.X)
    P = 0.5 * (P + P.T)
    Gamma = cl.C @ g.X @ cl.C.T / gamma
    Gamma = 0.5 * (Gamma + Gamma.T)
    rep = check_lmi_residual_h2(cl, gamma, P, Gamma)
    n = plant.n
    P12 = P[:n, n:]
    s = float(np.linalg.svd(P12, compute_uv=False)[-1]) if P12.size else 0.0
    return H2Certificate(
        gamma, P, Gamma, rep.lmi_residual_1, rep.lmi_residual_2, rep.trace_slack, s, rep.p_min_eig, n
    )


def is_nondegenerate_lqg(plant: Plant, policy: Policy) -> bool:
    """Non-degeneracy verdict via informativity; the constructed certificate
    must also pass the LMI residual checks when the policy is informative."""
    rep = informativity_test(plant, policy)
    if not rep.informative:
        return False
    cert = build_h2_certificate(plant, policy)
    return cert.valid and cert.p12_sigma_min > TAU_RANK * np.linalg.norm(cert.P, 2)

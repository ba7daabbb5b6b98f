"""H-infinity cost of dynamic output-feedback policies: norm and peak
frequencies, Clarke subgradients, stationarity, and bounded-real-lemma
certificates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import FrequencyNotPeakError, NotStabilizingError, OrderError
from .matsolve import stabilizing_are
from .statespace import ClosedLoop, Plant, Policy, assemble_closed_loop

EPS_PEAK = 1e-6
EPS_LMI = 1e-7
EPS_PD = 1e-10
TAU_P12 = 1e-6
DELTA_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
CANONICAL_FREQS = (0.0, 0.1, 0.3, 0.5, 1.0, 2.0, 5.0, 10.0)
_PROBE = np.concatenate([[0.0], np.logspace(-3, 3, 61)])
_AXIS_TOL = 1e-7


@dataclass(frozen=True)
class Peak:
    omega: float  # np.inf for the point at infinity
    sigma: float
    U: np.ndarray  # left singular basis for the top singular value
    V: np.ndarray  # matching right singular basis

    @property
    def multiplicity(self) -> int:
        return self.U.shape[1]


@dataclass(frozen=True)
class HinfEvaluation:
    gamma: float
    peaks: list[Peak]
    bracket_width: float
    flat: bool = False
    gamma_hi: float = field(default=np.nan)

    @property
    def frequencies(self) -> list[float]:
        return [pk.omega for pk in self.peaks]


def _svd_at(cl: ClosedLoop, omega: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = np.inf if np.isinf(omega) else 1j * omega
    return np.linalg.svd(cl.transfer(s))


def _sigma(cl: ClosedLoop, omega: float) -> float:
    return cl.sigma_max(omega)


def _peak_at(cl: ClosedLoop, omega: float, gamma: float) -> Peak:
    U, s, Vh = _svd_at(cl, omega)
    k = int(np.sum(s >= s[0] - EPS_PEAK * max(gamma, 1e-300)))
    return Peak(float(omega), float(s[0]), U[:, :k], Vh.conj().T[:, :k])


def _hamiltonian(cl: ClosedLoop, gamma: float) -> np.ndarray:
    A, B, C, D = cl.A, cl.B, cl.C, cl.D
    R = gamma**2 * np.eye(D.shape[1]) - D.T @ D
    Ri = np.linalg.inv(R)
    Ae = A + B @ Ri @ D.T @ C
    return np.block([
        [Ae, B @ Ri @ B.T],
        [-C.T @ (np.eye(D.shape[0]) + D @ Ri @ D.T) @ C, -Ae.T],
    ])


def _axis_frequencies(cl: ClosedLoop, gamma: float) -> np.ndarray:
    H = _hamiltonian(cl, gamma)
    ev = np.linalg.eigvals(H)
    scale = max(1.0, np.linalg.norm(H, 2))
    on_axis = np.abs(ev.real) <= _AXIS_TOL * scale
    w = np.abs(ev.imag[on_axis])
    return np.unique(np.round(w, 14))


def _refine(cl: ClosedLoop, omega: float) -> tuple[float, float]:
    """Local maximization of sigma_max around ``omega``."""
    if np.isinf(omega):
        return omega, _sigma(cl, omega)
    lo = max(0.0, omega * 0.9 - 1e-3)
    hi = omega * 1.1 + 1e-3
    res = optimize.minimize_scalar(
        lambda w: -_sigma(cl, w), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-10 * (1 + omega)},
    )
    cand = [(omega, _sigma(cl, omega)), (float(res.x), -float(res.fun))]
    return max(cand, key=lambda t: t[1])


def hinf_norm(closed_loop: ClosedLoop, tol: float = 1e-10, max_iter: int = 200) -> HinfEvaluation:
    """H-infinity norm of a stable closed loop with its peak frequencies.

    The level-set iteration evaluates ``sigma_max`` at the midpoints of the
    imaginary-axis eigenvalues of the Hamiltonian and raises the lower bound
    until the Hamiltonian at ``(1 + 2 tol) gamma_lo`` has none. The returned
    ``gamma`` is the best attained value, so the true norm lies in
    ``[gamma, gamma_hi]``.
    """
    cl = closed_loop
    if not cl.stable:
        raise NotStabilizingError(f"closed loop not stable (abscissa {cl.abscissa:.3e})")
    if cl.order == 0:
        pk = _peak_at(cl, np.inf, _sigma(cl, np.inf))
        return HinfEvaluation(pk.sigma, [pk], 0.0, True, pk.sigma)

    # initial candidates: infinity, DC, and the resonant frequencies of A_cl
    cands = [np.inf, 0.0]
    ev = np.linalg.eigvals(cl.A)
    cands += [float(abs(lam)) for lam in ev]
    cands += [float(abs(lam.imag)) for lam in ev if lam.imag != 0]
    evals = {w: _sigma(cl, w) for w in cands}
    gamma_lo = max(evals.values())
    if gamma_lo == 0.0:
        return HinfEvaluation(0.0, [_peak_at(cl, 0.0, 0.0)], 0.0, True, 0.0)
    d_floor = evals[np.inf]

    for _ in range(max_iter):
        gamma = max((1.0 + 2.0 * tol) * gamma_lo, d_floor * (1.0 + 1e-12))
        w = _axis_frequencies(cl, gamma)
        if w.size == 0:
            break
        mids = list(w) if w.size == 1 else list(0.5 * (w[:-1] + w[1:])) + list(w)
        new = {float(x): _sigma(cl, float(x)) for x in mids}
        evals.update(new)
        best = max(new.values())
        if best <= gamma_lo * (1.0 + 1e-14):
            # reported crossings do not raise the bound: treat as numerical noise
            if all(_sigma(cl, float(x)) < gamma * (1.0 - 1e-8) for x in w):
                break
            gamma_lo = max(gamma_lo, best)
            break
        gamma_lo = best
    gamma_hi = (1.0 + 2.0 * tol) * gamma_lo

    # refine the strongest candidates into peaks
    ranked = sorted(evals.items(), key=lambda t: -t[1])
    finite = [w for w, s in ranked if np.isfinite(w) and s >= gamma_lo * (1 - 1e-3)][:20]
    refined = {np.inf: evals[np.inf]}
    for w0 in finite:
        w1, s1 = _refine(cl, w0)
        refined[w1] = s1
    gamma_best = max(gamma_lo, max(refined.values()))
    gamma_hi = max(gamma_hi, gamma_best)

    probe = np.array([_sigma(cl, w) for w in _PROBE])
    flat = (
        abs(evals[np.inf] - gamma_best) <= EPS_PEAK * gamma_best
        and probe.max() - probe.min() <= EPS_PEAK * gamma_best
    )
    peaks: list[Peak] = []
    if flat:
        for w in CANONICAL_FREQS:
            peaks.append(_peak_at(cl, w, gamma_best))
        peaks.append(_peak_at(cl, np.inf, gamma_best))
    else:
        keep = sorted(w for w, s in refined.items() if s >= gamma_best * (1.0 - EPS_PEAK))
        merged: list[float] = []
        for w in keep:
            if merged and np.isfinite(w) and np.isfinite(merged[-1]) and abs(w - merged[-1]) <= 1e-6 * (1 + abs(w)):
                if refined[w] > refined[merged[-1]]:
                    merged[-1] = w
                continue
            merged.append(w)
        peaks = [_peak_at(cl, w, gamma_best) for w in merged]
    return HinfEvaluation(gamma_best, peaks, (gamma_hi - gamma_lo) / gamma_best, flat, gamma_hi)


def hinf_cost(plant: Plant, policy: Policy, tol: float = 1e-10) -> float:
    return hinf_norm(assemble_closed_loop(plant, policy), tol).gamma


def frequency_grid_norm(closed_loop: ClosedLoop, n: int = 100_000, lo: float = -6, hi: float = 6) -> float:
    """Brute-force maximum of ``sigma_max`` over a log-spaced frequency grid."""
    cl = closed_loop
    w = np.concatenate([[0.0], np.logspace(lo, hi, n)])
    k = cl.order
    # batched evaluation: solve (jw I - A) X = B for all w at once
    M = 1j * w[:, None, None] * np.eye(k)[None] - cl.A[None]
    X = np.linalg.solve(M, np.broadcast_to(cl.B.astype(complex), (w.size,) + cl.B.shape))
    T = cl.C[None] @ X + cl.D[None]
    s = np.linalg.svd(T, compute_uv=False)[:, 0]
    return float(max(s.max(), cl.sigma_max(np.inf)))


# ---------------------------------------------------------------------------
# Clarke subgradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubgradientElement:
    Phi: np.ndarray
    frequencies: list[float]
    weights: list[np.ndarray]
    imag_residue: float

    def D_K(self, m: int, p: int) -> np.ndarray:
        return self.Phi[:m, :p]

    def as_policy(self, m: int, p: int) -> Policy:
        return Policy.from_block(self.Phi, m, p)


def _chain_factors(plant: Plant, policy: Policy, cl: ClosedLoop, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """Left and right factors with ``dT = Rf dK Lf`` at ``s = j omega``."""
    n, m, p, q = plant.n, plant.m, plant.p, policy.q
    B2 = np.block([[plant.B, np.zeros((n, q))], [np.zeros((q, m)), np.eye(q)]])
    C2 = np.block([[plant.C, np.zeros((p, q))], [np.zeros((q, n)), np.eye(q)]])
    D12 = np.block([[np.zeros((n, m)), np.zeros((n, q))], [plant.R_half, np.zeros((m, q))]])
    D21 = np.block([[np.zeros((p, n)), plant.V_half], [np.zeros((q, n)), np.zeros((q, p))]])
    if np.isinf(omega):
        return D12.astype(complex), D21.astype(complex)
    Res = cl.resolvent(1j * omega)
    return D12 + cl.C @ Res @ B2, D21 + C2 @ Res @ cl.B


def clarke_subgradient(
    plant: Plant,
    policy: Policy,
    evaluation: HinfEvaluation,
    terms: Sequence[tuple[float, np.ndarray]],
    eps_peak: float = 1e-5,
) -> SubgradientElement:
    """Element of the Clarke subdifferential over the block ``[[D_K, C_K], [B_K, A_K]]``.

    ``terms`` pairs a peak frequency with a PSD Hermitian weight expressed in
    the basis of top left singular vectors at that frequency; the traces of
    all weights must sum to one.
    """
    cl = assemble_closed_loop(plant, policy)
    J = evaluation.gamma
    total = sum(float(np.trace(np.atleast_2d(Y)).real) for _, Y in terms)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"weights must have unit total trace, got {total:.15g}")
    acc = np.zeros((plant.m + policy.q, plant.p + policy.q), dtype=complex)
    freqs, weights = [], []
    for omega, Y in terms:
        Y = np.atleast_2d(np.asarray(Y, dtype=complex))
        if np.linalg.eigvalsh(0.5 * (Y + Y.conj().T))[0] < -1e-12:
            raise ValueError("weights must be positive semidefinite")
        pk = _peak_at(cl, omega, J)
        if abs(pk.sigma - J) > eps_peak * J:
            raise FrequencyNotPeakError(f"sigma_max at omega={omega} is {pk.sigma:.8g}, norm is {J:.8g}")
        Qs = pk.U
        if Y.shape != (Qs.shape[1], Qs.shape[1]):
            raise ValueError(f"weight at omega={omega} must be {Qs.shape[1]}x{Qs.shape[1]}")
        T = cl.transfer(np.inf if np.isinf(omega) else 1j * omega)
        Rf, Lf = _chain_factors(plant, policy, cl, omega)
        M = Lf @ T.conj().T @ Qs @ Y @ Qs.conj().T @ Rf
        if np.isfinite(omega) and omega != 0.0:
            # the peak set is closed under conjugation; split the weight over +-omega
            Tm = cl.transfer(-1j * omega)
            Rm, Lm = _chain_factors(plant, policy, cl, -omega)
            Qc = Qs.conj()
            M = 0.5 * (M + Lm @ Tm.conj().T @ Qc @ Y.conj() @ Qc.conj().T @ Rm)
        acc += M.T
        freqs.append(float(omega))
        weights.append(Y)
    acc /= J
    return SubgradientElement(acc.real.copy(), freqs, weights, float(np.abs(acc.imag).max(initial=0.0)))


def _generators(plant: Plant, policy: Policy, ev: HinfEvaluation) -> list[np.ndarray]:
    """Rank-one subgradient generators, one per sampled peak direction."""
    out = []
    for pk in ev.peaks:
        k = pk.multiplicity
        dirs = [np.eye(k)[:, i] for i in range(k)]
        for i in range(k):
            for j in range(i + 1, k):
                e_i, e_j = np.eye(k)[:, i], np.eye(k)[:, j]
                dirs += [(e_i + e_j) / np.sqrt(2), (e_i + 1j * e_j) / np.sqrt(2)]
        for d in dirs:
            Y = np.outer(d, d.conj())
            out.append(clarke_subgradient(plant, policy, ev, [(pk.omega, Y)]).Phi)
    return out


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def min_norm_hull(G: np.ndarray, max_iter: int = 10_000, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm point in the convex hull of the rows of ``G``.

    Accelerated projected gradient on ``min 0.5 |G^T lam|^2`` over the simplex.
    Returns the point and the weights.
    """
    k = G.shape[0]
    if k == 1:
        return G[0].copy(), np.ones(1)
    H = G @ G.T
    L = max(np.linalg.eigvalsh(H)[-1], 1e-300)
    scale = max(float(np.max(np.diag(H))), 1e-300)
    lam = np.full(k, 1.0 / k)
    y, t = lam.copy(), 1.0
    f_old = np.inf
    for _ in range(max_iter):
        lam_new = project_simplex(y - (H @ y) / L)
        g = H @ lam_new
        # Frank-Wolfe gap bounds the suboptimality of the squared norm
        if lam_new @ g - g.min() <= tol * scale or np.linalg.norm(lam_new - lam) <= tol:
            lam = lam_new
            break
        f_new = lam_new @ g
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if f_new > f_old:
            t_new = 1.0  # adaptive restart
            y = lam_new
        else:
            y = lam_new + ((t - 1.0) / t_new) * (lam_new - lam)
        lam, t, f_old = lam_new, t_new, f_new
    return G.T @ lam, lam


def stationarity_measure(
    plant: Plant,
    policy: Policy,
    n_freq_samples: int = len(CANONICAL_FREQS),
    include_D: bool = True,
    evaluation: Optional[HinfEvaluation] = None,
) -> float:
    """Norm of the min-norm element in the hull of sampled subgradients.

    Flat responses are sampled on ``n_freq_samples`` frequencies. With
    ``include_D=False`` the ``D_K`` block is dropped (strictly proper search).
    """
    cl = assemble_closed_loop(plant, policy)
    ev = evaluation if evaluation is not None else hinf_norm(cl)
    if ev.flat and n_freq_samples != len(CANONICAL_FREQS):
        freqs = [0.0] + list(np.logspace(-1, 1, max(n_freq_samples - 1, 1)))
        peaks = [_peak_at(cl, w, ev.gamma) for w in freqs] + [_peak_at(cl, np.inf, ev.gamma)]
        ev = HinfEvaluation(ev.gamma, peaks, ev.bracket_width, True, ev.gamma_hi)
    gens = _generators(plant, policy, ev)
    m, p = plant.m, plant.p
    rows = []
    for Phi in gens:
        if not include_D:
            Phi = Phi.copy()
            Phi[:m, :p] = 0.0
        rows.append(Phi.ravel())
    point, _ = min_norm_hull(np.array(rows))
    return float(np.linalg.norm(point))


# ---------------------------------------------------------------------------
# Bounded-real-lemma certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BrlCertificate:
    gamma: float
    P: np.ndarray
    lmi_residual: float
    p_min_eig: float
    p12_sigma_min: float
    relaxation_delta: float
    n: int

    @property
    def valid(self) -> bool:
        return self.lmi_residual <= EPS_LMI and self.p_min_eig >= EPS_PD

    @property
    def P12(self) -> np.ndarray:
        return self.P[: self.n, self.n :]


def brl_lmi_residual(closed_loop: ClosedLoop, gamma: float, P: np.ndarray) -> float:
    """Largest eigenvalue of the bounded-real LMI block at ``(gamma, P)``."""
    A, B, C, D = closed_loop.A, closed_loop.B, closed_loop.C, closed_loop.D
    d, r = B.shape[1], C.shape[0]
    M = np.block([
        [A.T @ P + P @ A, P @ B, C.T],
        [B.T @ P, -gamma * np.eye(d), D.T],
        [C, D, -gamma * np.eye(r)],
    ])
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def _brl_riccati(cl: ClosedLoop, gamma: float, eta: float) -> Optional[np.ndarray]:
    A, B, C, D = cl.A, cl.B, cl.C, cl.D
    Rg = gamma * np.eye(D.shape[1]) - D.T @ D / gamma
    if np.linalg.eigvalsh(Rg)[0] <= 0:
        return None
    Ri = np.linalg.inv(Rg)
    At = A + B @ Ri @ D.T @ C / gamma
    G = -B @ Ri @ B.T
    Qm = C.T @ C / gamma + C.T @ D @ Ri @ D.T @ C / gamma**2 + eta * np.eye(A.shape[0])
    res = stabilizing_are(At, 0.5 * (G + G.T), 0.5 * (Qm + Qm.T))
    return res.X if res.ok else None


def brl_certificate(
    closed_loop: ClosedLoop,
    gamma: float,
    delta_schedule: Iterable[float] = DELTA_SCHEDULE,
    n: Optional[int] = None,
    all_candidates: bool = False,
):
    """Bounded-real certificate at level ``gamma`` built from relaxed Riccati solves.

    For each ``delta`` the storage matrix solves the bounded-real Riccati
    equation at ``gamma (1 + delta)`` with a small ``eta I`` added to the
    constant term, which keeps it positive definite on unobservable modes. The first ``P`` whose
    LMI residual at ``gamma`` itself passes is returned (``None`` if none
    does). With ``all_candidates=True`` every valid candidate is returned.
    """
    cl = closed_loop
    if not cl.stable:
        raise NotStabilizingError("bounded-real certificate needs a stable closed loop")
    k = cl.order
    n = k // 2 if n is None else n
    found = []
    for delta in delta_schedule:
        gp = gamma * (1.0 + delta)
        # eta must stay small against the gap delta*gamma or the regularized
        # system exceeds gamma*(1+delta); shrink it until the solve succeeds
        for eta_factor in (1e-1, 1e-3, 1e-5, 0.0):
            P = _brl_riccati(cl, gp, eta_factor * delta * gamma)
            if P is not None:
                break
        if P is None:
            continue
        P = 0.5 * (P + P.T)
        resid = brl_lmi_residual(cl, gamma, P)
        pmin = float(np.linalg.eigvalsh(P)[0])
        P12 = P[:n, n:]
        s12 = float(np.linalg.svd(P12, compute_uv=False)[-1]) if P12.size else 0.0
        cert = BrlCertificate(gamma, P, resid, pmin, s12, delta, n)
        if cert.valid:
            if not all_candidates:
                return cert
            found.append(cert)
    return found if all_candidates else None


@dataclass(frozen=True)
class HinfDegeneracyReport:
    verdict: str  # "certified-nondegenerate" | "no-certificate-found" | "degenerate-evidence"
    gamma: float
    best_p12_sigma_min: float
    certificates: list[BrlCertificate]


def is_nondegenerate_hinf(plant: Plant, policy: Policy) -> HinfDegeneracyReport:
    if policy.q != plant.n:
        raise OrderError(f"full-order policy required (q={policy.q}, n={plant.n})")
    cl = assemble_closed_loop(plant, policy)
    ev = hinf_norm(cl, tol=1e-12)
    gamma = ev.gamma_hi
    certs = brl_certificate(cl, gamma, n=plant.n, all_candidates=True)
    if not certs:
        return HinfDegeneracyReport("no-certificate-found", gamma, float("nan"), [])
    best = max(certs, key=lambda c: c.p12_sigma_min / np.linalg.norm(c.P, 2))
    if best.p12_sigma_min > TAU_P12 * np.linalg.norm(best.P, 2):
        verdict = "certified-nondegenerate"
    else:
        verdict = "degenerate-evidence"
    return HinfDegeneracyReport(verdict, gamma, best.p12_sigma_min, certs)


def boundary_path_hinf(plant: Plant, path: str, epsilons: Iterable[float]) -> list[tuple[float, float]]:
    """H-infinity cost along one of the two boundary paths of the scalar example."""
    from .instances import hinf_path_1, hinf_path_2

    make = {"K1": hinf_path_1, "K2": hinf_path_2}[path]
    out = []
    for eps in epsilons:
        if not 0.0 < eps < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
        out.append((float(eps), hinf_cost(plant, make(eps))))
    return out


# ---------------------------------------------------------------------------
# Batched evaluation (landscape scans)
# ---------------------------------------------------------------------------

def _batch_sigma(A, B, C, D, w: float) -> np.ndarray:
    if np.isinf(w):
        T = D.astype(complex)
    else:
        k = A.shape[1]
        T = C @ np.linalg.solve(1j * w * np.eye(k) - A, B.astype(complex)) + D
    return np.linalg.svd(T, compute_uv=False)[:, 0]


def _batch_sigma_at(A, B, C, D, w: np.ndarray) -> np.ndarray:
    k = A.shape[1]
    M = 1j * w[:, None, None] * np.eye(k) - A
    T = C @ np.linalg.solve(M, B.astype(complex)) + D
    return np.linalg.svd(T, compute_uv=False)[:, 0]


def _batch_hamiltonian(A, B, C, D, gamma: np.ndarray) -> np.ndarray:
    d, r = D.shape[2], D.shape[1]
    Dt = np.swapaxes(D, 1, 2)
    R = gamma[:, None, None] ** 2 * np.eye(d) - Dt @ D
    Ri = np.linalg.inv(R)
    Ae = A + B @ Ri @ Dt @ C
    Ct = np.swapaxes(C, 1, 2)
    top = np.concatenate([Ae, B @ Ri @ np.swapaxes(B, 1, 2)], axis=2)
    bot = np.concatenate([-Ct @ (np.eye(r) + D @ Ri @ Dt) @ C, -np.swapaxes(Ae, 1, 2)], axis=2)
    return np.concatenate([top, bot], axis=1)


def batch_hinf_bounds(A, B, C, D, tol: float = 1e-10, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Brackets ``[lo, hi]`` on the H-infinity norms of a stack of stable systems.

    ``lo`` is an attained value of ``sigma_max`` or a level at which the
    Hamiltonian has imaginary eigenvalues; ``hi`` is a level at which it has
    none. Bisection stops once ``hi - lo <= 2 tol lo``. Applies the same
    imaginary-axis test as :func:`hinf_norm`.
    """
    A, B, C, D = (np.asarray(M, dtype=float) for M in (A, B, C, D))
    N = A.shape[0]
    if N == 0:
        return np.zeros(0), np.zeros(0)
    ev = np.linalg.eigvals(A)
    lo = _batch_sigma(A, B, C, D, np.inf)
    d_floor = lo.copy()
    for w in np.concatenate([[0.0], np.logspace(-3, 3, 25)]):
        lo = np.maximum(lo, _batch_sigma(A, B, C, D, w))
    for col in range(ev.shape[1]):
        for wv in (np.abs(ev[:, col]), np.abs(ev[:, col].imag)):
            for u in np.unique(wv):
                sel = wv == u
                lo[sel] = np.maximum(lo[sel], _batch_sigma(A[sel], B[sel], C[sel], D[sel], u))

    def attained(g: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Largest sigma_max at the reported crossings and their midpoints."""
        H = _batch_hamiltonian(A[idx], B[idx], C[idx], D[idx], g)
        e = np.linalg.eigvals(H)
        scale = np.maximum(1.0, np.linalg.norm(H, 2, axis=(1, 2)))
        on_axis = np.abs(e.real) <= _AXIS_TOL * scale[:, None]
        W = np.sort(np.where(on_axis, np.abs(e.imag), np.nan), axis=1)
        W = np.concatenate([W, 0.5 * (W[:, 1:] + W[:, :-1])], axis=1)
        best = np.zeros(idx.size)
        for col in range(W.shape[1]):
            sel = np.nonzero(np.isfinite(W[:, col]))[0]
            if sel.size:
                s = _batch_sigma_at(A[idx[sel]], B[idx[sel]], C[idx[sel]], D[idx[sel]], W[sel, col])
                best[sel] = np.maximum(best[sel], s)
        return best

    # a level counts as crossed only if sigma_max attains it (within rounding)
    lo = np.maximum(lo, 1e-300)
    hi = np.maximum(2.0 * lo, d_floor * (1.0 + 1e-12))
    idx = np.arange(N)
    for _ in range(max_iter):
        if idx.size == 0:
            break
        s = attained(hi[idx], idx)
        c = s >= hi[idx] * (1.0 - 1e-13)
        lo[idx] = np.maximum(lo[idx], s)
        hi[idx[c]] = 2.0 * np.maximum(hi[idx[c]], s[c])
        idx = idx[c]
    for _ in range(max_iter):
        idx = np.nonzero(hi - lo > 2.0 * tol * lo)[0]
        if idx.size == 0:
            break
        mid = np.maximum(0.5 * (lo[idx] + hi[idx]), d_floor[idx] * (1.0 + 1e-12))
        s = attained(mid, idx)
        c = s >= mid * (1.0 - 1e-13)
        lo[idx] = np.maximum(lo[idx], s)
        hi[idx[~c]] = mid[~c]
        # keep the bracket ordered when rounding lifts lo past hi
        hi[idx] = np.maximum(hi[idx], lo[idx])
    return lo, hi


def _batch_stabilizing_are(At, G, Qm) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing solutions of ``At^T X + X At - X G X + Qm = 0`` for a stack.

    Uses eigenvectors of the Hamiltonian; returns ``(X, ok)`` where ``ok``
    flags cells whose spectrum splits cleanly and whose stable basis is a
    well-conditioned graph.
    """
    N, k = At.shape[:2]
    H = np.concatenate([
        np.concatenate([At, -G], axis=2),
        np.concatenate([-Qm, -np.swapaxes(At, 1, 2)], axis=2),
    ], axis=1)
    ev, V = np.linalg.eig(H)
    floor = 1e3 * np.finfo(float).eps * np.linalg.norm(H, 2, axis=(1, 2))
    tol = np.maximum(1e-7 * (1.0 + np.abs(ev)), floor[:, None])
    ok = np.min(np.abs(ev.real) / tol, axis=1) > 1.0
    ok &= np.sum(ev.real < 0, axis=1) == k
    order = np.argsort(ev.real, axis=1)[:, :k]
    Vs = np.take_along_axis(V, order[:, None, :], axis=2)
    U1, U2 = Vs[:, :k, :], Vs[:, k:, :]
    cond = np.linalg.cond(U1)
    ok &= np.isfinite(cond) & (cond <= 1e12)
    X = np.zeros((N, k, k))
    good = np.nonzero(ok)[0]
    if good.size:
        sol = np.linalg.solve(np.swapaxes(U1[good], 1, 2), np.swapaxes(U2[good], 1, 2))
        Xg = np.swapaxes(sol, 1, 2).real
        X[good] = 0.5 * (Xg + np.swapaxes(Xg, 1, 2))
    return X, ok


def batch_brl_lmi_residual(A, B, C, D, gamma: np.ndarray, P: np.ndarray) -> np.ndarray:
    N, k = A.shape[:2]
    d, r = B.shape[2], C.shape[1]
    T = lambda M: np.swapaxes(M, 1, 2)
    g = gamma[:, None, None]
    M = np.concatenate([
        np.concatenate([T(A) @ P + P @ A, P @ B, T(C)], axis=2),
        np.concatenate([T(B) @ P, -g * np.eye(d), T(D)], axis=2),
        np.concatenate([C, D, -g * np.eye(r)], axis=2),
    ], axis=1)
    return np.linalg.eigvalsh(0.5 * (M + T(M)))[:, -1]


def batch_brl_certificates(
    A, B, C, D, gamma: np.ndarray, n: int, delta_schedule: Iterable[float] = DELTA_SCHEDULE
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked version of :func:`brl_certificate` (first valid candidate).

    Returns ``(p12_sigma_min, p_min_eig, found)``; cells with ``found`` false
    should be retried with the per-system routine.
    """
    A, B, C, D = (np.asarray(M, dtype=float) for M in (A, B, C, D))
    N, k = A.shape[:2]
    T = lambda M: np.swapaxes(M, 1, 2)
    s12 = np.full(N, np.nan)
    pmin = np.full(N, np.nan)
    found = np.zeros(N, dtype=bool)
    for delta in delta_schedule:
        pending = np.nonzero(~found)[0]
        if pending.size == 0:
            break
        gp = gamma[pending] * (1.0 + delta)
        Ap, Bp, Cp, Dp = A[pending], B[pending], C[pending], D[pending]
        Rg = gp[:, None, None] * np.eye(Dp.shape[2]) - T(Dp) @ Dp / gp[:, None, None]
        rg_ok = np.linalg.eigvalsh(Rg)[:, 0] > 0
        Rg[~rg_ok] = np.eye(Dp.shape[2])
        Ri = np.linalg.inv(Rg)
        g1 = gp[:, None, None]
        At = Ap + Bp @ Ri @ T(Dp) @ Cp / g1
        G = -Bp @ Ri @ T(Bp)
        Q0 = T(Cp) @ Cp / g1 + T(Cp) @ Dp @ Ri @ T(Dp) @ Cp / g1**2
        P = np.zeros((pending.size, k, k))
        have = np.zeros(pending.size, dtype=bool)
        for eta_factor in (1e-1, 1e-3, 1e-5, 0.0):
            todo = np.nonzero(rg_ok & ~have)[0]
            if todo.size == 0:
                break
            eta = eta_factor * delta * gamma[pending[todo]]
            Qm = Q0[todo] + eta[:, None, None] * np.eye(k)
            X, ok = _batch_stabilizing_are(At[todo], 0.5 * (G[todo] + T(G[todo])), 0.5 * (Qm + T(Qm)))
            P[todo[ok]] = X[ok]
            have[todo[ok]] = True
        sel = np.nonzero(have)[0]
        if sel.size == 0:
            continue
        cells = pending[sel]
        Ps = P[sel]
        resid = batch_brl_lmi_residual(A[cells], B[cells], C[cells], D[cells], gamma[cells], Ps)
        pm = np.linalg.eigvalsh(Ps)[:, 0]
        valid = (resid <= EPS_LMI) & (pm >= EPS_PD)
        vc = cells[valid]
        P12 = Ps[valid][:, :n, n:]
        s12[vc] = np.linalg.svd(P12, compute_uv=False)[:, -1] if P12.size else 0.0
        pmin[vc] = pm[valid]
        found[vc] = True
    return s12, pmin, found

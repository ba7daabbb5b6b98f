"""Policy search (gradient descent for LQG, gradient sampling for H-infinity),
Riccati baselines, and landscape scans over policy parameters."""

from __future__ import annotations

import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import hinf, lqg
from .errors import DomainError, IllConditionedError, NotStabilizingError, NumericalError
from .matsolve import gamma_iteration, lqg_optimal_policy, solve_lqg_riccati
from .statespace import (
    EPS_STAB,
    Plant,
    Policy,
    assemble_closed_loop,
    is_internally_stabilizing,
    policy_to_vector,
    vector_to_policy,
)


@dataclass(frozen=True)
class Iterate:
    index: int
    policy: Policy
    cost: float
    stationarity: float
    step: float


@dataclass
class SearchTrace:
    iterates: list[Iterate] = field(default_factory=list)
    terminal_reason: str = "max-iter"  # max-iter | tol | step-underflow | left-domain
    wall_time: float = 0.0

    @property
    def costs(self) -> np.ndarray:
        return np.array([it.cost for it in self.iterates])

    @property
    def final(self) -> Iterate:
        return self.iterates[-1]

    def to_dict(self, include_policies: bool = False) -> dict:
        rows = []
        for it in self.iterates:
            row = {"iter": it.index, "cost": it.cost, "stationarity": it.stationarity, "step": it.step}
            if include_policies:
                row["policy"] = it.policy.to_dict()
            rows.append(row)
        return {
            "terminal_reason": self.terminal_reason,
            "wall_time": self.wall_time,
            "final_cost": self.final.cost,
            "final_policy": self.final.policy.to_dict(),
            "iterates": rows,
        }


def _stable(plant: Plant, policy: Policy) -> bool:
    return is_internally_stabilizing(plant, policy)[0]


# ---------------------------------------------------------------------------
# LQG gradient descent
# ---------------------------------------------------------------------------

def gradient_descent_lqg(
    plant: Plant,
    K0: Policy,
    step0: float = 1.0,
    armijo_c: float = 1e-4,
    backtrack_ratio: float = 0.5,
    max_iter: int = 500,
    grad_tol: float = 1e-7,
    min_step: float = 1e-16,
) -> SearchTrace:
    """Backtracking gradient descent on the LQG cost over ``(A_K, B_K, C_K)``.

    Trial steps that leave the stabilizing set are rejected and shrunk. The
    first trial step of each iteration is twice the previous accepted step
    (``step0`` on the first iteration).
    """
    if not K0.strictly_proper:
        raise DomainError("gradient descent on the LQG cost needs D_K = 0")
    if K0.q != plant.n:
        raise DomainError(f"full-order initial policy required (q={K0.q}, n={plant.n})")
    if not _stable(plant, K0):
        raise NotStabilizingError("initial policy is not stabilizing")
    t_start = time.perf_counter()
    trace = SearchTrace()
    K = K0
    g = lqg.lqg_gradient(plant, K)
    J = g.cost
    trace.iterates.append(Iterate(0, K, J, g.norm(), 0.0))
    x = policy_to_vector(K)
    step = step0
    for it in range(1, max_iter + 1):
        gv = g.vector()
        gn2 = float(gv @ gv)
        if np.sqrt(gn2) <= grad_tol:
            trace.terminal_reason = "tol"
            break
        t = step
        accepted = False
        while t >= min_step:
            x_try = x - t * gv
            K_try = vector_to_policy(x_try, K)
            if _stable(plant, K_try):
                try:
                    J_try = lqg.lqg_cost(plant, K_try)
                except (DomainError, NumericalError):
                    J_try = np.inf
                if J_try <= J - armijo_c * t * gn2:
                    accepted = True
                    break
            t *= backtrack_ratio
        if not accepted:
            trace.terminal_reason = "step-underflow"
            break
        x, K = x_try, K_try
        g = lqg.lqg_gradient(plant, K)
        J = g.cost
        trace.iterates.append(Iterate(it, K, J, g.norm(), t))
        step = 2.0 * t
    else:
        if trace.iterates[-1].stationarity <= grad_tol:
            trace.terminal_reason = "tol"
    trace.wall_time = time.perf_counter() - t_start
    return trace


# ---------------------------------------------------------------------------
# H-infinity gradient sampling
# ---------------------------------------------------------------------------

def hinf_value_and_gradient(plant: Plant, policy: Policy, tol: float = 1e-10) -> tuple[float, np.ndarray, bool]:
    """Cost, subgradient at the top peak, and whether the point looks smooth.

    The point counts as smooth when the peak is unique and its largest
    singular value is separated from the next by more than ``1e-6 gamma``.
    """
    cl = assemble_closed_loop(plant, policy)
    ev = hinf.hinf_norm(cl, tol)
    top = max(ev.peaks, key=lambda pk: pk.sigma)
    s = np.linalg.svd(cl.transfer(np.inf if np.isinf(top.omega) else 1j * top.omega), compute_uv=False)
    gap = s[0] - s[1] if s.size > 1 else np.inf
    smooth = len(ev.peaks) == 1 and gap > 1e-6 * ev.gamma
    e = np.zeros((top.multiplicity, top.multiplicity))
    e[0, 0] = 1.0
    Phi = hinf.clarke_subgradient(plant, policy, ev, [(top.omega, e)]).Phi
    return ev.gamma, Phi, smooth


def _block_to_vector(Phi: np.ndarray, m: int, p: int) -> np.ndarray:
    """Reorder a block gradient ``[[D, C], [B, A]]`` to the search vector layout."""
    return np.concatenate([Phi[m:, p:].ravel(), Phi[m:, :p].ravel(), Phi[:m, p:].ravel(), Phi[:m, :p].ravel()])


def gradient_sampling_hinf(
    plant: Plant,
    K0: Policy,
    n_samples: Optional[int] = None,
    radius0: Optional[float] = None,
    radius_shrink: float = 0.5,
    radius_floor: float = 1e-8,
    max_iter: int = 200,
    stat_tol: float = 1e-6,
    seed: int = 0,
    armijo_c: float = 1e-6,
    include_D: bool = True,
) -> SearchTrace:
    """Gradient sampling on the H-infinity cost.

    Each iteration collects subgradients at the current point and at
    ``n_samples`` stabilizing points drawn uniformly from a ball of the
    current radius, then backtracks along the normalized negative
    minimum-norm element of their hull. The radius shrinks when that element
    is small or no descent step exists.
    """
    if not _stable(plant, K0):
        raise NotStabilizingError("initial policy is not stabilizing")
    t_start = time.perf_counter()
    m, p = plant.m, plant.p
    x = policy_to_vector(K0, include_D)
    dim = x.size
    n_samples = 2 * dim + 1 if n_samples is None else n_samples
    radius = 0.1 * (1.0 + np.linalg.norm(K0.block())) if radius0 is None else radius0

    def to_policy(v: np.ndarray) -> Policy:
        return vector_to_policy(v, K0, include_D)

    def grad_vec(Phi: np.ndarray) -> np.ndarray:
        v = _block_to_vector(Phi, m, p)
        return v if include_D else v[: dim]

    K = K0
    J, Phi, _ = hinf_value_and_gradient(plant, K)
    trace = SearchTrace([Iterate(0, K, J, float(np.linalg.norm(grad_vec(Phi))), 0.0)])
    t_prev = 0.5
    for it in range(1, max_iter + 1):
        grads = [grad_vec(Phi)]
        for i in range(n_samples):
            rng = np.random.default_rng([seed, it, i])
            u = rng.standard_normal(dim)
            u *= radius * rng.random() ** (1.0 / dim) / np.linalg.norm(u)
            K_s = to_policy(x + u)
            if not _stable(plant, K_s):
                continue
            try:
                _, Phi_s, _ = hinf_value_and_gradient(plant, K_s)
            except (DomainError, NumericalError):
                continue
            grads.append(grad_vec(Phi_s))
        d, _ = hinf.min_norm_hull(np.array(grads), max_iter=2000, tol=1e-8)
        dn = float(np.linalg.norm(d))
        if dn <= stat_tol:
            radius *= radius_shrink
            trace.iterates.append(Iterate(it, K, J, dn, 0.0))
            if radius < radius_floor:
                trace.terminal_reason = "tol"
                break
            continue
        u = d / dn
        t = min(1.0, 2.0 * t_prev)
        accepted = False
        while t >= radius_floor:
            K_try = to_policy(x - t * u)
            if _stable(plant, K_try):
                try:
                    J_try = hinf.hinf_cost(plant, K_try)
                except (DomainError, NumericalError):
                    J_try = np.inf
                if J_try <= J - armijo_c * t * dn:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            radius *= radius_shrink
            trace.iterates.append(Iterate(it, K, J, dn, 0.0))
            if radius < radius_floor:
                trace.terminal_reason = "tol"
                break
            continue
        x = x - t * u
        t_prev = t
        K = K_try
        J, Phi, _ = hinf_value_and_gradient(plant, K)
        trace.iterates.append(Iterate(it, K, J, dn, t))
    trace.wall_time = time.perf_counter() - t_start
    return trace


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def riccati_baseline(plant: Plant, mode: str = "lqg", tol: float = 1e-6) -> tuple[float, Policy]:
    """Riccati-based optimum: the LQG controller, or the central H-infinity
    controller at the end of gamma iteration (cost is its actual norm)."""
    if mode == "lqg":
        K = lqg_optimal_policy(solve_lqg_riccati(plant), plant)
        return lqg.lqg_cost(plant, K), K
    if mode == "hinf":
        gi = gamma_iteration(plant, tol=tol)
        return hinf.hinf_cost(plant, gi.policy), gi.policy
    raise ValueError(f"unknown mode {mode!r}")


def perturbed_start(plant: Plant, K: Policy, size: float, seed: int) -> Policy:
    """Stabilizing policy at Frobenius distance ``size`` from ``K`` in ``(A_K, B_K, C_K)``."""
    rng = np.random.default_rng(seed)
    x = policy_to_vector(K)
    for _ in range(1000):
        u = rng.standard_normal(x.size)
        K_try = vector_to_policy(x + size * u / np.linalg.norm(u), K)
        if _stable(plant, K_try):
            return K_try
    raise NumericalError("no stabilizing perturbation found")


# ---------------------------------------------------------------------------
# Boundary paths
# ---------------------------------------------------------------------------

def boundary_path_lqg(
    plant: Plant, path: str, epsilons: Iterable[float], dps: Optional[int] = None
) -> list[tuple[float, float]]:
    """LQG cost along a boundary path of the scalar example.

    With ``dps`` set the costs are computed in ``dps``-digit arithmetic, which
    is needed once the slow closed-loop mode drops below double precision.
    """
    from .instances import PATH_ENTRIES, path_policy

    eps = [float(e) for e in epsilons]
    for e in eps:
        if not 0.0 < e < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {e}")
    if dps is not None:
        from .precise import path_costs

        return path_costs(plant, PATH_ENTRIES[path], eps, "lqg", dps)
    return [(e, lqg.lqg_cost(plant, path_policy(path, e))) for e in eps]


# ---------------------------------------------------------------------------
# Landscape scans
# ---------------------------------------------------------------------------

_AXIS_RE = re.compile(r"^(A_K|B_K|C_K|D_K)(?:\[(\d+),(\d+)\])?$")


@dataclass(frozen=True)
class Axis:
    name: str  # "A_K" for scalar blocks or "A_K[i,j]"
    values: np.ndarray

    def target(self) -> tuple[str, int, int]:
        mt = _AXIS_RE.match(self.name)
        if not mt:
            raise ValueError(f"bad axis name {self.name!r}")
        blk, i, j = mt.groups()
        return blk, int(i or 0), int(j or 0)

    @classmethod
    def linspace(cls, name: str, lo: float, hi: float, num: int) -> "Axis":
        return cls(name, np.linspace(lo, hi, num))


@dataclass(frozen=True)
class ScanCell:
    index: tuple[int, ...]
    coords: tuple[float, ...]
    stabilizing: bool
    value: float
    flag: str  # "ok" | "unstable" | "singular" | "no-certificate" | "error"
    p_min_eig: float = float("nan")


@dataclass
class ScanResult:
    axes: list[Axis]
    metric: str
    instance: str
    cells: list[ScanCell]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a.values) for a in self.axes)

    def grid(self) -> np.ndarray:
        """Metric values in grid layout; unstable cells are NaN."""
        out = np.full(self.shape, np.nan)
        for c in self.cells:
            if c.stabilizing:
                out[c.index] = c.value
        return out

    def stabilizing_mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for c in self.cells:
            out[c.index] = c.stabilizing
        return out

    def csv_rows(self) -> list[list]:
        header = [a.name for a in self.axes] + [self.metric, "stabilizing", "flag", "p_min_eig"]
        rows = [header]
        for c in self.cells:
            rows.append(list(c.coords) + [c.value, int(c.stabilizing), c.flag, c.p_min_eig])
        return rows


def _metric_lqg_cost(plant: Plant, K: Policy) -> tuple[float, str, float]:
    return lqg.lqg_cost(plant, K), "ok", float("nan")


def _metric_hinf_cost(plant: Plant, K: Policy) -> tuple[float, str, float]:
    return hinf.hinf_cost(plant, K), "ok", float("nan")


def _metric_ln_det_p12_lqg(plant: Plant, K: Policy) -> tuple[float, str, float]:
    try:
        cert = lqg.build_h2_certificate(plant, K)
    except IllConditionedError:
        return -np.inf, "singular", 0.0
    det = abs(np.linalg.det(cert.P12))
    return (float(np.log(det)) if det > 0 else -np.inf), "ok", cert.p_min_eig


def _metric_p12_sigma_min_hinf(plant: Plant, K: Policy) -> tuple[float, str, float]:
    cl = assemble_closed_loop(plant, K)
    ev = hinf.hinf_norm(cl, tol=1e-12)
    cert = hinf.brl_certificate(cl, ev.gamma_hi, n=plant.n)
    if cert is None:
        return float("nan"), "no-certificate", float("nan")
    return cert.p12_sigma_min, "ok", cert.p_min_eig


METRICS: dict[str, Callable[[Plant, Policy], tuple[float, str, float]]] = {
    "lqg_cost": _metric_lqg_cost,
    "hinf_cost": _metric_hinf_cost,
    "ln_det_p12_lqg": _metric_ln_det_p12_lqg,
    "p12_sigma_min_hinf": _metric_p12_sigma_min_hinf,
}


def _thread_count(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("PLT_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


_BATCH_METRICS = ("hinf_cost", "p12_sigma_min_hinf")
_CHUNK = 4096


def _batch_hinf_values(plant: Plant, metric: str, cls: list) -> list[tuple[float, str, float]]:
    A = np.array([c.A for c in cls])
    B = np.array([c.B for c in cls])
    C = np.array([c.C for c in cls])
    D = np.array([c.D for c in cls])
    if metric == "hinf_cost":
        lo, hi = hinf.batch_hinf_bounds(A, B, C, D, tol=1e-10)
        return [(0.5 * (a + b), "ok", float("nan")) for a, b in zip(lo, hi)]
    _, hi = hinf.batch_hinf_bounds(A, B, C, D, tol=1e-12)
    s12, pmin, found = hinf.batch_brl_certificates(A, B, C, D, hi, plant.n)
    out = []
    for i, cl in enumerate(cls):
        if found[i]:
            out.append((float(s12[i]), "ok", float(pmin[i])))
            continue
        # per-system retry with the Schur-based solver
        cert = hinf.brl_certificate(cl, float(hi[i]), n=plant.n)
        if cert is None:
            out.append((float("nan"), "no-certificate", float("nan")))
        else:
            out.append((cert.p12_sigma_min, "ok", cert.p_min_eig))
    return out


def landscape_scan(
    plant: Plant,
    base: Policy,
    axes: Sequence[Axis],
    metric: str,
    threads: Optional[int] = None,
    batch: bool = True,
) -> ScanResult:
    """Evaluate ``metric`` on the tensor grid spanned by ``axes`` around ``base``.

    Cells are evaluated in parallel but assembled in row-major grid order, so
    the result does not depend on the thread count. With ``batch`` the
    H-infinity metrics are computed on stacked closed loops, which is much
    faster for small realizations and agrees with the per-cell path to
    rounding.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    fn = METRICS[metric]
    targets = [ax.target() for ax in axes]
    shape = tuple(len(ax.values) for ax in axes)
    blocks0 = {nm: np.array(getattr(base, nm)) for nm in ("D_K", "C_K", "B_K", "A_K")}
    for blk, i, j in targets:
        if i >= blocks0[blk].shape[0] or j >= blocks0[blk].shape[1]:
            raise ValueError(f"axis {blk}[{i},{j}] outside block of shape {blocks0[blk].shape}")
    needs_proper = metric == "lqg_cost" or metric == "ln_det_p12_lqg"

    def make(idx: tuple[int, ...]) -> tuple[tuple[float, ...], Policy]:
        blocks = {k: v.copy() for k, v in blocks0.items()}
        coords = []
        for (blk, i, j), ax, k in zip(targets, axes, idx):
            val = float(ax.values[k])
            blocks[blk][i, j] = val
            coords.append(val)
        return tuple(coords), Policy(**blocks)

    def evaluate(idx: tuple[int, ...]) -> ScanCell:
        coords, K = make(idx)
        stab, _ = is_internally_stabilizing(plant, K)
        if not stab:
            return ScanCell(idx, coords, False, float("nan"), "unstable")
        if needs_proper and not K.strictly_proper:
            return ScanCell(idx, coords, True, float("nan"), "error")
        try:
            val, flag, pmin = fn(plant, K)
        except (DomainError, NumericalError):
            return ScanCell(idx, coords, True, float("nan"), "error")
        return ScanCell(idx, coords, True, float(val), flag, float(pmin))

    indices = list(np.ndindex(*shape))
    if batch and metric in _BATCH_METRICS:
        cells: list[ScanCell] = []
        stable_cells, cls = [], []
        for idx in indices:
            coords, K = make(idx)
            cl = assemble_closed_loop(plant, K)
            if cl.stable:
                stable_cells.append((idx, coords))
                cls.append(cl)
            else:
                cells.append(ScanCell(idx, coords, False, float("nan"), "unstable"))
        values = []
        for lo in range(0, len(cls), _CHUNK):
            values += _batch_hinf_values(plant, metric, cls[lo : lo + _CHUNK])
        cells += [ScanCell(ix, co, True, v, f, pm) for (ix, co), (v, f, pm) in zip(stable_cells, values)]
        cells.sort(key=lambda c: c.index)
        return ScanResult(list(axes), metric, plant.name, cells)

    n_threads = _thread_count(threads)
    if n_threads == 1:
        cells = [evaluate(ix) for ix in indices]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            cells = list(ex.map(evaluate, indices, chunksize=64))
    return ScanResult(list(axes), metric, plant.name, cells)


@dataclass(frozen=True)
class SliceBand:
    fixed: tuple[float, ...]  # values of the axes beyond the first two
    n_admissible: int
    n_low: int
    components: int
    slope: float  # d(axis 1)/d(axis 0) of the fitted line through the origin
    max_offset: float  # largest distance from that line, in grid cells
    rms_offset: float


@dataclass(frozen=True)
class BandReport:
    threshold: float
    p_floor: float
    n_admissible: int
    n_low: int
    slices: list[SliceBand]
    gap: int
    max_width: float

    @property
    def fraction(self) -> float:
        return self.n_low / self.n_admissible if self.n_admissible else float("nan")

    @property
    def connected(self) -> bool:
        return all(s.components <= 1 for s in self.slices)

    @property
    def thin(self) -> bool:
        return all(s.max_offset <= self.max_width for s in self.slices)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "p_floor": self.p_floor,
            "n_admissible": self.n_admissible,
            "n_low": self.n_low,
            "fraction": self.fraction,
            "connected": self.connected,
            "thin": self.thin,
            "gap": self.gap,
            "max_width": self.max_width,
            "slices": [s.__dict__ for s in self.slices],
        }


def low_p12_band(
    result: ScanResult,
    threshold: float = -4.0,
    p_floor: float = 1e-5,
    gap: int = 2,
    max_width: float = 6.0,
) -> BandReport:
    """Locate the cells of a P12 scan whose ``ln|P12|`` falls below ``threshold``.

    Admissible cells are stabilizing, carry a certificate, and have
    ``lambda_min(P) >= p_floor``. For ``ln_det_p12_lqg`` scans ``|P12|`` is
    ``|det P12|``; for ``p12_sigma_min_hinf`` it is the smallest singular value.
    Each slice over the first two axes is examined separately: low cells
    count as one band when they link up under ``gap`` empty cells of slack,
    and the band is thin when every low cell lies within ``max_width`` grid
    cells of a least-squares line through the origin.
    """
    from scipy import ndimage

    if result.metric == "ln_det_p12_lqg":
        vals = result.grid()
    elif result.metric == "p12_sigma_min_hinf":
        with np.errstate(divide="ignore"):
            vals = np.log(result.grid())
    else:
        raise ValueError(f"metric {result.metric!r} has no P12 values")
    if len(result.axes) < 2:
        raise ValueError("band analysis needs at least two axes")
    pmin = np.full(result.shape, np.nan)
    for c in result.cells:
        pmin[c.index] = c.p_min_eig
    adm = result.stabilizing_mask() & (pmin >= p_floor) & ~np.isnan(vals)
    low = adm & (vals < threshold)
    x0, x1 = result.axes[0].values, result.axes[1].values
    h0 = x0[1] - x0[0] if x0.size > 1 else 1.0
    h1 = x1[1] - x1[0] if x1.size > 1 else 1.0
    grow = np.ones((3, 3), dtype=bool)
    slices = []
    for rest in np.ndindex(*result.shape[2:]):
        sl = (slice(None), slice(None)) + rest
        lw = low[sl]
        if not lw.any():
            continue
        grown = ndimage.binary_dilation(lw, grow, iterations=(gap + 1) // 2) if gap > 0 else lw
        lab, _ = ndimage.label(grown, grow)
        comps = len(np.unique(lab[lw]))
        ii, jj = np.nonzero(lw)
        pts = np.c_[x0[ii] / h0, x1[jj] / h1]
        _, _, vt = np.linalg.svd(pts, full_matrices=False)
        d = vt[0]
        off = np.abs(pts @ np.array([-d[1], d[0]]))
        slope = (d[1] * h1) / (d[0] * h0) if d[0] != 0 else float("inf")
        fixed = tuple(float(ax.values[k]) for ax, k in zip(result.axes[2:], rest))
        slices.append(SliceBand(fixed, int(adm[sl].sum()), int(lw.sum()), comps, float(slope),
                                float(off.max()), float(np.sqrt(np.mean(off**2)))))
    return BandReport(threshold, p_floor, int(adm.sum()), int(low.sum()), slices, gap, max_width)

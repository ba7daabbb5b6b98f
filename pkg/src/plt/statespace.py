"""Linear-system data model: plants, dynamic output-feedback policies and
the closed loop they form.

Plant::

    dx/dt = A x + B u + W^{1/2} w,     y = C x + V^{1/2} v,
    z     = [Q^{1/2} x ; R^{1/2} u]

Policy of order q::

    dxi/dt = A_K xi + B_K y,           u = C_K xi + D_K y

and the lumped parameter block ``K = [[D_K, C_K], [B_K, A_K]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from numpy.typing import ArrayLike

from .errors import (
    DimensionError,
    EigenDecompositionError,
    IllConditionedError,
    UnstableAugmentationError,
)

EPS_STAB = 1e-9
TAU_RANK = 1e-8
EPS_PSD = 1e-10
KAPPA_MAX = 1e12


def _as_matrix(x: ArrayLike, name: str) -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        # a bare vector is ambiguous; callers pass 2-D data for anything but scalars
        raise DimensionError(f"{name} must be a 2-D array, got shape {a.shape}")
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D array, got shape {a.shape}")
    a.setflags(write=False)
    return a


def sqrtm_psd(M: np.ndarray, eps: float = EPS_PSD) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in ``[-eps, 0)`` are clamped to zero; anything more negative
    is rejected.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return M.copy()
    S = 0.5 * (M + M.T)
    w, U = np.linalg.eigh(S)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -eps * scale:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (U * np.sqrt(w)) @ U.T


def spectral_abscissa(A: np.ndarray) -> float:
    """Largest real part over the eigenvalues of ``A`` (``-inf`` when empty)."""
    if A.size == 0:
        return -np.inf
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise EigenDecompositionError(str(exc)) from exc
    return float(np.max(ev.real))


def is_hurwitz(A: np.ndarray, eps: float = EPS_STAB) -> bool:
    return spectral_abscissa(A) < -eps


# ---------------------------------------------------------------------------
# Rank tests
# ---------------------------------------------------------------------------

def numerical_rank(M: np.ndarray, tau: float = TAU_RANK) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tau * s[0]))


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Stacked ``[B, AB, ..., A^{k-1}B]`` with each block scaled to unit norm."""
    k = A.shape[0]
    blocks = []
    blk = B
    for _ in range(k):
        nrm = np.linalg.norm(blk)
        blocks.append(blk / nrm if nrm > 0 else blk)
        blk = A @ blk
    return np.hstack(blocks) if blocks else np.zeros((0, 0))


def controllability_test(A: ArrayLike, B: ArrayLike, tau: float = TAU_RANK) -> bool:
    """Kalman rank test for the pair (A, B)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if A.shape[0] != A.shape[1]:
        raise DimensionError("A must be square")
    k = A.shape[0]
    if k == 0:
        return True
    return numerical_rank(controllability_matrix(A, B), tau) == k


def observability_test(C: ArrayLike, A: ArrayLike, tau: float = TAU_RANK) -> bool:
    """Kalman rank test for the pair (C, A), by duality."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    return controllability_test(A.T, C.T, tau)


# ---------------------------------------------------------------------------
# Plant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plant:
    """Continuous-time LTI plant with LQG weights and noise intensities."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    W: np.ndarray
    V: np.ndarray
    name: str = ""
    Q_half: np.ndarray = field(init=False, repr=False, compare=False)
    R_half: np.ndarray = field(init=False, repr=False, compare=False)
    W_half: np.ndarray = field(init=False, repr=False, compare=False)
    V_half: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for nm in ("A", "B", "C", "Q", "R", "W", "V"):
            object.__setattr__(self, nm, _as_matrix(getattr(self, nm), nm))
        n, m, p = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        expected = {
            "A": (n, n), "B": (n, m), "C": (p, n),
            "Q": (n, n), "R": (m, m), "W": (n, n), "V": (p, p),
        }
        for nm, shape in expected.items():
            if getattr(self, nm).shape != shape:
                raise DimensionError(
                    f"{nm} has shape {getattr(self, nm).shape}, expected {shape}"
                )
        for nm in ("Q", "R", "W", "V"):
            M = getattr(self, nm)
            if not np.allclose(M, M.T, rtol=0, atol=1e-12 * (1 + np.abs(M).max())):
                raise ValueError(f"{nm} must be symmetric")
            try:
                half = sqrtm_psd(M)
            except ValueError as exc:
                raise ValueError(f"{nm}: {exc}") from exc
            half.setflags(write=False)
            object.__setattr__(self, f"{nm}_half", half)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @classmethod
    def scalar(cls, a: float, name: str = "") -> "Plant":
        """Scalar plant ``A=a, B=C=1`` with unit weights and intensities."""
        one = [[1.0]]
        return cls([[a]], one, one, one, one, one, one, name=name or f"scalar(a={a:g})")

    def validate(self) -> list[str]:
        """Names of the standing assumptions that fail (empty when all hold)."""
        failures = []
        for nm, strict in (("Q", False), ("R", True), ("W", False), ("V", True)):
            w = np.linalg.eigvalsh(getattr(self, nm))
            floor = EPS_PSD * max(1.0, float(np.abs(w).max()))
            if (strict and w.min() <= floor) or (not strict and w.min() < -floor):
                failures.append(f"{nm} {'positive definite' if strict else 'positive semidefinite'}")
        if not controllability_test(self.A, self.B):
            failures.append("(A,B) controllable")
        if not observability_test(self.C, self.A):
            failures.append("(C,A) observable")
        if not controllability_test(self.A, self.W_half):
            failures.append("(A,W^1/2) controllable")
        if not observability_test(self.Q_half, self.A):
            failures.append("(Q^1/2,A) observable")
        return failures

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            **{nm: getattr(self, nm).tolist() for nm in ("A", "B", "C", "Q", "R", "W", "V")},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Plant":
        """Inverse of :meth:`to_dict`; an optional ``shapes`` map fixes empty blocks."""
        shapes = d.get("shapes", {})
        mats = {}
        for nm in ("A", "B", "C", "Q", "R", "W", "V"):
            if nm not in d:
                raise DimensionError(f"instance is missing matrix {nm}")
            M = np.array(d[nm], dtype=float)
            if nm in shapes:
                M = M.reshape(shapes[nm])
            if M.ndim != 2:
                raise DimensionError(f"matrix {nm} must be 2-D, got shape {M.shape}")
            mats[nm] = M
        return cls(name=str(d.get("name", "")), **mats)


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Policy:
    """Dynamic output-feedback policy ``K = [[D_K, C_K], [B_K, A_K]]``."""

    D_K: np.ndarray
    C_K: np.ndarray
    B_K: np.ndarray
    A_K: np.ndarray

    def __post_init__(self) -> None:
        D = np.array(self.D_K, dtype=float)
        if D.ndim == 0:
            D = D.reshape(1, 1)
        m, p = D.shape
        A = np.array(self.A_K, dtype=float)
        q = 0 if A.size == 0 else (1 if A.ndim == 0 else A.shape[0])
        A = A.reshape(q, q)
        C = np.array(self.C_K, dtype=float).reshape(m, q)
        B = np.array(self.B_K, dtype=float).reshape(q, p)
        for nm, val in (("D_K", D), ("C_K", C), ("B_K", B), ("A_K", A)):
            val.setflags(write=False)
            object.__setattr__(self, nm, val)

    @property
    def m(self) -> int:
        return self.D_K.shape[0]

    @property
    def p(self) -> int:
        return self.D_K.shape[1]

    @property
    def q(self) -> int:
        return self.A_K.shape[0]

    @property
    def strictly_proper(self) -> bool:
        return not np.any(self.D_K)

    @classmethod
    def from_block(cls, K: ArrayLike, m: int, p: int) -> "Policy":
        K = np.asarray(K, dtype=float)
        if K.ndim != 2 or K.shape[0] < m or K.shape[1] < p or K.shape[0] - m != K.shape[1] - p:
            raise DimensionError(f"block of shape {K.shape} incompatible with m={m}, p={p}")
        return cls(K[:m, :p], K[:m, p:], K[m:, :p], K[m:, p:])

    @classmethod
    def zero(cls, m: int, p: int, q: int = 0) -> "Policy":
        return cls(np.zeros((m, p)), np.zeros((m, q)), np.zeros((q, p)), np.zeros((q, q)))

    @classmethod
    def static(cls, D_K: ArrayLike) -> "Policy":
        D = np.atleast_2d(np.asarray(D_K, dtype=float))
        return cls.zero(*D.shape, q=0).replace(D_K=D)

    def block(self) -> np.ndarray:
        return np.block([[self.D_K, self.C_K], [self.B_K, self.A_K]])

    def replace(self, **kw) -> "Policy":
        vals = {nm: getattr(self, nm) for nm in ("D_K", "C_K", "B_K", "A_K")}
        vals.update(kw)
        return Policy(**vals)

    def to_dict(self) -> dict:
        return {nm: getattr(self, nm).tolist() for nm in ("D_K", "C_K", "B_K", "A_K")}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        m_p = np.array(d["D_K"], dtype=float)
        if m_p.ndim != 2:
            raise DimensionError("D_K must be a 2-D array")
        m, p = m_p.shape
        q = len(d.get("A_K", []))
        A = np.array(d.get("A_K", np.zeros((0, 0))), dtype=float).reshape(q, q)
        C = np.array(d.get("C_K", []), dtype=float).reshape(m, q)
        B = np.array(d.get("B_K", []), dtype=float).reshape(q, p)
        return cls(m_p, C, B, A)

    def check_compatible(self, plant: Plant) -> None:
        if self.m != plant.m or self.p != plant.p:
            raise DimensionError(
                f"policy maps {self.p} outputs to {self.m} inputs; plant has p={plant.p}, m={plant.m}"
            )


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedLoop:
    """Closed-loop realization from ``d = [w; v]`` to ``z``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    abscissa: float

    @property
    def order(self) -> int:
        return self.A.shape[0]

    @property
    def stable(self) -> bool:
        return self.abscissa < -EPS_STAB

    def resolvent(self, s: complex) -> np.ndarray:
        """``(sI - A)^{-1}``; the zero matrix at ``s = inf``."""
        k = self.order
        if np.isinf(s):
            return np.zeros((k, k))
        return np.linalg.solve(s * np.eye(k) - self.A, np.eye(k))

    def transfer(self, s: complex) -> np.ndarray:
        """Evaluate ``C (sI - A)^{-1} B + D`` (``D`` alone at ``s = inf``)."""
        if np.isinf(s):
            return self.D.astype(complex)
        k = self.order
        return self.C @ np.linalg.solve(s * np.eye(k) - self.A, self.B) + self.D

    def sigma_max(self, omega: float) -> float:
        s = np.inf if np.isinf(omega) else 1j * omega
        return float(np.linalg.svd(self.transfer(s), compute_uv=False)[0])


def assemble_closed_loop(plant: Plant, policy: Policy) -> ClosedLoop:
    """Closed-loop matrices for the interconnection of ``plant`` and ``policy``."""
    policy.check_compatible(plant)
    A, B, C = plant.A, plant.B, plant.C
    n, m, p, q = plant.n, plant.m, plant.p, policy.q
    Dk, Ck, Bk, Ak = policy.D_K, policy.C_K, policy.B_K, policy.A_K
    Wh, Vh, Qh, Rh = plant.W_half, plant.V_half, plant.Q_half, plant.R_half

    Acl = np.block([[A + B @ Dk @ C, B @ Ck], [Bk @ C, Ak]])
    Bcl = np.block([[Wh, B @ Dk @ Vh], [np.zeros((q, n)), Bk @ Vh]])
    Ccl = np.block([[Qh, np.zeros((n, q))], [Rh @ Dk @ C, Rh @ Ck]])
    Dcl = np.block([[np.zeros((n, n)), np.zeros((n, p))], [np.zeros((m, n)), Rh @ Dk @ Vh]])
    for M in (Acl, Bcl, Ccl, Dcl):
        M.setflags(write=False)
    return ClosedLoop(Acl, Bcl, Ccl, Dcl, spectral_abscissa(Acl))


def is_internally_stabilizing(plant: Plant, policy: Policy) -> tuple[bool, float]:
    """Whether the closed loop is Hurwitz with margin ``EPS_STAB``, and its abscissa."""
    cl = assemble_closed_loop(plant, policy)
    return cl.abscissa < -EPS_STAB, cl.abscissa


def is_minimal(policy: Policy, tau: float = TAU_RANK) -> bool:
    if policy.q == 0:
        return True
    return controllability_test(policy.A_K, policy.B_K, tau) and observability_test(
        policy.C_K, policy.A_K, tau
    )


# ---------------------------------------------------------------------------
# Realization changes
# ---------------------------------------------------------------------------

def similarity_transform(policy: Policy, T: ArrayLike, kappa_max: float = KAPPA_MAX) -> Policy:
    """Change of controller coordinates ``xi -> T xi``."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if T.shape != (policy.q, policy.q):
        raise DimensionError(f"T has shape {T.shape}, expected {(policy.q, policy.q)}")
    if policy.q == 0:
        return policy
    kappa = np.linalg.cond(T)
    if not np.isfinite(kappa) or kappa > kappa_max:
        raise IllConditionedError(f"transform condition number {kappa:.3e} exceeds {kappa_max:.1e}")
    Tinv = np.linalg.inv(T)
    return Policy(policy.D_K, policy.C_K @ Tinv, T @ policy.B_K, T @ policy.A_K @ Tinv)


AugmentMode = Literal["zero", "controllable", "observable"]


def augment_policy(
    policy: Policy,
    Lam: ArrayLike,
    mode: AugmentMode = "zero",
    B_tilde: Optional[ArrayLike] = None,
    C_tilde: Optional[ArrayLike] = None,
    coupling: Optional[ArrayLike] = None,
) -> Policy:
    """Append a stable block ``Lam`` to the controller state.

    ``zero``
        both coupling blocks vanish; the new modes are neither excited nor seen.
    ``controllable``
        the new modes are driven by ``y`` through ``B_tilde`` and optionally by
        the existing controller state through ``coupling`` (shape q'×q), but do
        not reach ``u``.
    ``observable``
        the new modes reach ``u`` through ``C_tilde`` and optionally feed the
        existing state through ``coupling`` (shape q×q'), but are never excited.

    In every mode the closed-loop transfer function is unchanged.
    """
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    qa = Lam.shape[0]
    if Lam.shape != (qa, qa):
        raise DimensionError("Lam must be square")
    if qa > 0 and not is_hurwitz(Lam):
        raise UnstableAugmentationError("augmenting block must be Hurwitz")
    m, p, q = policy.m, policy.p, policy.q
    Bt = np.zeros((qa, p))
    Ct = np.zeros((m, qa))
    A12 = np.zeros((q, qa))
    A21 = np.zeros((qa, q))
    if mode == "controllable":
        if B_tilde is not None:
            Bt = np.asarray(B_tilde, dtype=float).reshape(qa, p)
        if coupling is not None:
            A21 = np.asarray(coupling, dtype=float).reshape(qa, q)
    elif mode == "observable":
        if C_tilde is not None:
            Ct = np.asarray(C_tilde, dtype=float).reshape(m, qa)
        if coupling is not None:
            A12 = np.asarray(coupling, dtype=float).reshape(q, qa)
    elif mode != "zero":
        raise ValueError(f"unknown augmentation mode {mode!r}")
    return Policy(
        policy.D_K,
        np.hstack([policy.C_K, Ct]),
        np.vstack([policy.B_K, Bt]),
        np.block([[policy.A_K, A12], [A21, Lam]]),
    )


# ---------------------------------------------------------------------------
# Vectorization helpers used by the optimizers
# ---------------------------------------------------------------------------

def policy_to_vector(policy: Policy, include_D: bool = False) -> np.ndarray:
    parts = [policy.A_K.ravel(), policy.B_K.ravel(), policy.C_K.ravel()]
    if include_D:
        parts.append(policy.D_K.ravel())
    return np.concatenate(parts)


def vector_to_policy(x: np.ndarray, like: Policy, include_D: bool = False) -> Policy:
    m, p, q = like.m, like.p, like.q
    sizes = [q * q, q * p, m * q] + ([m * p] if include_D else [])
    if x.size != sum(sizes):
        raise DimensionError(f"vector of length {x.size}, expected {sum(sizes)}")
    cuts = np.cumsum(sizes)[:-1]
    chunks = np.split(np.asarray(x, dtype=float), cuts)
    A = chunks[0].reshape(q, q)
    B = chunks[1].reshape(q, p)
    C = chunks[2].reshape(m, q)
    D = chunks[3].reshape(m, p) if include_D else like.D_K
    return Policy(D, C, B, A)


def random_stable_matrix(rng: np.random.Generator, k: int, margin: float = 0.5) -> np.ndarray:
    """Random Hurwitz matrix with spectral abscissa ``-margin``."""
    M = rng.standard_normal((k, k))
    return M - (spectral_abscissa(M) + margin) * np.eye(k)


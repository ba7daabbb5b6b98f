"""Built-in benchmark plants and named reference policies."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .statespace import Plant, Policy, augment_policy

SQRT2 = np.sqrt(2.0)
SQRT3 = np.sqrt(3.0)


def paper_1dim() -> Plant:
    return Plant.scalar(-1.0, name="paper-1dim")


def paper_2dim() -> Plant:
    return Plant(
        A=[[0.0, -1.0], [1.0, 0.0]],
        B=[[1.0], [0.0]],
        C=[[1.0, -1.0]],
        Q=[[4.0, 0.0], [0.0, 0.0]],
        R=[[1.0]],
        W=[[1.0, -1.0], [-1.0, 16.0]],
        V=[[1.0]],
        name="paper-2dim",
    )


def _three_dim(name: str, c33: float = 2.0) -> Plant:
    # c33 = 2 reproduces both benchmark tables (10.3566 LQG, 5.0829 H-inf);
    # c33 = 1 gives 9.4597 and 4.2447 instead
    I3 = np.eye(3)
    return Plant(
        A=[[1.0, 1.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
        B=[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]],
        C=[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, c33]],
        Q=I3, R=np.eye(2), W=I3, V=I3,
        name=name,
    )


def paper_3dim() -> Plant:
    return _three_dim("paper-3dim")


def paper_3dim_printed() -> Plant:
    return _three_dim("paper-3dim-printed", c33=1.0)


def hinf_2dim() -> Plant:
    I2 = np.eye(2)
    return Plant(
        A=[[1.0, 1.0], [0.0, 1.0]],
        B=[[0.0], [1.0]],
        C=[[1.0, 1.0], [1.0, 0.0]],
        Q=I2, R=[[1.0]], W=I2, V=I2,
        name="hinf-2dim",
    )


def hinf_3dim() -> Plant:
    return _three_dim("hinf-3dim")


PLANTS: dict[str, Callable[[], Plant]] = {
    "paper-1dim": paper_1dim,
    "paper-2dim": paper_2dim,
    "paper-3dim": paper_3dim,
    "paper-3dim-printed": paper_3dim_printed,
    "hinf-2dim": hinf_2dim,
    "hinf-3dim": hinf_3dim,
}


def get_plant(name: str) -> Plant:
    try:
        return PLANTS[name]()
    except KeyError:
        raise KeyError(f"unknown built-in instance {name!r}; choose from {sorted(PLANTS)}") from None


# ---------------------------------------------------------------------------
# Named policies
# ---------------------------------------------------------------------------

def scalar_policy(D: float, C: float, B: float, A: float) -> Policy:
    return Policy([[D]], [[C]], [[B]], [[A]])


# Boundary paths of the scalar example as (D_K, C_K, B_K, A_K) in terms of eps.
# Written with plain arithmetic so they also accept extended-precision numbers.
PATH_ENTRIES = {
    "K1": lambda e: (0 * e, e, -e, 0 * e),
    "K2": lambda e: (0 * e, e + e**4, -e, e**2),
}


def path_policy(path: str, eps: float) -> Policy:
    """Order-one policy on the path ``K1`` (bounded cost) or ``K2`` (divergent cost)."""
    return scalar_policy(*(float(x) for x in PATH_ENTRIES[path](float(eps))))


def lqg_path_1(eps: float) -> Policy:
    return path_policy("K1", eps)


def lqg_path_2(eps: float) -> Policy:
    return path_policy("K2", eps)


hinf_path_1 = lqg_path_1
hinf_path_2 = lqg_path_2


# Realizations on paper-2dim: an order-1 policy and two order-2
# realizations of the same transfer function.
def remark_base() -> Policy:
    return Policy([[0.0]], [[-2.0]], [[1.0]], [[-3.0]])


def remark_k1() -> Policy:
    """Controllable-mode augmentation; equals the Riccati-optimal controller."""
    return augment_policy(remark_base(), [[-4.0]], mode="controllable", B_tilde=[[-4.0]], coupling=[[5.0]])


def remark_k2() -> Policy:
    """Zero-coupled augmentation with an unexcited, unobserved mode."""
    return augment_policy(remark_base(), [[-1.0]], mode="zero")


NAMED_POLICIES: dict[str, Callable[[], Policy]] = {
    "b1-k1": lambda: scalar_policy(0.0, 2.0, 2.0, -1.0),
    "b1-k2": lambda: scalar_policy(0.0, 1.0, -1.0, -5.0),
    "b1-k3": lambda: scalar_policy(0.0, 0.0, 1.0, -1.0),
    "b1-k4": lambda: scalar_policy(0.0, -1.0, 0.0, -1.0),
    "saddle": lambda: scalar_policy(0.0, 0.0, 0.0, -1.0),
    "zero-dynamic": lambda: scalar_policy(0.0, 0.0, 0.0, -1.0),
    "gd-start": lambda: scalar_policy(0.0, -0.5, 0.5, -2.0),
    "static-hinf-opt": lambda: Policy.static([[1.0 - SQRT3]]),
    "d4-realization": lambda: scalar_policy(1.0 - SQRT3, 0.0, 0.0, -1.0),
    "remark-k1": remark_k1,
    "remark-k2": remark_k2,
}


def get_policy(name: str, plant: Plant) -> Policy:
    """Named policy; ``riccati-optimal`` and ``hinf-central`` are computed for ``plant``."""
    if name == "riccati-optimal":
        from .matsolve import lqg_optimal_policy, solve_lqg_riccati

        return lqg_optimal_policy(solve_lqg_riccati(plant), plant)
    if name == "hinf-central":
        from .matsolve import gamma_iteration

        return gamma_iteration(plant, tol=1e-6).policy
    try:
        pol = NAMED_POLICIES[name]()
    except KeyError:
        choices = sorted(NAMED_POLICIES) + ["hinf-central", "riccati-optimal"]
        raise KeyError(f"unknown built-in policy {name!r}; choose from {choices}") from None
    pol.check_compatible(plant)
    return pol

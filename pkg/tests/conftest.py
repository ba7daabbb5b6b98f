import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from plt.instances import get_plant  # noqa: E402
from plt.statespace import Policy, is_internally_stabilizing  # noqa: E402


@pytest.fixture
def scalar_plant():
    return get_plant("paper-1dim")


@pytest.fixture
def plant2():
    return get_plant("paper-2dim")


def random_stabilizing_policy(plant, rng, q=None, proper=True, scale=1.0, tries=2000):
    """Random full-order (or order-``q``) policy that stabilizes ``plant``."""
    q = plant.n if q is None else q
    if q == plant.n and np.max(np.linalg.eigvals(plant.A).real) > -0.1:
        return _near_optimum(plant, rng, scale, proper, tries)
    for _ in range(tries):
        A_K = rng.standard_normal((q, q)) * scale - 2.0 * np.eye(q)
        B_K = rng.standard_normal((q, plant.p)) * scale
        C_K = rng.standard_normal((plant.m, q)) * scale
        D_K = np.zeros((plant.m, plant.p)) if proper else 0.3 * rng.standard_normal((plant.m, plant.p))
        K = Policy(D_K, C_K, B_K, A_K)
        if is_internally_stabilizing(plant, K)[1] < -0.05:
            return K
    raise RuntimeError("no stabilizing policy found")


def _near_optimum(plant, rng, scale, proper, tries):
    from plt.instances import get_policy
    from plt.statespace import policy_to_vector, vector_to_policy

    K0 = get_policy("riccati-optimal", plant)
    x = policy_to_vector(K0)
    r = scale
    for _ in range(tries):
        K = vector_to_policy(x + r * rng.standard_normal(x.size), K0)
        if not proper:
            K = K.replace(D_K=0.3 * r * rng.standard_normal((plant.m, plant.p)))
        if is_internally_stabilizing(plant, K)[1] < -0.05:
            return K
        r *= 0.9
    raise RuntimeError("no stabilizing policy found")


def stabilizing_near(plant, K, rng, radius, tries=2000):
    from plt.statespace import policy_to_vector, vector_to_policy

    x = policy_to_vector(K)
    for _ in range(tries):
        u = rng.standard_normal(x.size)
        K2 = vector_to_policy(x + radius * u / np.linalg.norm(u), K)
        if is_internally_stabilizing(plant, K2)[1] < -0.05:
            return K2
    raise RuntimeError("no stabilizing neighbour found")

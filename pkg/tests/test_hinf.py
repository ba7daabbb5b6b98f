import numpy as np
import pytest

from plt import precise
from plt.errors import FrequencyNotPeakError, NotStabilizingError, OrderError
from plt.hinf import (
    batch_brl_certificates,
    batch_hinf_bounds,
    boundary_path_hinf,
    brl_certificate,
    brl_lmi_residual,
    clarke_subgradient,
    frequency_grid_norm,
    hinf_cost,
    hinf_norm,
    is_nondegenerate_hinf,
    min_norm_hull,
    project_simplex,
    stationarity_measure,
)
from plt.instances import PATH_ENTRIES, get_plant, get_policy, path_policy
from plt.matsolve import central_controller, solve_hinf_riccati_pair
from plt.statespace import Policy, assemble_closed_loop, augment_policy

from conftest import random_stabilizing_policy
from oracles import closed_loop, grid_hinf

SQRT3 = np.sqrt(3.0)
GOLDEN = (1 + np.sqrt(5.0)) / 2


def _smooth_policy(plant, seed):
    """Random stabilizing policy whose norm has a single simple peak."""
    rng = np.random.default_rng(seed)
    while True:
        K = random_stabilizing_policy(plant, rng, proper=False)
        ev = hinf_norm(assemble_closed_loop(plant, K), tol=1e-13)
        if len(ev.peaks) == 1 and ev.peaks[0].multiplicity == 1 and not ev.flat and np.isfinite(ev.peaks[0].omega):
            return K, ev


@pytest.mark.parametrize("name", ["paper-1dim", "paper-2dim", "paper-3dim", "hinf-2dim", "hinf-3dim"])
def test_norm_matches_dense_grid(name):
    plant = get_plant(name)
    K = random_stabilizing_policy(plant, np.random.default_rng(4), proper=False)
    ev = hinf_norm(assemble_closed_loop(plant, K))
    ref = grid_hinf(*closed_loop(plant, K.D_K, K.C_K, K.B_K, K.A_K))
    assert ev.gamma == pytest.approx(ref, rel=1e-4)
    assert ev.gamma >= ref * (1 - 1e-12)
    assert ev.gamma_hi >= ev.gamma


def test_zero_dynamic_policy_norm_two_ways(scalar_plant):
    cl = assemble_closed_loop(scalar_plant, get_policy("zero-dynamic", scalar_plant))
    ev = hinf_norm(cl)
    assert ev.gamma == pytest.approx(frequency_grid_norm(cl, n=100_000), rel=1e-10)
    for pk in ev.peaks:
        assert abs(pk.sigma - ev.gamma) <= 1e-6 * ev.gamma


def test_static_optimum_is_flat(scalar_plant):
    ev = hinf_norm(assemble_closed_loop(scalar_plant, get_policy("static-hinf-opt", scalar_plant)))
    assert ev.flat
    assert ev.gamma == pytest.approx(SQRT3 - 1, abs=1e-12)
    assert np.inf in ev.frequencies and 0.3 in ev.frequencies and 0.5 in ev.frequencies


def test_bounded_path_peak_at_dc(scalar_plant):
    ev = hinf_norm(assemble_closed_loop(scalar_plant, path_policy("K1", 1e-3)))
    assert ev.gamma == pytest.approx(GOLDEN, abs=1e-4)
    assert ev.frequencies == [0.0]


def test_unstable_closed_loop_rejected(scalar_plant):
    with pytest.raises(NotStabilizingError):
        hinf_cost(scalar_plant, get_policy("b1-k1", scalar_plant))


@pytest.mark.parametrize("omega,expected", [(0.3, 0.0359277), (0.5, -0.0838349)])
def test_flat_response_subgradients(scalar_plant, omega, expected):
    K = get_policy("static-hinf-opt", scalar_plant)
    ev = hinf_norm(assemble_closed_loop(scalar_plant, K))
    el = clarke_subgradient(scalar_plant, K, ev, [(omega, np.eye(1))])
    assert el.D_K(1, 1)[0, 0] == pytest.approx(expected, abs=1e-6)
    assert el.imag_residue <= 1e-10


def test_flat_response_is_stationary(scalar_plant):
    assert stationarity_measure(scalar_plant, get_policy("static-hinf-opt", scalar_plant)) <= 1e-6


def test_subgradient_rejects_non_peak(scalar_plant):
    K = path_policy("K1", 0.1)
    ev = hinf_norm(assemble_closed_loop(scalar_plant, K))
    with pytest.raises(FrequencyNotPeakError):
        clarke_subgradient(scalar_plant, K, ev, [(5.0, np.eye(1))])


def test_subgradient_validates_weights(scalar_plant):
    K = get_policy("static-hinf-opt", scalar_plant)
    ev = hinf_norm(assemble_closed_loop(scalar_plant, K))
    with pytest.raises(ValueError):
        clarke_subgradient(scalar_plant, K, ev, [(0.3, 0.5 * np.eye(1))])
    with pytest.raises(ValueError):
        clarke_subgradient(scalar_plant, K, ev, [(0.3, 2 * np.eye(1)), (0.5, -np.eye(1))])


def test_convex_combination_of_flat_subgradients(scalar_plant):
    K = get_policy("static-hinf-opt", scalar_plant)
    ev = hinf_norm(assemble_closed_loop(scalar_plant, K))
    a, b = 0.0359277, -0.0838349
    lam = -b / (a - b)
    el = clarke_subgradient(scalar_plant, K, ev, [(0.3, lam * np.eye(1)), (0.5, (1 - lam) * np.eye(1))])
    assert abs(el.D_K(1, 1)[0, 0]) < 1e-6


@pytest.mark.parametrize("name,seed", [("paper-1dim", 1), ("paper-2dim", 2), ("hinf-2dim", 3)])
def test_subgradient_is_gradient_at_smooth_points(name, seed):
    plant = get_plant(name)
    K, ev = _smooth_policy(plant, seed)
    pk = ev.peaks[0]
    Phi = clarke_subgradient(plant, K, ev, [(pk.omega, np.eye(1))]).Phi
    X = K.block()
    fd = np.zeros_like(X)
    h = 1e-6
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        up = hinf_cost(plant, Policy.from_block(X + E, plant.m, plant.p), tol=1e-13)
        dn = hinf_cost(plant, Policy.from_block(X - E, plant.m, plant.p), tol=1e-13)
        fd[idx] = (up - dn) / (2 * h)
    np.testing.assert_allclose(Phi, fd, rtol=1e-4, atol=1e-6 * np.abs(fd).max())
    # single-peak reduction: the measure is the gradient norm
    assert stationarity_measure(plant, K, evaluation=ev) == pytest.approx(np.linalg.norm(Phi), rel=1e-4)


def test_lifting_keeps_stationarity(scalar_plant):
    K = get_policy("d4-realization", scalar_plant)
    base = stationarity_measure(scalar_plant, K)
    lifted = stationarity_measure(scalar_plant, augment_policy(K, [[-2.0]]))
    assert lifted <= 10 * base + 1e-6
    assert hinf_cost(scalar_plant, augment_policy(K, [[-2.0]])) == pytest.approx(SQRT3 - 1, rel=1e-9)


def test_project_simplex():
    v = np.array([0.2, 1.5, -0.3, 0.4])
    w = project_simplex(v)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w >= 0)
    np.testing.assert_allclose(project_simplex(np.array([0.1, 0.6, 0.3])), [0.1, 0.6, 0.3])


def test_min_norm_hull_known_points():
    G = np.array([[1.0, 0.0], [0.0, 1.0]])
    x, lam = min_norm_hull(G)
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-8)
    x, _ = min_norm_hull(np.array([[1.0, 1.0], [-1.0, 1.0], [0.0, 3.0]]))
    np.testing.assert_allclose(x, [0.0, 1.0], atol=1e-6)
    x, lam = min_norm_hull(np.array([[2.0, -1.0]]))
    np.testing.assert_array_equal(x, [2.0, -1.0])


def test_certificate_for_central_controller(scalar_plant):
    gamma = 1.01 * 0.7321
    K = central_controller(solve_hinf_riccati_pair(scalar_plant, gamma), scalar_plant)
    cl = assemble_closed_loop(scalar_plant, K)
    assert hinf_norm(cl).gamma <= gamma
    cert = brl_certificate(cl, gamma, n=1)
    assert cert is not None and cert.valid
    assert brl_lmi_residual(cl, gamma, cert.P) <= 1e-7


def test_no_certificate_below_norm(scalar_plant):
    cl = assemble_closed_loop(scalar_plant, path_policy("K1", 0.1))
    J = hinf_norm(cl).gamma
    assert brl_certificate(cl, 0.98 * J, n=1) is None


def test_flat_realization_is_degenerate(scalar_plant):
    K = get_policy("d4-realization", scalar_plant)
    cert = brl_certificate(assemble_closed_loop(scalar_plant, K), SQRT3 - 1, n=1)
    assert cert is not None and cert.valid
    assert cert.p12_sigma_min <= 1e-8
    rep = is_nondegenerate_hinf(scalar_plant, K)
    assert rep.verdict == "degenerate-evidence"


def test_generic_policy_is_certified(scalar_plant):
    rep = is_nondegenerate_hinf(scalar_plant, path_policy("K1", 0.3))
    assert rep.verdict == "certified-nondegenerate"


def test_degeneracy_needs_full_order(scalar_plant):
    with pytest.raises(OrderError):
        is_nondegenerate_hinf(scalar_plant, get_policy("static-hinf-opt", scalar_plant))


def test_boundary_paths(scalar_plant):
    (_, j1), = boundary_path_hinf(scalar_plant, "K1", [1e-3])
    assert j1 == pytest.approx(GOLDEN, abs=1e-4)
    vals = [j for _, j in boundary_path_hinf(scalar_plant, "K2", [0.2, 0.1, 0.05])]
    assert vals[0] < vals[1] < vals[2]
    assert vals[1] == pytest.approx(2000.0, rel=0.1)
    with pytest.raises(ValueError):
        boundary_path_hinf(scalar_plant, "K1", [1.5])


@pytest.mark.parametrize("path", ["K1", "K2"])
def test_extended_precision_agrees_with_double(scalar_plant, path):
    eps = [0.3, 0.1, 0.05]
    dbl = boundary_path_hinf(scalar_plant, path, eps)
    hi = precise.path_costs(scalar_plant, PATH_ENTRIES[path], eps, "hinf", dps=40)
    for (_, a), (_, b) in zip(dbl, hi):
        assert a == pytest.approx(b, rel=1e-6)


def _stack(plant, policies):
    cls = [assemble_closed_loop(plant, K) for K in policies]
    return [np.stack([getattr(c, nm) for c in cls]) for nm in "ABCD"]


def test_batched_norms_match_per_system():
    plant = get_plant("paper-2dim")
    rng = np.random.default_rng(9)
    pols = [random_stabilizing_policy(plant, rng, proper=bool(i % 2)) for i in range(12)]
    lo, hi = batch_hinf_bounds(*_stack(plant, pols))
    ref = np.array([hinf_cost(plant, K) for K in pols])
    np.testing.assert_allclose(lo, ref, rtol=1e-9)
    assert np.all(hi >= lo)


def test_batched_certificates_match_per_system():
    plant = get_plant("paper-1dim")
    pols = [path_policy("K1", e) for e in (0.2, 0.4, 0.6)] + [get_policy("d4-realization", plant)]
    A, B, C, D = _stack(plant, pols)
    gam = np.array([hinf_norm(assemble_closed_loop(plant, K), tol=1e-12).gamma_hi for K in pols])
    s12, pmin, found = batch_brl_certificates(A, B, C, D, gam, n=1)
    for i, K in enumerate(pols):
        if not found[i]:
            continue
        cert = brl_certificate(assemble_closed_loop(plant, K), gam[i], n=1)
        assert cert is not None
        assert s12[i] == pytest.approx(cert.p12_sigma_min, rel=1e-4, abs=1e-6)
    assert found[:3].all()

import numpy as np
import pytest

from plt.errors import DimensionError, IllConditionedError
from plt.instances import PLANTS, get_plant, get_policy, remark_base
from plt.statespace import (
    Plant,
    Policy,
    assemble_closed_loop,
    augment_policy,
    controllability_test,
    is_internally_stabilizing,
    is_minimal,
    observability_test,
    policy_to_vector,
    random_stable_matrix,
    similarity_transform,
    spectral_abscissa,
    sqrtm_psd,
    vector_to_policy,
)

from conftest import random_stabilizing_policy
from oracles import closed_loop


@pytest.mark.parametrize("name", sorted(PLANTS))
def test_builtin_plants_satisfy_assumptions(name):
    assert get_plant(name).validate() == []


def test_plant_rejects_wrong_shapes():
    with pytest.raises(DimensionError):
        Plant(A=np.eye(2), B=np.ones((3, 1)), C=np.ones((1, 2)), Q=np.eye(2), R=[[1.0]], W=np.eye(2), V=[[1.0]])


def test_validate_names_failing_assumption():
    p = Plant(A=np.eye(2), B=[[1.0], [0.0]], C=[[1.0, 0.0]], Q=np.eye(2), R=[[1.0]], W=np.eye(2), V=[[1.0]])
    fails = p.validate()
    assert "(A,B) controllable" in fails
    assert "(C,A) observable" in fails


def test_plant_dict_roundtrip():
    p = get_plant("paper-3dim")
    p2 = Plant.from_dict(p.to_dict())
    for nm in "ABCQRWV":
        assert np.array_equal(getattr(p, nm), getattr(p2, nm))
    assert p2.name == p.name


def test_sqrtm_psd_squares_back():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((4, 4))
    S = M @ M.T
    H = sqrtm_psd(S)
    np.testing.assert_allclose(H @ H, S, atol=1e-12)
    np.testing.assert_allclose(H, H.T)


@pytest.mark.parametrize("name", ["paper-1dim", "paper-2dim", "paper-3dim", "hinf-2dim"])
def test_closed_loop_matches_block_diagram(name):
    plant = get_plant(name)
    rng = np.random.default_rng(11)
    K = Policy(0.3 * rng.standard_normal((plant.m, plant.p)), rng.standard_normal((plant.m, plant.n)),
               rng.standard_normal((plant.n, plant.p)), rng.standard_normal((plant.n, plant.n)))
    cl = assemble_closed_loop(plant, K)
    ref = closed_loop(plant, K.D_K, K.C_K, K.B_K, K.A_K)
    for got, want in zip((cl.A, cl.B, cl.C, cl.D), ref):
        np.testing.assert_allclose(got, want, atol=1e-14)


def test_transfer_at_infinity_is_feedthrough(scalar_plant):
    cl = assemble_closed_loop(scalar_plant, Policy.static([[0.4]]))
    np.testing.assert_array_equal(cl.transfer(np.inf), cl.D)
    assert cl.sigma_max(np.inf) == pytest.approx(0.4)


def test_scalar_policies_membership(scalar_plant):
    # K1 is outside the stabilizing set; K2..K4 are inside
    verdicts = {nm: is_internally_stabilizing(scalar_plant, get_policy(nm, scalar_plant))[0]
                for nm in ("b1-k1", "b1-k2", "b1-k3", "b1-k4")}
    assert verdicts == {"b1-k1": False, "b1-k2": True, "b1-k3": True, "b1-k4": True}


def test_scalar_policies_minimality(scalar_plant):
    got = {nm: is_minimal(get_policy(nm, scalar_plant)) for nm in ("b1-k1", "b1-k2", "b1-k3", "b1-k4")}
    assert got == {"b1-k1": True, "b1-k2": True, "b1-k3": False, "b1-k4": False}


def test_rank_tests_on_textbook_pairs():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert controllability_test(A, np.array([[0.0], [1.0]]))
    assert not controllability_test(A, np.array([[1.0], [0.0]]))
    assert observability_test(np.array([[1.0, 0.0]]), A)
    assert not observability_test(np.array([[0.0, 1.0]]), A)


def test_similarity_preserves_closed_loop_spectrum(plant2):
    rng = np.random.default_rng(5)
    K = random_stabilizing_policy(plant2, rng)
    T = rng.standard_normal((2, 2)) + 3 * np.eye(2)
    K2 = similarity_transform(K, T)
    e1 = np.sort_complex(np.linalg.eigvals(assemble_closed_loop(plant2, K).A))
    e2 = np.sort_complex(np.linalg.eigvals(assemble_closed_loop(plant2, K2).A))
    np.testing.assert_allclose(e1, e2, atol=1e-10)


def test_similarity_rejects_ill_conditioned_transform():
    K = remark_base()
    with pytest.raises(IllConditionedError):
        similarity_transform(augment_policy(K, [[-1.0]]), np.diag([1.0, 1e-13]))
    with pytest.raises(DimensionError):
        similarity_transform(K, np.eye(2))


def test_zero_augmentation_block_structure():
    K = remark_base()
    Kt = augment_policy(K, [[-7.0]], mode="zero")
    assert Kt.q == 2
    np.testing.assert_array_equal(Kt.A_K, [[-3.0, 0.0], [0.0, -7.0]])
    np.testing.assert_array_equal(Kt.B_K, [[1.0], [0.0]])
    np.testing.assert_array_equal(Kt.C_K, [[-2.0, 0.0]])


def test_augmentation_requires_stable_block():
    from plt.errors import UnstableAugmentationError

    with pytest.raises(UnstableAugmentationError):
        augment_policy(remark_base(), [[0.5]])


def test_vector_roundtrip():
    rng = np.random.default_rng(0)
    K = Policy(rng.standard_normal((2, 3)), rng.standard_normal((2, 4)),
               rng.standard_normal((4, 3)), rng.standard_normal((4, 4)))
    for include_D in (False, True):
        x = policy_to_vector(K, include_D)
        K2 = vector_to_policy(x, K, include_D)
        np.testing.assert_array_equal(K2.block(), K.block())
    with pytest.raises(DimensionError):
        vector_to_policy(np.zeros(3), K)


def test_block_roundtrip():
    K = get_policy("remark-k1", get_plant("paper-2dim"))
    K2 = Policy.from_block(K.block(), 1, 1)
    np.testing.assert_array_equal(K2.A_K, K.A_K)
    assert Policy.from_dict(K.to_dict()).block().tolist() == K.block().tolist()


def test_random_stable_matrix_margin():
    rng = np.random.default_rng(1)
    M = random_stable_matrix(rng, 5, margin=0.3)
    assert spectral_abscissa(M) == pytest.approx(-0.3)

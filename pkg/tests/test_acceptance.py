"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line.

Run directly with ``python tests/test_acceptance.py`` or through pytest.
Set ``PLT_FULL_SCAN=1`` to add the full 101x101x61 H-infinity scan (about
six minutes on one core).
"""

import json
import os
import sys
import time

import numpy as np
import pytest
from click.testing import CliRunner

sys.path.insert(0, os.path.dirname(__file__))

from plt.cli import main as cli_main
from plt.hinf import (
    boundary_path_hinf,
    clarke_subgradient,
    hinf_norm,
    is_nondegenerate_hinf,
    stationarity_measure,
)
from plt.instances import PATH_ENTRIES, get_plant, get_policy
from plt.lqg import (
    build_h2_certificate,
    fd_hessian,
    gramian_pair,
    informativity_test,
    is_nondegenerate_lqg,
    lqg_gradient,
)
from plt.errors import IllConditionedError
from plt.matsolve import gamma_iteration
from plt.precise import path_costs
from plt.search import boundary_path_lqg, gradient_descent_lqg, gradient_sampling_hinf, perturbed_start, riccati_baseline
from plt.statespace import Plant, assemble_closed_loop

from conftest import random_stabilizing_policy
from properties import (
    check_bisection_vs_grid,
    check_brl_sufficiency,
    check_gradient_fd,
    check_similarity,
    check_zero_augmentation,
    random_transform,
)

SQRT3 = np.sqrt(3.0)
GOLDEN = (1 + np.sqrt(5.0)) / 2
LQG_OPTIMA = {"paper-1dim": 0.6966, "paper-2dim": 6.1644, "paper-3dim": 10.3566}
X_K_EXPECTED = np.array(
    [[5.25, -8.0, 4.25, -8.0], [-8.0, 20.25, -8.0, 16.25], [4.25, -8.0, 4.25, -8.0], [-8.0, 16.25, -8.0, 16.25]]
)


@pytest.fixture
def report(capsys):
    def _report(num, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {num:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return _report


def sig4(x):
    return float(f"{x:.4g}")


def test_criterion_01_lqg_baselines(report):
    got = {nm: riccati_baseline(get_plant(nm), "lqg")[0] for nm in LQG_OPTIMA}
    ok = all(sig4(got[nm]) == sig4(LQG_OPTIMA[nm]) for nm in LQG_OPTIMA)
    report(1, ok, "Riccati LQG costs " + ", ".join(f"{nm}={v:.6f}" for nm, v in got.items()))


def test_criterion_02_gradient_descent(report):
    p1, p2 = get_plant("paper-1dim"), get_plant("paper-2dim")
    tr1 = gradient_descent_lqg(p1, get_policy("gd-start", p1), max_iter=500)
    K0 = perturbed_start(p2, get_policy("riccati-optimal", p2), 0.5, seed=0)
    tr2 = gradient_descent_lqg(p2, K0, max_iter=500)
    ok = tr1.final.cost <= 0.6970 and abs(tr2.final.cost - 6.1644) <= 1e-3
    ok &= len(tr1.iterates) <= 501 and len(tr2.iterates) <= 501
    report(2, ok, f"instance 1 -> {tr1.final.cost:.6f} ({len(tr1.iterates) - 1} it), "
                  f"instance 2 -> {tr2.final.cost:.6f} ({len(tr2.iterates) - 1} it)")


def test_criterion_03_gamma_iteration(report):
    errs = []
    for a in (-1.0, 0.0, 1.0):
        plant = Plant(A=[[a]], B=[[1.0]], C=[[1.0]], Q=[[1.0]], R=[[1.0]], W=[[1.0]], V=[[1.0]])
        errs.append(abs(gamma_iteration(plant, tol=1e-8).gamma - (np.sqrt(a * a + 2) + a)))
    g1 = gamma_iteration(get_plant("paper-1dim"), tol=1e-8).gamma
    ok = max(errs) <= 1e-4 and sig4(g1) == 0.7321
    report(3, ok, f"max |gamma* - target| = {max(errs):.2e}; 1-dim gamma* = {g1:.6f}")


def test_criterion_04_gradient_sampling(report):
    plant = get_plant("paper-1dim")
    t0 = time.perf_counter()
    tr = gradient_sampling_hinf(plant, get_policy("zero-dynamic", plant), max_iter=200, seed=0)
    ok = tr.final.cost <= 0.7325 and len(tr.iterates) <= 201
    report(4, ok, f"J = {tr.final.cost:.7f} after {len(tr.iterates) - 1} it "
                  f"({tr.terminal_reason}, {time.perf_counter() - t0:.1f} s)")


def _halving_ratios(values):
    v = np.asarray(values)
    return v[1:] / v[:-1]


def test_criterion_05_boundary_behavior(report):
    plant = get_plant("paper-1dim")
    eps_small = [0.05, 0.02, 0.01, 0.005, 0.001]
    k1 = boundary_path_lqg(plant, "K1", eps_small)
    k1_ok = all(abs(J - np.sqrt(2) / 2) <= 2 * e * e for e, J in k1)
    (_, jinf), = boundary_path_hinf(plant, "K1", [1e-3])
    golden_ok = abs(jinf - GOLDEN) <= 1e-4
    # final two decades before the boundary, in extended precision
    eps_div = [1e-2 * 2.0**-k for k in range(8)]
    lqg_J = [J for _, J in boundary_path_lqg(plant, "K2", eps_div, dps=60)]
    lqg_ratio = _halving_ratios(np.square(lqg_J))  # the LQG cost is J^2
    hinf_ratio = _halving_ratios([J for _, J in path_costs(plant, PATH_ENTRIES["K2"], eps_div, "hinf", dps=60)])
    div_ok = lqg_ratio.min() >= 1.5 and hinf_ratio.min() >= 1.5
    report(5, k1_ok and golden_ok and div_ok,
           f"K1 LQG within 2 eps^2: {k1_ok}; J_inf(1e-3) - golden = {jinf - GOLDEN:.1e}; "
           f"min growth per halving: LQG cost {lqg_ratio.min():.3f} (J {np.sqrt(lqg_ratio.min()):.3f}), "
           f"H-inf {hinf_ratio.min():.3f}")


def test_criterion_06_certificates(report):
    p1, p2 = get_plant("paper-1dim"), get_plant("paper-2dim")
    K_opt = get_policy("riccati-optimal", p2)
    xk_err = np.abs(gramian_pair(p2, K_opt).X - X_K_EXPECTED).max()
    opt_ok = xk_err <= 1e-9 and is_nondegenerate_lqg(p2, K_opt) and build_h2_certificate(p2, K_opt).valid
    b1 = {nm: informativity_test(p1, get_policy(nm, p1)).informative for nm in ("b1-k2", "b1-k3", "b1-k4")}
    b1_ok = b1 == {"b1-k2": True, "b1-k3": True, "b1-k4": False}
    K2 = get_policy("remark-k2", p2)
    rep = informativity_test(p2, K2)
    try:
        build_h2_certificate(p2, K2)
        no_cert = False
    except IllConditionedError:
        no_cert = True
    k2_ok = rep.verdict == "not-informative" and rep.sigma_min_x12 <= 1e-12 and no_cert and not is_nondegenerate_lqg(p2, K2)
    d4 = is_nondegenerate_hinf(p1, get_policy("d4-realization", p1)).verdict
    report(6, opt_ok and b1_ok and k2_ok and d4 == "degenerate-evidence",
           f"X_K max error {xk_err:.1e}; scalar K2-K4 informative {b1}; augmented K2 sigma_min(X12) = "
           f"{rep.sigma_min_x12:.1e}; flat realization -> {d4}")


def test_criterion_07_clarke_numbers(report):
    plant = get_plant("paper-1dim")
    K = get_policy("static-hinf-opt", plant)
    ev = hinf_norm(assemble_closed_loop(plant, K))
    s03 = clarke_subgradient(plant, K, ev, [(0.3, np.eye(1))]).D_K(1, 1)[0, 0]
    s05 = clarke_subgradient(plant, K, ev, [(0.5, np.eye(1))]).D_K(1, 1)[0, 0]
    stat = stationarity_measure(plant, K)
    ok = abs(s03 - 0.0359) <= 5e-3 and abs(s05 + 0.0838) <= 5e-3 and stat <= 1e-3
    report(7, ok, f"subgradients {s03:.7f} (w=0.3), {s05:.7f} (w=0.5); stationarity {stat:.1e}")


def test_criterion_08_strict_saddle(report):
    plant = get_plant("paper-1dim")
    K = get_policy("saddle", plant)
    eig = np.sort(np.linalg.eigvalsh(fd_hessian(plant, K, squared=True)))
    g = lqg_gradient(plant, K).norm()
    ok = np.abs(eig - [-0.25, 0.0, 0.25]).max() <= 5e-3 and g <= 1e-8
    report(8, ok, f"Hessian eigenvalues {np.round(eig, 6).tolist()}, gradient norm {g:.1e}")


def test_criterion_09_property_suites(report):
    t0 = time.perf_counter()
    counts = {}
    worst = {}
    rng = np.random.default_rng(2024)
    for name in ("paper-1dim", "paper-2dim", "paper-3dim"):
        plant = get_plant(name)
        errs = [check_gradient_fd(plant, random_stabilizing_policy(plant, rng)) for _ in range(50)]
        counts[f"grad/{name}"] = len(errs)
        worst["grad"] = max(worst.get("grad", 0.0), max(errs))
    for name in ("paper-1dim", "paper-2dim", "paper-3dim", "hinf-2dim", "hinf-3dim"):
        plant = get_plant(name)
        errs = [check_bisection_vs_grid(plant, random_stabilizing_policy(plant, rng, proper=False)) for _ in range(4)]
        worst["grid"] = max(worst.get("grid", 0.0), max(errs))
    for name in ("paper-1dim", "paper-2dim", "hinf-2dim"):
        plant = get_plant(name)
        for proper in (True, False):
            for _ in range(3):
                K = random_stabilizing_policy(plant, rng, proper=proper)
                e = check_similarity(plant, K, random_transform(rng, K.q))
                worst["similarity"] = max(worst.get("similarity", 0.0), e)
                out = check_zero_augmentation(plant, K, [[-rng.uniform(0.1, 10.0)]])
                worst["augment"] = max([worst.get("augment", 0.0)] + list(out.values()))
                check_brl_sufficiency(plant, K, rng.uniform(1.0, 1.5))
    elapsed = time.perf_counter() - t0
    detail = (f"{sum(counts.values())} gradient checks (rel err <= {worst['grad']:.1e}), grid rel err <= "
              f"{worst['grid']:.1e}, similarity <= {worst['similarity']:.1e}, augmentation <= "
              f"{worst['augment']:.1e}, BRL rechecks ok ({elapsed:.0f} s)")
    report(9, all(v >= 50 for v in counts.values()), detail)


def _scan(tmp_path, preset, tag):
    out, summ = tmp_path / f"{tag}.csv", tmp_path / f"{tag}.json"
    res = CliRunner().invoke(cli_main, ["scan", "--instance", "builtin:paper-1dim", "--preset", preset,
                                        "--out", str(out), "--summary", str(summ)], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    rec = json.loads(summ.read_text())
    return rec["outputs"], out


def test_criterion_10_scan_band(report, tmp_path):
    t0 = time.perf_counter()
    lqg_out, lqg_csv = _scan(tmp_path, "lqg-2d", "lqg-landscape")
    hinf_out, hinf_csv = _scan(tmp_path, "hinf-3d-ci", "hinf-landscape-ci")
    rows_ok = len(lqg_csv.read_text().splitlines()) == 101 * 101 + 1
    rows_ok &= len(hinf_csv.read_text().splitlines()) == 21 * 21 * 13 + 1
    parts, ok = [], rows_ok
    for tag, out in (("LQG 101x101", lqg_out), ("H-inf 21x21x13", hinf_out)):
        b = out["band"]
        ok &= b["fraction"] <= 0.03 and b["connected"] and b["thin"]
        parts.append(f"{tag}: fraction {b['fraction']:.4f}, connected={b['connected']}, thin={b['thin']}")
    report(10, ok, "; ".join(parts) + f" ({time.perf_counter() - t0:.0f} s)")


@pytest.mark.skipif(os.environ.get("PLT_FULL_SCAN") != "1", reason="set PLT_FULL_SCAN=1 for the full grid")
def test_criterion_10_full_grid(report, tmp_path):
    t0 = time.perf_counter()
    out, csv_path = _scan(tmp_path, "hinf-3d", "hinf-landscape")
    elapsed = time.perf_counter() - t0
    b = out["band"]
    ok = b["fraction"] <= 0.03 and b["connected"] and b["thin"] and elapsed <= 600
    report("10f", ok, f"H-inf 101x101x61: fraction {b['fraction']:.4f}, connected={b['connected']}, "
                      f"thin={b['thin']}, {elapsed:.0f} s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))

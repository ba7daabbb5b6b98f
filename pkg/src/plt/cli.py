"""Command-line harness: ``plt cost|certify|optimize|scan|bench``.

Results are printed (or written with ``--out``) as JSON records carrying a
top-level ``"schema": 1``; scans emit CSV. Exit codes: 2 for unreadable or
invalid input, 3 for domain errors (non-stabilizing policy, infinite cost,
wrong order), 4 for numerical failures.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
from pathlib import Path
from typing import Any, Optional

import click
import numpy as np

from . import __version__, hinf, lqg, search
from .errors import DimensionError, DomainError, NumericalError
from .instances import PLANTS, get_plant, get_policy
from .matsolve import central_controller, gamma_iteration, solve_hinf_riccati_pair
from .statespace import Plant, Policy, assemble_closed_loop, is_internally_stabilizing

SCHEMA = 1
EXIT_PARSE, EXIT_DOMAIN, EXIT_NUMERICAL = 2, 3, 4


class InputError(click.ClickException):
    exit_code = EXIT_PARSE


# ---------------------------------------------------------------------------
# Instance and policy files
# ---------------------------------------------------------------------------

def instance_to_dict(plant: Plant, policies: Optional[dict[str, Policy]] = None) -> dict:
    d: dict[str, Any] = {"schema": SCHEMA, **plant.to_dict()}
    d["shapes"] = {nm: list(getattr(plant, nm).shape) for nm in ("A", "B", "C", "Q", "R", "W", "V")}
    if policies:
        d["policies"] = {k: pol.to_dict() for k, pol in policies.items()}
    return d


def write_instance(path: str | Path, plant: Plant, policies: Optional[dict[str, Policy]] = None) -> None:
    # json writes floats with repr, so finite doubles survive a round trip exactly
    Path(path).write_text(json.dumps(instance_to_dict(plant, policies), indent=1))


def read_instance(path: str | Path) -> tuple[Plant, dict[str, Policy]]:
    """Parse an instance file; raises ``InputError`` naming the failing assumption."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read instance {path}: {exc}") from None
    if not isinstance(d, dict):
        raise InputError(f"instance {path} must be a JSON object")
    try:
        plant = Plant.from_dict(d)
        policies = {k: Policy.from_dict(v) for k, v in d.get("policies", {}).items()}
        for pol in policies.values():
            pol.check_compatible(plant)
    except (DimensionError, ValueError, TypeError, KeyError) as exc:
        raise InputError(f"invalid instance {path}: {exc}") from None
    failures = plant.validate()
    if failures:
        raise InputError(f"instance {path} violates assumptions: {', '.join(failures)}")
    return plant, policies


def load_instance(spec: str) -> tuple[Plant, dict[str, Policy]]:
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in PLANTS:
            raise InputError(f"unknown built-in instance {name!r}; choose from {sorted(PLANTS)}")
        return get_plant(name), {}
    return read_instance(spec)


def load_policy(spec: str, plant: Plant, local: dict[str, Policy]) -> Policy:
    """``builtin:NAME``, a policy JSON file, or a policy named in the instance file."""
    try:
        if spec.startswith("builtin:"):
            return get_policy(spec.split(":", 1)[1], plant)
        if spec in local:
            return local[spec]
        d = json.loads(Path(spec).read_text())
        pol = Policy.from_dict(d.get("policy", d))
        pol.check_compatible(plant)
        return pol
    except KeyError as exc:
        raise InputError(str(exc.args[0]) if exc.args else str(exc)) from None
    except (OSError, json.JSONDecodeError, DimensionError, ValueError, TypeError) as exc:
        raise InputError(f"cannot load policy {spec!r}: {exc}") from None


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _clean(x: Any) -> Any:
    """Make a value strict-JSON safe: non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return x


def record(command: str, instance: str, parameters: dict, outputs: dict, seed: Optional[int] = None) -> dict:
    return _clean({
        "schema": SCHEMA,
        "command": command,
        "instance": instance,
        "parameters": parameters,
        "outputs": outputs,
        "version": __version__,
        "seed": seed,
    })


def emit(obj: dict, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=1, allow_nan=False)
    if out:
        Path(out).write_text(text + "\n")
    else:
        click.echo(text)


def _peaks(ev: hinf.HinfEvaluation) -> list[dict]:
    return [{"omega": pk.omega, "sigma": pk.sigma, "multiplicity": pk.multiplicity} for pk in ev.peaks]


class _Group(click.Group):
    """Maps library exceptions to the documented exit codes."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except DomainError as exc:
            click.echo(f"Error: {type(exc).__name__}: {exc}", err=True)
            ctx.exit(EXIT_DOMAIN)
        except NumericalError as exc:
            click.echo(f"Error: {type(exc).__name__}: {exc}", err=True)
            ctx.exit(EXIT_NUMERICAL)
        except DimensionError as exc:
            click.echo(f"Error: {exc}", err=True)
            ctx.exit(EXIT_PARSE)


_instance_opt = click.option("--instance", "instance", required=True, help="builtin:NAME or instance JSON file.")
_out_opt = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write output here instead of stdout.")
_mode_opt = click.option("--mode", type=click.Choice(["lqg", "hinf"]), default="lqg", show_default=True)


@click.group(cls=_Group)
@click.version_option(__version__, prog_name="plt")
def main() -> None:
    """Policy landscape tools for LQG and H-infinity output feedback."""


# ---------------------------------------------------------------------------
# cost / certify
# ---------------------------------------------------------------------------

@main.command()
@_instance_opt
@click.option("--policy", "policy_spec", required=True, help="builtin:NAME, policy JSON file, or a policy in the instance.")
@_mode_opt
@_out_opt
def cost(instance: str, policy_spec: str, mode: str, out: Optional[str]) -> None:
    """Cost of a policy; H-infinity mode also lists the peak frequencies."""
    plant, local = load_instance(instance)
    K = load_policy(policy_spec, plant, local)
    outputs: dict[str, Any]
    if mode == "lqg":
        outputs = {"cost": lqg.lqg_cost(plant, K)}
    else:
        ev = hinf.hinf_norm(assemble_closed_loop(plant, K))
        outputs = {"cost": ev.gamma, "gamma_hi": ev.gamma_hi, "flat": ev.flat, "peaks": _peaks(ev)}
    emit(record("cost", plant.name, {"policy": policy_spec, "mode": mode}, outputs), out)


@main.command()
@_instance_opt
@click.option("--policy", "policy_spec", required=True)
@_mode_opt
@_out_opt
def certify(instance: str, policy_spec: str, mode: str, out: Optional[str]) -> None:
    """Non-degeneracy report for a full-order policy."""
    plant, local = load_instance(instance)
    K = load_policy(policy_spec, plant, local)
    if mode == "lqg":
        rep = lqg.informativity_test(plant, K)
        outputs: dict[str, Any] = {
            "nondegenerate": lqg.is_nondegenerate_lqg(plant, K),
            "informativity": rep.verdict,
            "sigma_min_X12": rep.sigma_min_x12,
            "sigma_max_X": rep.sigma_max_x,
        }
        if rep.informative:
            cert = lqg.build_h2_certificate(plant, K)
            outputs["certificate"] = {
                "gamma": cert.gamma, "P": cert.P, "Gamma": cert.Gamma,
                "valid": cert.valid, "p12_sigma_min": cert.p12_sigma_min,
                "lmi_residual_1": cert.lmi_residual_1, "lmi_residual_2": cert.lmi_residual_2,
                "trace_slack": cert.trace_slack, "p_min_eig": cert.p_min_eig,
            }
            outputs["X_K"] = lqg.gramian_pair(plant, K).X
    else:
        rep = hinf.is_nondegenerate_hinf(plant, K)
        outputs = {
            "verdict": rep.verdict,
            "gamma": rep.gamma,
            "best_p12_sigma_min": rep.best_p12_sigma_min,
            "certificates": [
                {"relaxation_delta": c.relaxation_delta, "P": c.P, "lmi_residual": c.lmi_residual,
                 "p_min_eig": c.p_min_eig, "p12_sigma_min": c.p12_sigma_min}
                for c in rep.certificates
            ],
        }
    emit(record("certify", plant.name, {"policy": policy_spec, "mode": mode}, outputs), out)


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------

def default_start(plant: Plant, mode: str, seed: int) -> Policy:
    """Seeded start: a perturbed Riccati optimum (LQG) or, for H-infinity,
    the static zero policy with ``A_K = -I`` when it stabilizes, else the
    central controller at twice the optimal level."""
    if mode == "lqg":
        _, K = search.riccati_baseline(plant, "lqg")
        return search.perturbed_start(plant, K, 0.5, seed)
    K = Policy(np.zeros((plant.m, plant.p)), np.zeros((plant.m, plant.n)),
               np.zeros((plant.n, plant.p)), -np.eye(plant.n))
    if is_internally_stabilizing(plant, K)[0]:
        return K
    gi = gamma_iteration(plant)
    return central_controller(solve_hinf_riccati_pair(plant, 2.0 * gi.gamma), plant)


def run_optimize(plant: Plant, mode: str, K0: Policy, seed: int, max_iter: Optional[int]) -> search.SearchTrace:
    if mode == "lqg":
        return search.gradient_descent_lqg(plant, K0, max_iter=500 if max_iter is None else max_iter)
    return search.gradient_sampling_hinf(plant, K0, seed=seed, max_iter=200 if max_iter is None else max_iter)


@main.command()
@_instance_opt
@_mode_opt
@click.option("--k0", "k0_spec", default=None, help="Initial policy (default: seeded start, see docs).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--max-iter", type=click.IntRange(0), default=None, help="Default 500 (lqg) or 200 (hinf).")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Convergence curve as CSV.")
@_out_opt
def optimize(instance: str, mode: str, k0_spec: Optional[str], seed: int, max_iter: Optional[int],
             csv_path: Optional[str], out: Optional[str]) -> None:
    """Gradient descent (lqg) or gradient sampling (hinf) from an initial policy."""
    plant, local = load_instance(instance)
    K0 = load_policy(k0_spec, plant, local) if k0_spec else default_start(plant, mode, seed)
    trace = run_optimize(plant, mode, K0, seed, max_iter)
    baseline, _ = search.riccati_baseline(plant, mode)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "cost", "gap", "stationarity", "step"])
            for it in trace.iterates:
                w.writerow([it.index, repr(it.cost), repr(it.cost - baseline), repr(it.stationarity), repr(it.step)])
    outputs = trace.to_dict()
    outputs["baseline"] = baseline
    outputs["initial_policy"] = K0.to_dict()
    params = {"mode": mode, "k0": k0_spec, "max_iter": max_iter}
    emit(record("optimize", plant.name, params, outputs, seed), out)


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------

PRESETS = {
    # Landscape grids on the scalar plant, base policy D=0, C=1, B=0, A=-1
    "lqg-2d": ("ln_det_p12_lqg", [("A_K", -1, 1, 101), ("B_K", -2, 2, 101)], 1e-5),
    "hinf-3d": ("p12_sigma_min_hinf", [("A_K", -2, 2, 101), ("B_K", -4, 4, 101), ("D_K", -1.5, 1.5, 61)], 1e-4),
    "hinf-3d-ci": ("p12_sigma_min_hinf", [("A_K", -2, 2, 21), ("B_K", -4, 4, 21), ("D_K", -1.5, 1.5, 13)], 1e-4),
}
PRESET_BASE = Policy([[0.0]], [[1.0]], [[0.0]], [[-1.0]])


def parse_axis(text: str) -> search.Axis:
    """``NAME=LO:HI:NUM``, e.g. ``A_K=-1:1:101`` or ``A_K[0,1]=-2:2:41``."""
    try:
        name, rng = text.split("=", 1)
        lo, hi, num = rng.split(":")
        ax = search.Axis.linspace(name.strip(), float(lo), float(hi), int(num))
        ax.target()
    except ValueError as exc:
        raise InputError(f"bad axis {text!r} (expected NAME=LO:HI:NUM): {exc}") from None
    if len(ax.values) < 1:
        raise InputError(f"axis {text!r} has no points")
    return ax


def write_scan_csv(result: search.ScanResult, fh: io.TextIOBase) -> None:
    w = csv.writer(fh)
    for row in result.csv_rows():
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


@main.command()
@_instance_opt
@click.option("--policy", "policy_spec", default=None, help="Base policy whose entries the axes overwrite.")
@click.option("--axis", "axes", multiple=True, help="NAME=LO:HI:NUM; repeat for each grid axis.")
@click.option("--metric", type=click.Choice(sorted(search.METRICS)), default=None)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Predefined landscape grids.")
@click.option("--threshold", type=float, default=-4.0, show_default=True, help="ln|P12| level for the band report.")
@click.option("--summary", type=click.Path(dir_okay=False), default=None, help="JSON summary (band report for P12 metrics).")
@_out_opt
def scan(instance: str, policy_spec: Optional[str], axes: tuple[str, ...], metric: Optional[str],
         preset: Optional[str], threshold: float, summary: Optional[str], out: Optional[str]) -> None:
    """Grid scan of a metric over policy entries; CSV, one row per cell."""
    plant, local = load_instance(instance)
    p_floor = 1e-5
    if preset:
        metric_p, ax_p, p_floor = PRESETS[preset]
        metric = metric or metric_p
        grid = [search.Axis.linspace(*a) for a in ax_p] if not axes else [parse_axis(a) for a in axes]
        base = load_policy(policy_spec, plant, local) if policy_spec else PRESET_BASE
    else:
        if not axes or metric is None or policy_spec is None:
            raise InputError("--policy, --metric and at least one --axis are required without --preset")
        grid = [parse_axis(a) for a in axes]
        base = load_policy(policy_spec, plant, local)
    try:
        base.check_compatible(plant)
    except DimensionError as exc:
        raise InputError(str(exc)) from None
    t0 = time.perf_counter()
    try:
        result = search.landscape_scan(plant, base, grid, metric)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    elapsed = time.perf_counter() - t0
    if out:
        with open(out, "w", newline="") as fh:
            write_scan_csv(result, fh)
    else:
        buf = io.StringIO()
        write_scan_csv(result, buf)
        click.echo(buf.getvalue(), nl=False)
    outputs: dict[str, Any] = {"cells": len(result.cells), "stabilizing": int(result.stabilizing_mask().sum()),
                               "wall_time": elapsed}
    if metric in ("ln_det_p12_lqg", "p12_sigma_min_hinf") and len(grid) >= 2:
        outputs["band"] = search.low_p12_band(result, threshold, p_floor).to_dict()
    rec = record("scan", plant.name, {"metric": metric, "axes": [a.name for a in grid], "preset": preset,
                                      "threshold": threshold}, outputs)
    if summary:
        emit(rec, summary)
    elif "band" in outputs:
        b = outputs["band"]
        click.echo(f"low-|P12| fraction {b['fraction']:.4f}, connected={b['connected']}, thin={b['thin']}", err=True)


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

LQG_BENCH = ("paper-1dim", "paper-2dim", "paper-3dim")
HINF_BENCH = ("paper-1dim", "hinf-2dim", "hinf-3dim")


@main.command()
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--max-iter-lqg", type=click.IntRange(0), default=500, show_default=True)
@click.option("--max-iter-hinf", type=click.IntRange(0), default=200, show_default=True)
@click.option("--skip-search", is_flag=True, help="Only the Riccati baselines.")
@_out_opt
def bench(seed: int, max_iter_lqg: int, max_iter_hinf: int, skip_search: bool, out: Optional[str]) -> None:
    """Baseline and search costs on the built-in LQG and H-infinity instances."""
    rows: dict[str, list[dict]] = {"lqg": [], "hinf": []}
    for mode, names, iters in (("lqg", LQG_BENCH, max_iter_lqg), ("hinf", HINF_BENCH, max_iter_hinf)):
        for name in names:
            plant = get_plant(name)
            base, _ = search.riccati_baseline(plant, mode)
            row: dict[str, Any] = {"instance": name, "riccati": base}
            if not skip_search:
                K0 = default_start(plant, mode, seed)
                tr = run_optimize(plant, mode, K0, seed, iters)
                key = "gradient_descent" if mode == "lqg" else "gradient_sampling"
                row[key] = tr.final.cost
                row["iterations"] = len(tr.iterates) - 1
                row["wall_time"] = tr.wall_time
            rows[mode].append(row)
    params = {"max_iter_lqg": max_iter_lqg, "max_iter_hinf": max_iter_hinf, "skip_search": skip_search}
    emit(record("bench", "builtin", params, rows, seed), out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

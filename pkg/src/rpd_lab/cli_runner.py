"""``rpd`` command-line front end.

Every run is driven by a JSON config (``schema_version`` 1) plus optional
flag overrides, and writes ``report.json`` and CSV artifacts to ``--out``.
The ``results`` section of a report depends only on the config, so two
runs with the same config and seed produce identical bytes there.

Exit codes: 0 all checks passed, 1 a requested check failed, 2 invalid
input (config, kernel), 3 decomposition failure, 4 inconsistent regime
evidence, 5 too many pull-back failures.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    InconsistentEvidence,
    MultipleClosedClasses,
    NegativeEntry,
    NonStochasticRow,
    ParameterOutOfRange,
    TooManyFailures,
)
from .markov_core import (
    DiscretePeriodicMeasure,
    build_periodic_measure,
    condition_A_residual,
    convergence_profile,
    cyclic_decomposition,
    mean_measure,
    read_kernel_csv,
    state_period,
    validate_kernel,
)
from .measure_lab import (
    CylinderPartition,
    FinitePartition,
    Interval,
    Partition,
    WindowSpec,
    empirical_measure,
    indicator,
    slln_average,
    ulam_discretize,
    window_targets,
)
from .rds_engine import (
    RandomLogistic,
    make_chain_rds,
    run_batch,
    sample_enlarged_process,
    sample_random_periodic_ensemble,
)
from .regime_spectra import angle_variable, classify_regime, transfer_spectrum
from .noise import spawn_seeds
from .semiflow_lift import (
    CylinderState,
    lift,
    make_periodic_ou,
    ou_grid_periodic_orbit,
    ou_grid_stationary_variance,
    ou_periodic_mean,
    ou_stationary_variance,
    section_kernel,
)

SCHEMA_VERSION = 1
COMMANDS = ("analyze-chain", "classify", "simulate", "slln", "ulam-spectrum")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_DECOMPOSITION = 3
EXIT_INCONSISTENT = 4
EXIT_FAILURES = 5

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "thresholds": {"epsilon": 1e-9, "tol": 1e-9, "delta": 1e-8},
    "monte_carlo": {
        "n_seeds": 1000,
        "n_samples": 2000,
        "T": 10000,
        "T_enlarged": 4,
        "K": 50,
        "K_max": 500,
        "pullback_tol": 1e-10,
        "k_periods": 30,
    },
    "k_max": 10,
    "partition": {"lo": 0.0, "hi": 1.0, "n_cells": 20},
    "ulam": {"n_per_cell": 200, "delta": 1e-2, "match_tol": 1e-2},
}


class ConfigError(Exception):
    pass


# -- config ------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_config(path: str | None, command: str, seed: int | None, overrides: list[str]) -> dict:
    raw: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base_dir = Path(path).resolve().parent
    cfg = _merge(DEFAULTS, raw)
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.get('schema_version')!r}")
    if cfg.get("command", command) != command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
    cfg["command"] = command
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        _set_path(cfg, key, parsed)
    if seed is not None:
        cfg["seed"] = seed
    if "seed" not in cfg:
        raise ConfigError("a seed is required (config field 'seed' or --seed)")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an integer in [0, 2**64)")
    system = cfg.get("system")
    if not isinstance(system, dict) or "kind" not in system:
        raise ConfigError("config needs a 'system' object with a 'kind'")
    if "kernel_csv" in system:
        system["kernel_csv"] = str((base_dir / system["kernel_csv"]).resolve())
    for key, val in cfg["monte_carlo"].items():
        if key != "pullback_tol" and (not isinstance(val, int) or val < 1):
            raise ConfigError(f"monte_carlo.{key} must be a positive integer")
    return cfg


def _kernel(cfg: dict):
    system = cfg["system"]
    if system["kind"] != "chain":
        raise ConfigError(f"command {cfg['command']!r} needs a chain system")
    if "kernel_csv" in system:
        return read_kernel_csv(system["kernel_csv"])
    if "kernel" in system:
        return validate_kernel(system["kernel"])
    raise ConfigError("chain system needs 'kernel_csv' or 'kernel'")


def _system(cfg: dict):
    system = cfg["system"]
    kind = system["kind"]
    if kind == "chain":
        P = _kernel(cfg)
        return make_chain_rds(P, cfg.get("period")), P
    if kind == "logistic":
        lam = system.get("lam", 3.2)
        return RandomLogistic(lam, system.get("mu", lam), system.get("p", 0.5), cfg.get("period", 2)), None
    if kind == "periodic_ou":
        u = make_periodic_ou(system.get("tau", 1.0), system.get("sigma", 0.5), system.get("n_phase", 20))
        return lift(u), None
    raise ConfigError(f"unknown system kind {kind!r}")


# -- serialisation -----------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [_jsonable(float(obj.real)), _jsonable(float(obj.imag))]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (set, frozenset)):
        return sorted(_jsonable(v) for v in obj)
    return obj


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _measure_rows(label: str, weights, bounds) -> list:
    return [[label, lo, hi, float(p)] for (lo, hi), p in zip(bounds, weights)]


MEASURE_HEADER = ["measure", "cell_lo", "cell_hi", "weight"]


# -- commands ----------------------------------------------------------------


def cmd_analyze_chain(cfg: dict, out: Path) -> tuple[dict, bool]:
    P = _kernel(cfg)
    dec = cyclic_decomposition(P)
    pm = build_periodic_measure(P)
    bar = mean_measure(pm)
    k_max = cfg["k_max"]
    recurrent = [i for c in dec.classes for i in c]
    profiles = {str(i): convergence_profile(P, i, pm, k_max) for i in recurrent}
    resid = [condition_A_residual(P, pm, k) for k in range(k_max + 1)]
    results = {
        "n_states": P.n_states,
        "period": dec.period,
        "classes": dec.classes,
        "transient": dec.transient,
        "state_periods": [state_period(P, i) for i in range(P.n_states)],
        "periodic_measure": pm.as_array(),
        "mean_measure": bar.weights,
        "push_forward_error": pm.consistency_error(P),
        "convergence_profile": profiles,
        "condition_A_residual": resid,
    }
    bounds = FinitePartition(P.n_states).bounds()
    rows = [r for s, m in enumerate(pm.measures) for r in _measure_rows(f"rho_{s}", m.weights, bounds)]
    rows += _measure_rows("rho_bar", bar.weights, bounds)
    _write_csv(out / "measures.csv", MEASURE_HEADER, rows)
    return results, True


def _declared_measure(P, period: int | None) -> DiscretePeriodicMeasure:
    pm = build_periodic_measure(P)
    if period is None or period == pm.period:
        return pm
    if period % pm.period:
        raise ConfigError(f"declared period {period} is not a multiple of the chain period {pm.period}")
    return DiscretePeriodicMeasure.from_array([pm.rho(s).weights for s in range(period)])


def _spectrum_rows(spec) -> list:
    return [
        [i, float(z.real), float(z.imag), float(abs(z)), bool(abs(z) > 1 - spec.delta)]
        for i, z in enumerate(spec.eigenvalues)
    ]


SPECTRUM_HEADER = ["index", "real", "imag", "modulus", "on_unit_circle"]


def cmd_classify(cfg: dict, out: Path) -> tuple[dict, bool]:
    P = _kernel(cfg)
    pm = _declared_measure(P, cfg.get("period"))
    th = cfg["thresholds"]
    rc = classify_regime(P, pm, th["epsilon"], th["tol"], th["delta"])
    results = {
        "case": rc.case.value,
        "declared_period": rc.declared_period,
        "minimal_period": rc.minimal_period,
        "sections": [sorted(s) for s in rc.sections.sections],
        "sections_disjoint": rc.sections.pairwise_disjoint,
        "unit_circle": rc.spectrum.unit_circle,
        "multiplicities": rc.spectrum.multiplicities,
        "eigenvalues": rc.spectrum.eigenvalues,
    }
    if rc.minimal_period > 1:
        av = angle_variable(P, rc.minimal_period)
        results["angle_variable"] = {"lambda": av.lam, "phase_per_state": av.phase_per_state}
    _write_csv(out / "spectrum.csv", SPECTRUM_HEADER, _spectrum_rows(rc.spectrum))
    return results, True


def _ensemble_summary(values, partition) -> dict:
    v = np.asarray(values)
    emp = empirical_measure(v, partition)
    summary = {"n": int(v.shape[0]), "weights": emp.weights}
    if v.dtype.kind == "f":
        summary.update(mean=float(v.mean()), var=float(v.var(ddof=1)) if len(v) > 1 else 0.0,
                       min=float(v.min()), max=float(v.max()))
    return summary


def _state_partition(cfg: dict, sys_, P):
    if P is not None:
        return FinitePartition(P.n_states)
    p = cfg["partition"]
    return Partition(p["lo"], p["hi"], p["n_cells"])


def cmd_simulate(cfg: dict, out: Path) -> tuple[dict, bool]:
    sys_, P = _system(cfg)
    mc = cfg["monte_carlo"]
    seed = cfg["seed"]
    results: dict = {"system": sys_.name, "period": sys_.period}
    rows = []

    if cfg["system"]["kind"] == "periodic_ou":
        base = sys_.base
        x0 = float(cfg.get("start", 0.0))
        pts = np.asarray(section_kernel(sys_, 0, mc["k_periods"], mc["n_samples"], x0, seed=seed))
        sigma = cfg["system"].get("sigma", 0.5)
        results["section_phase0"] = {
            "k_periods": mc["k_periods"],
            "n": int(len(pts)),
            "mean": float(pts.mean()),
            "var": float(pts.var(ddof=1)) if len(pts) > 1 else 0.0,
            "reference_mean": float(ou_periodic_mean(0.0, base.period)),
            "reference_var": ou_stationary_variance(sigma),
            "grid_reference_mean": float(ou_grid_periodic_orbit(base.period, base.n_phase)[0]),
            "grid_reference_var": ou_grid_stationary_variance(sigma, base.period, base.n_phase),
        }
        part = _state_partition(cfg, sys_, None)
        rows += _measure_rows("section_phase0", empirical_measure(pts, part).weights, part.bounds())
        ens = sample_random_periodic_ensemble(sys_, 0, mc["n_seeds"], mc["K_max"], mc["pullback_tol"], seed=seed,
                                              y=CylinderState(0, x0))
        results["pullback_phase0"] = _ensemble_summary(ens.values.point, part)
        results["pullback_phase0"]["n_failed"] = ens.n_failed
        n_steps = mc["k_periods"] * sys_.period
        path = run_batch(sys_, spawn_seeds(seed, 1), 0, sys_.replicate(CylinderState(0, x0), 1), n_steps, record=True)
        _write_csv(out / "trajectory.csv", ["sample", "phase", "t", "state"],
                   [[0, int(st.phase[0]), t, float(st.point[0])] for t, st in enumerate(path)])
    else:
        part = _state_partition(cfg, sys_, P)
        per_phase = {}
        for s in range(sys_.period):
            ens = sample_random_periodic_ensemble(sys_, s, mc["n_seeds"], mc["K_max"], mc["pullback_tol"],
                                                  seed=seed + s)
            per_phase[str(s)] = _ensemble_summary(ens.values, part)
            per_phase[str(s)]["n_failed"] = ens.n_failed
            rows += _measure_rows(f"rho_{s}", per_phase[str(s)]["weights"], part.bounds())
        results["pullback"] = per_phase
        if isinstance(sys_, RandomLogistic) and sys_.lam == sys_.mu:
            r = sys_.lam
            disc = r * r - 2 * r - 3
            if disc >= 0:
                results["two_cycle_reference"] = sorted(
                    [(r + 1 - math.sqrt(disc)) / (2 * r), (r + 1 + math.sqrt(disc)) / (2 * r)]
                )
        eb = sample_enlarged_process(sys_, mc["T_enlarged"], mc["K"], mc["n_samples"], seed=seed,
                                     tol=mc["pullback_tol"])
        traj = eb.trajectories
        results["enlarged"] = {
            "n_samples": len(eb),
            "n_failed": eb.n_failed,
            "pooled_marginals": [empirical_measure(traj[:, t], part).weights for t in range(traj.shape[1])],
        }
        for t in range(traj.shape[1]):
            rows += _measure_rows(f"enlarged_t{t}", empirical_measure(traj[:, t], part).weights, part.bounds())
        _write_csv(out / "trajectory.csv", ["sample", "phase", "t", "state"],
                   [[i, int(eb.phases[i]), t, traj[i, t].item()] for i in range(min(len(eb), 100))
                    for t in range(traj.shape[1])])
    _write_csv(out / "measures.csv", MEASURE_HEADER, rows)
    return results, True


def _observable(cfg: dict):
    obs = cfg.get("observable", {"states": [0]})
    if "states" in obs:
        return set(obs["states"]), "states"
    if "interval" in obs:
        lo, hi = obs["interval"]
        return Interval(lo, hi), "interval"
    raise ConfigError("observable needs 'states' or 'interval'")


def cmd_slln(cfg: dict, out: Path) -> tuple[dict, bool]:
    sys_, P = _system(cfg)
    if cfg["system"]["kind"] == "periodic_ou":
        raise ConfigError("slln runs on chain or logistic systems")
    mc = cfg["monte_carlo"]
    seed = cfg["seed"]
    tau = sys_.period
    F0 = cfg.get("window", {}).get("F0", list(range(tau)))
    w = WindowSpec(tau, tuple(F0))
    B, kind = _observable(cfg)
    eb = sample_enlarged_process(sys_, mc["T"] - 1, mc["K"], 1, seed=seed, tol=mc["pullback_tol"], phase=0)
    traj = eb.trajectories[0]
    target_se = 0.0
    if P is not None:
        pm = build_periodic_measure(P) if cfg.get("period") in (None, tau) else _declared_measure(P, tau)
        target = float(window_targets(pm, w) @ indicator(B)(np.arange(P.n_states)).astype(float))
        target_source = "exact"
    else:
        # self-consistency: independent pull-back ensembles at the window phases
        ind = indicator(B)
        vals = []
        for t0 in w.F0:
            ens = sample_random_periodic_ensemble(sys_, t0, mc["n_seeds"], mc["K_max"], mc["pullback_tol"],
                                                  seed=seed + 1 + t0)
            vals.append(ind(ens.values).astype(float))
        means = np.array([v.mean() for v in vals])
        target = float(means.mean())
        target_se = float(np.sqrt(np.sum([v.var(ddof=1) / len(v) for v in vals])) / len(vals))
        target_source = "ensemble"
    rep = slln_average(traj, w, B, target)
    band = math.sqrt(rep.clt_band**2 + (3 * target_se) ** 2)
    passed = rep.final_gap <= band + 1e-12
    stride = max(1, len(rep.running_average) // 200)
    results = {
        "window": {"tau": tau, "F0": list(w.F0)},
        "observable": {kind: sorted(B) if kind == "states" else [B.lo, B.hi]},
        "n_windows": rep.n_windows,
        "final_average": float(rep.final),
        "target": target,
        "target_source": target_source,
        "target_stderr": target_se,
        "final_gap": rep.final_gap,
        "band": band,
        "passed": bool(passed),
        "running_average_subsampled": {
            "stride": stride,
            "values": rep.running_average[stride - 1 :: stride],
        },
    }
    _write_csv(out / "trajectory.csv", ["t", "state"], [[t, traj[t].item()] for t in range(min(len(traj), 10000))])
    return results, bool(passed)


def cmd_ulam_spectrum(cfg: dict, out: Path) -> tuple[dict, bool]:
    sys_, P = _system(cfg)
    p = cfg["partition"]
    u = cfg["ulam"]
    if cfg["system"]["kind"] == "periodic_ou":
        partition = CylinderPartition(sys_.period, Partition(p["lo"], p["hi"], p["n_cells"]))
    elif P is not None:
        partition = FinitePartition(P.n_states)
    else:
        partition = Partition(p["lo"], p["hi"], p["n_cells"])
    res = ulam_discretize(sys_, partition, u["n_per_cell"], seed=cfg["seed"])
    spec = transfer_spectrum(res.kernel, u["delta"])
    d = len(spec.unit_circle)
    matched = spec.matches_roots_of_unity(d, u["match_tol"])
    results = {
        "n_cells": partition.n_cells,
        "n_per_cell": u["n_per_cell"],
        "clamped_fraction": res.clamped_fraction,
        "clamp_warning": res.clamp_warning,
        "unit_circle": spec.unit_circle,
        "multiplicities": spec.multiplicities,
        "n_unit_circle": d,
        "roots_of_unity_match": matched,
        "subdominant_modulus": float(abs(spec.eigenvalues[d])) if len(spec.eigenvalues) > d else 0.0,
    }
    _write_csv(out / "spectrum.csv", SPECTRUM_HEADER, _spectrum_rows(spec))
    return results, bool(matched)


HANDLERS = {
    "analyze-chain": cmd_analyze_chain,
    "classify": cmd_classify,
    "simulate": cmd_simulate,
    "slln": cmd_slln,
    "ulam-spectrum": cmd_ulam_spectrum,
}


def run(cfg: dict, out: Path) -> tuple[dict, int]:
    """Execute a resolved config; returns (report, exit code)."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    code = EXIT_OK
    error = None
    results: dict = {}
    try:
        results, passed = HANDLERS[cfg["command"]](cfg, out)
        code = EXIT_OK if passed else EXIT_CHECK_FAILED
    except (NonStochasticRow, NegativeEntry, ParameterOutOfRange, ConfigError, ValueError, OSError) as exc:
        code, error = EXIT_INPUT, exc
    except MultipleClosedClasses as exc:
        code, error = EXIT_DECOMPOSITION, exc
    except InconsistentEvidence as exc:
        code, error = EXIT_INCONSISTENT, exc
    except TooManyFailures as exc:
        code, error = EXIT_FAILURES, exc
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg["command"],
        "config": cfg,
        "results": results,
        "exit_code": code,
        "error": None if error is None else f"{type(error).__name__}: {error}",
        "provenance": {
            "tool": "rpd-lab",
            "version": __version__,
            "seed": cfg["seed"],
            "python": platform.python_version(),
            "numpy": np.__version__,
            "elapsed_seconds": time.perf_counter() - t0,
        },
    }
    report = _jsonable(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report, code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rpd", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"rpd-lab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        sp.add_argument("--seed", type=int, help="64-bit seed; overrides the config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set monte_carlo.T=5000")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.command, args.seed, args.set)
    except ConfigError as exc:
        print(f"rpd: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report, code = run(cfg, out)
    if report["error"]:
        print(f"rpd: {report['error']}", file=sys.stderr)
    print(json.dumps({"command": report["command"], "exit_code": code, "out": str(out / "report.json")}))
    return code


if __name__ == "__main__":
    sys.exit(main())

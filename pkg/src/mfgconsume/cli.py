"""Batch command-line front end.

``mfgconsume <command> --config scenario.json [--out DIR] [overrides]``
with commands:

* ``solve``    -- equilibrium curves to CSV, terminal-condition checks
* ``verify``   -- backward-equation residual, drift bracket, Riccati
  agreement, coefficient identity and cross-formulation relations
* ``simulate`` -- mean-field flow dump and the fixed-point consistency test
* ``deviate``  -- paired common-random-number deviation table
* ``sweep``    -- sensitivity of (pi*, c*) at t = 0 to one parameter

Every run writes UTF-8 CSV artifacts plus one JSON manifest (config hash,
seed, artifact list, per-check pass/fail) and prints a plain-text summary.
Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error.
All randomness flows from the single config seed; ``MFG_CONSUME_THREADS``
caps simulation parallelism without changing any output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import closedform, montecarlo, verify
from .closedform import (
    population_aggregates,
    sigma0_thresholds,
    solve_equilibrium,
    tagged_policy_at0,
)
from .errors import SingularAggregateError, StructuralError
from .grid import GridCurve, TimeGrid
from .population import AgentType, Population, validate


class ConfigError(Exception):
    """Unusable configuration or command line; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

SWEEPABLE = ("h", "sigma", "sigma0", "theta", "gamma", "alpha")

_TOP_KEYS = {"horizon", "n_steps", "population", "bounds", "mc", "tolerances", "out_dir"}
_TYPE_KEYS = {"weight", "x0", "gamma", "theta", "alpha", "h", "sigma", "sigma0"}
_BOUND_DEFAULTS = {"gamma_lb": 1e-3, "sigma_lb": 1e-3, "c_min": 1e-3, "c_max": 10.0, "pi_cap": 10.0}
_MC_DEFAULTS = {"n_samples": 20000, "n_agents": 20000, "n_w0_paths": 3, "seed": 12345,
                "stratified": False}
_TOL_DEFAULTS = {"riccati_tol": 1e-6, "residual_tol": 1e-4, "drift_tol": 1e-12}


@dataclass(frozen=True)
class Bounds:
    gamma_lb: float
    sigma_lb: float
    c_min: float
    c_max: float
    pi_cap: float


@dataclass(frozen=True)
class McSettings:
    n_samples: int
    n_agents: int
    n_w0_paths: int
    seed: int
    stratified: bool = False


@dataclass(frozen=True)
class Tolerances:
    riccati_tol: float
    residual_tol: float
    drift_tol: float


@dataclass(frozen=True)
class ScenarioConfig:
    horizon: float
    n_steps: int
    population: Population
    bounds: Bounds
    mc: McSettings
    tolerances: Tolerances
    out_dir: str
    resolved: dict  # fully-defaulted raw dictionary, hashed into manifests


def _section(raw: dict, key: str, defaults: dict) -> dict:
    got = raw.get(key, {})
    if not isinstance(got, dict):
        raise ConfigError(f"'{key}' must be an object")
    unknown = set(got) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in '{key}': {sorted(unknown)}")
    return {**defaults, **got}


def _curve(grid: TimeGrid, value, where: str) -> GridCurve:
    """Scalar config values broadcast to constant curves; arrays must have
    one value per knot."""
    if isinstance(value, (int, float)):
        return GridCurve.constant(grid, float(value))
    if isinstance(value, list):
        if len(value) != grid.n_steps + 1:
            raise ConfigError(
                f"{where}: curve needs {grid.n_steps + 1} values (n_steps + 1), got {len(value)}"
            )
        try:
            return GridCurve(grid, np.asarray(value, dtype=float))
        except (StructuralError, ValueError) as e:
            raise ConfigError(f"{where}: {e}") from e
    raise ConfigError(f"{where}: expected number or array, got {type(value).__name__}")


def load_config(
    path: str | Path,
    *,
    seed: int | None = None,
    steps: int | None = None,
    samples: int | None = None,
    out_dir: str | None = None,
) -> ScenarioConfig:
    """Parse, default, and validate a scenario file; command-line overrides
    are applied before the population is built."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: parse error at line {e.lineno} col {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")

    resolved = {
        "horizon": float(raw.get("horizon", 1.0)),
        "n_steps": int(steps if steps is not None else raw.get("n_steps", 2000)),
        "bounds": _section(raw, "bounds", _BOUND_DEFAULTS),
        "mc": _section(raw, "mc", _MC_DEFAULTS),
        "tolerances": _section(raw, "tolerances", _TOL_DEFAULTS),
        "out_dir": str(out_dir if out_dir is not None else raw.get("out_dir", "out")),
    }
    if seed is not None:
        resolved["mc"]["seed"] = int(seed)
    if samples is not None:
        resolved["mc"]["n_samples"] = int(samples)
    for name, v in resolved["tolerances"].items():
        if not v > 0:
            raise ConfigError(f"tolerances.{name} must be positive, got {v}")

    type_specs = raw.get("population")
    if not isinstance(type_specs, list) or not type_specs:
        raise ConfigError("'population' must be a non-empty array of type records")
    grid = TimeGrid(resolved["horizon"], resolved["n_steps"])
    types = []
    default_weight = 1.0 / len(type_specs)
    resolved_types = []
    for i, record in enumerate(type_specs):
        if not isinstance(record, dict):
            raise ConfigError(f"population[{i}] must be an object")
        unknown = set(record) - _TYPE_KEYS
        if unknown:
            raise ConfigError(f"population[{i}]: unknown keys {sorted(unknown)}")
        for req in ("gamma", "h", "sigma", "sigma0"):
            if req not in record:
                raise ConfigError(f"population[{i}]: missing required key '{req}'")
        rec = {
            "weight": float(record.get("weight", default_weight)),
            "x0": float(record.get("x0", 1.0)),
            "gamma": float(record["gamma"]),
            "theta": float(record.get("theta", 0.0)),
            "alpha": float(record.get("alpha", 1.0)),
            "h": record["h"],
            "sigma": record["sigma"],
            "sigma0": record["sigma0"],
        }
        resolved_types.append(rec)
        try:
            types.append(
                AgentType(
                    weight=rec["weight"],
                    x0=rec["x0"],
                    gamma=rec["gamma"],
                    theta=rec["theta"],
                    alpha=rec["alpha"],
                    h=_curve(grid, rec["h"], f"population[{i}].h"),
                    sigma=_curve(grid, rec["sigma"], f"population[{i}].sigma"),
                    sigma0=_curve(grid, rec["sigma0"], f"population[{i}].sigma0"),
                )
            )
        except StructuralError as e:
            raise ConfigError(f"population[{i}]: {e}") from e
    resolved["population"] = resolved_types

    b = resolved["bounds"]
    try:
        pop = Population(tuple(types), gamma_lb=float(b["gamma_lb"]), sigma_lb=float(b["sigma_lb"]))
    except StructuralError as e:
        raise ConfigError(str(e)) from e
    report = validate(pop)
    if not report.ok:
        raise ConfigError(f"population violates standing assumptions: {report.describe()}")

    m = resolved["mc"]
    return ScenarioConfig(
        horizon=resolved["horizon"],
        n_steps=resolved["n_steps"],
        population=pop,
        bounds=Bounds(**{k: float(v) for k, v in b.items()}),
        mc=McSettings(int(m["n_samples"]), int(m["n_agents"]), int(m["n_w0_paths"]), int(m["seed"]),
                      bool(m["stratified"])),
        tolerances=Tolerances(**{k: float(v) for k, v in resolved["tolerances"].items()}),
        out_dir=resolved["out_dir"],
        resolved=resolved,
    )


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))  # shortest round-trip representation
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool


class RunManifest:
    """Collects artifacts and checks; serialised once per run."""

    def __init__(self, command: str, cfg: ScenarioConfig):
        # hash the scenario itself; where artifacts land is not part of it
        hashed = {k: v for k, v in cfg.resolved.items() if k != "out_dir"}
        canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
        self.data = {
            "command": command,
            "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
            "seed": cfg.mc.seed,
            "artifacts": [],
            "checks": [],
        }

    def artifact(self, name: str) -> None:
        self.data["artifacts"].append(name)

    def check(self, name: str, value: float, tolerance: float, passed: bool) -> None:
        self.data["checks"].append(
            {"name": name, "value": value, "tolerance": tolerance, "passed": bool(passed)}
        )

    def extra(self, key: str, value) -> None:
        self.data[key] = value

    @property
    def ok(self) -> bool:
        return all(c["passed"] for c in self.data["checks"])

    def write(self, out: Path) -> None:
        self.data["ok"] = self.ok
        self.data["artifacts"].append("manifest.json")
        (out / "manifest.json").write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def summary(self) -> str:
        lines = []
        for c in self.data["checks"]:
            mark = "PASS" if c["passed"] else "FAIL"
            lines.append(f"{mark} {c['name']}: value={c['value']:.6g} tolerance={c['tolerance']:.6g}")
        lines.append("ok" if self.ok else "FAILED: " + ",".join(
            c["name"] for c in self.data["checks"] if not c["passed"]))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_solve(cfg: ScenarioConfig, out: Path, manifest: RunManifest) -> None:
    pop = cfg.population
    sol = solve_equilibrium(pop)
    times = pop.grid.times
    rows = []
    for i, t in enumerate(times):
        for k in range(pop.n_types):
            rows.append(
                (t, k, sol.pi_star[k, i], sol.c_star[k, i], sol.y_tilde[k, i],
                 sol.phi[i], sol.psi[i], sol.z0_common[i])
            )
    _write_csv(out / "equilibrium.csv",
               ["t", "type", "pi_star", "c_star", "y_tilde", "phi", "psi", "z0"], rows)
    manifest.artifact("equilibrium.csv")

    c_term = float(np.abs(sol.c_star[:, -1] - sol.d_coeff).max())
    manifest.check("c_terminal_equals_d", c_term, 0.0, c_term <= 0.0)
    y_term = float(np.abs(sol.y_tilde[:, -1]).max())
    manifest.check("y_tilde_terminal", y_term, 1e-10, y_term <= 1e-10)
    one_plus_psi = float((1.0 + sol.psi).min())
    manifest.check("one_plus_psi_positive", one_plus_psi, 1e-12, one_plus_psi > 1e-12)


def _cmd_verify(cfg: ScenarioConfig, out: Path, manifest: RunManifest) -> None:
    pop = cfg.population
    tol = cfg.tolerances
    sol = solve_equilibrium(pop)

    res = verify.bsde_residual(pop, sol)
    rows = []
    for k in range(pop.n_types):
        for i, t in enumerate(pop.grid.times):
            rows.append((t, k, res.residuals[k, i]))
    _write_csv(out / "residuals.csv", ["t", "type", "residual"], rows)
    manifest.artifact("residuals.csv")
    manifest.check("residual_sup", res.sup_norm, tol.residual_tol, res.sup_norm <= tol.residual_tol)

    j0 = verify._j_at_zero(pop)
    j_err = float((np.abs(j0 + sol.a_coeff) / np.maximum(1.0, np.abs(sol.a_coeff))).max())
    manifest.check("j_identity_relative", j_err, 1e-9, j_err <= 1e-9)

    numeric = closedform.solve_riccati_numeric(pop)
    ric_err = float((np.abs(numeric - sol.c_star) / np.abs(sol.c_star)).max())
    manifest.check("riccati_relative_sup", ric_err, tol.riccati_tol, ric_err <= tol.riccati_tol)

    worst, worst_opt = verify.drift_check(cfg.mc.seed, 10000, "positive")
    w2, w2o = verify.drift_check(cfg.mc.seed + 1, 10000, "negative")
    worst, worst_opt = max(worst, w2), max(worst_opt, w2o)
    manifest.check("mop_drift_max", worst, tol.drift_tol, worst <= tol.drift_tol)
    manifest.check("mop_drift_at_optimum", worst_opt, 1e-10, worst_opt <= 1e-10)

    rel = verify.relation_check(pop, sol, seed=cfg.mc.seed)
    manifest.check("relation_investment", rel.max_err_investment, 1e-12, rel.max_err_investment <= 1e-12)
    manifest.check("relation_nu_hat", rel.max_err_nu_hat, 1e-8, rel.max_err_nu_hat <= 1e-8)
    manifest.check("relation_z0", rel.max_err_z0, 1e-12, rel.max_err_z0 <= 1e-12)


def _cmd_simulate(cfg: ScenarioConfig, out: Path, manifest: RunManifest) -> None:
    pop = cfg.population
    sol = solve_equilibrium(pop)
    flow_model = montecarlo.FlowModel(pop, sol)
    w0 = montecarlo.philox_stream(cfg.mc.seed, montecarlo._sid(montecarlo._DOM_CONS_W0, 0)).normal(
        0.0, np.sqrt(pop.grid.dt), pop.grid.n_steps
    )
    flow = flow_model.along(w0)
    _write_csv(
        out / "flow.csv",
        ["t", "mu_hat", "nu_hat"],
        zip(pop.grid.times, flow.mu_hat.values, flow.nu_hat.values),
    )
    manifest.artifact("flow.csv")

    rep = montecarlo.consistency_test(pop, sol, cfg.mc.n_agents, cfg.mc.n_w0_paths, cfg.mc.seed,
                                      stratified=cfg.mc.stratified)
    _write_csv(
        out / "consistency.csv",
        ["path", "t", "empirical_mean", "flow_mu", "stderr", "deviation_units"],
        ((r.path_index, r.t, r.empirical_mean, r.flow_mu, r.stderr, r.deviation_units) for r in rep.rows),
    )
    manifest.artifact("consistency.csv")
    manifest.check("consistency_max_units", rep.max_deviation_units, 3.0, rep.max_deviation_units <= 3.0)


def _cmd_deviate(cfg: ScenarioConfig, out: Path, manifest: RunManifest, probe_type: int) -> None:
    pop = cfg.population
    b = cfg.bounds
    if not 0 <= probe_type < pop.n_types:
        raise ConfigError(f"probe type {probe_type} out of range")
    sol = solve_equilibrium(pop)
    try:
        perts = montecarlo.default_perturbations(sol, probe_type, b.pi_cap, b.c_min, b.c_max)
    except ValueError as e:
        raise ConfigError(f"equilibrium incompatible with strategy bounds: {e}") from e
    rep = montecarlo.deviation_test(
        pop, probe_type, sol, perts, cfg.mc.n_samples, cfg.mc.seed, b.pi_cap, b.c_min, b.c_max
    )
    _write_csv(
        out / "deviations.csv",
        ["name", "delta", "stderr", "large", "flagged"],
        ((r.name, r.delta, r.stderr, int(r.large), int(r.flagged)) for r in rep.rows),
    )
    manifest.artifact("deviations.csv")
    margin = min(r.delta + 2.0 * r.stderr for r in rep.rows)
    manifest.check("no_profitable_deviation", margin, 0.0, margin >= 0.0)
    large_margin = min((r.delta - 2.0 * r.stderr for r in rep.rows if r.large), default=math.inf)
    manifest.check("large_deviations_detected", large_margin, 0.0, large_margin > 0.0)


def _agent_assumption_ok(agent: AgentType, gamma_lb: float, sigma_lb: float) -> bool:
    vol = agent.sigma.values + agent.sigma0.values
    return (
        agent.gamma != 0.0
        and agent.gamma < 1.0
        and abs(agent.gamma) >= gamma_lb
        and 0.0 <= agent.theta <= 1.0
        and agent.alpha > 0.0
        and float(vol.min()) >= sigma_lb
        and float(agent.sigma.values.min()) >= 0.0
        and float(agent.sigma0.values.min()) >= 0.0
    )


def _set_param(agent: AgentType, parameter: str, value: float) -> AgentType:
    grid = agent.grid
    if parameter in ("h", "sigma", "sigma0"):
        return replace(agent, **{parameter: GridCurve.constant(grid, value)})
    return replace(agent, **{parameter: float(value)})


def sweep_sensitivity(
    cfg: ScenarioConfig,
    parameter: str,
    values: Sequence[float],
    mode: str = "individual",
    probe_type: int = 0,
) -> list[tuple[float, float, float, bool]]:
    """Rows of (value, pi_star, c_star, flagged) at t = 0.

    The swept parameter is treated as deterministic. ``individual`` perturbs
    a tagged agent carrying the probe type's parameters while population
    aggregates stay fixed; ``population`` sets the parameter for every type
    and re-solves the aggregates, the tagged probe keeping her original
    parameters. Rows whose perturbed inputs leave the validated region are
    flagged rather than dropped.
    """
    if parameter not in SWEEPABLE:
        raise ConfigError(f"parameter must be one of {SWEEPABLE}, got {parameter!r}")
    if mode not in ("individual", "population"):
        raise ConfigError(f"mode must be 'individual' or 'population', got {mode!r}")
    pop = cfg.population
    if not 0 <= probe_type < pop.n_types:
        raise ConfigError(f"probe type {probe_type} out of range")
    probe = pop.types[probe_type]
    base_agg = population_aggregates(pop) if mode == "individual" else None

    rows = []
    for v in values:
        flagged = False
        try:
            if mode == "individual":
                agent = _set_param(probe, parameter, v)
                flagged = not _agent_assumption_ok(agent, pop.gamma_lb, pop.sigma_lb)
                pi0, c0 = tagged_policy_at0(base_agg, agent)
            else:
                shifted = Population(
                    tuple(_set_param(tp, parameter, v) for tp in pop.types),
                    gamma_lb=pop.gamma_lb,
                    sigma_lb=pop.sigma_lb,
                )
                flagged = not validate(shifted).ok
                pi0, c0 = tagged_policy_at0(population_aggregates(shifted), probe)
        except (ValueError, SingularAggregateError, ZeroDivisionError):
            rows.append((float(v), math.nan, math.nan, True))
            continue
        rows.append((float(v), pi0, c0, flagged))
    return rows


def _cmd_sweep(
    cfg: ScenarioConfig,
    out: Path,
    manifest: RunManifest,
    parameter: str,
    values: np.ndarray,
    mode: str,
    probe_type: int,
) -> None:
    rows = sweep_sensitivity(cfg, parameter, values, mode, probe_type)
    _write_csv(
        out / "sweep.csv",
        ["value", "pi_star", "c_star", "flagged"],
        ((v, p, c, int(f)) for v, p, c, f in rows),
    )
    manifest.artifact("sweep.csv")
    manifest.extra("sweep", {"parameter": parameter, "mode": mode, "probe_type": probe_type})

    if parameter == "sigma0" and mode == "individual":
        thr = sigma0_thresholds(cfg.population, probe_type, 0.0)
        if thr.valid:
            manifest.extra(
                "thresholds", {"sigma0_upper": thr.sigma0_upper, "sigma0_lower": thr.sigma0_lower}
            )
            marker = max(thr.sigma0_upper, thr.sigma0_lower)
            pis = np.array([r[1] for r in rows])
            vals = np.array([r[0] for r in rows])
            slopes = np.diff(pis)
            flips = np.flatnonzero(np.sign(slopes[:-1]) != np.sign(slopes[1:]))
            if vals[0] < marker < vals[-1]:
                cell = float(vals[1] - vals[0])
                crossing = float(vals[flips[0] + 1]) if flips.size else math.nan
                err = abs(crossing - marker)
                manifest.extra("threshold_crossing", crossing)
                manifest.check("threshold_within_one_cell", err, cell, err <= cell)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def run(command: str, cfg: ScenarioConfig, **kwargs) -> int:
    """Execute one command against a loaded config; returns the exit code."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command, cfg)
    if command == "solve":
        _cmd_solve(cfg, out, manifest)
    elif command == "verify":
        _cmd_verify(cfg, out, manifest)
    elif command == "simulate":
        _cmd_simulate(cfg, out, manifest)
    elif command == "deviate":
        _cmd_deviate(cfg, out, manifest, kwargs.get("probe_type", 0))
    elif command == "sweep":
        if kwargs.get("points", 50) < 2:
            raise ConfigError("sweep needs at least 2 points")
        values = np.linspace(kwargs["lo"], kwargs["hi"], kwargs.get("points", 50))
        _cmd_sweep(
            cfg, out, manifest, kwargs["parameter"], values,
            kwargs.get("mode", "individual"), kwargs.get("probe_type", 0),
        )
    else:
        raise ConfigError(f"unknown command {command!r}")
    manifest.write(out)
    print(f"seed={cfg.mc.seed} out={out}")
    print(manifest.summary())
    return 0 if manifest.ok else 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfgconsume", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify", "simulate", "deviate", "sweep"):
        q = sub.add_parser(name)
        q.add_argument("--config", required=True, help="scenario JSON file")
        q.add_argument("--out", default=None, help="output directory (overrides config)")
        q.add_argument("--seed", type=int, default=None, help="seed override")
        q.add_argument("--steps", type=int, default=None, help="grid steps override")
        q.add_argument("--samples", type=int, default=None, help="Monte-Carlo samples override")
        if name in ("deviate", "sweep"):
            q.add_argument("--probe-type", type=int, default=0)
        if name == "sweep":
            q.add_argument("--parameter", required=True, choices=SWEEPABLE)
            q.add_argument("--lo", type=float, required=True)
            q.add_argument("--hi", type=float, required=True)
            q.add_argument("--points", type=int, default=50)
            q.add_argument("--mode", choices=("individual", "population"), default="individual")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.config, seed=args.seed, steps=args.steps, samples=args.samples, out_dir=args.out
        )
        kwargs = {}
        if hasattr(args, "probe_type"):
            kwargs["probe_type"] = args.probe_type
        if args.command == "sweep":
            kwargs.update(parameter=args.parameter, lo=args.lo, hi=args.hi,
                          points=args.points, mode=args.mode)
        return run(args.command, cfg, **kwargs)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()

"""Command-line front end: strict JSON configs in, CSV and JSON files out.

Commands: ``solve``, ``check``, ``simulate`` and ``sweep``.  Each run writes
into one directory together with ``resolved_config.json`` (the config with
defaults filled in) and ``manifest.json``.

Exit codes: 0 success, 1 usage or parse error, 2 no equilibrium with
inspections, 3 check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import dp_oracle as dp
from . import equilibrium_solver as es
from . import simulator as sim
from .model_core import ModelError, ModelParams, validate_params

EXIT_OK, EXIT_USAGE, EXIT_NO_INSPECTION, EXIT_CHECK_FAILED = 0, 1, 2, 3

COMMANDS = ("solve", "check", "simulate", "sweep")
CLASSES = ("Periodic", "Breakdown", "Recovery", "Disclosure")
PARAM_KEYS = ("H", "L", "c", "lambda", "r", "u", "k")
SIM_DEFAULTS = {"n_paths": 20000, "horizon": None, "seed": 0, "record_paths": False,
                "truncation_policy": "analytic_tail"}
GRID_KEYS = ("min", "max", "count", "spacing")

# tolerances re-asserted when solutions are written and checked
TOL = {
    "sp_residual": 1e-10,
    "x_low_times_V1_minus_k": 1e-12,
    "incentive_residual": 1e-9,
    "h_at_sigma_star": 1e-10,
    "residual_lower": 1e-10,
    "residual_upper": 1e-10,
    "x_zero_difference": 1e-12,
    "oracle_sup_error": 5e-3,
    "oracle_refinement_ratio": 1.5,
    "mc_z": 3.0,
}


class ParseError(Exception):
    pass


class ValidationError(Exception):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


@dataclass
class GridSpec:
    min: float
    max: float
    count: int
    spacing: str = "log"

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, self.count)
        return np.linspace(self.min, self.max, self.count)


@dataclass
class RunConfig:
    params: ModelParams
    command: str
    class_filter: str | None = None
    sim: dict = field(default_factory=lambda: dict(SIM_DEFAULTS))
    sweep: dict | None = None
    output: str = "out"
    formats: tuple = ("csv", "json")

    def sim_config(self, workers: int = 1) -> sim.SimConfig:
        return sim.SimConfig(workers=workers, **self.sim)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {"H": p.H, "L": p.L, "c": p.c, "lambda": p.lam, "r": p.r, "u": p.u, "k": p.k},
            "command": self.command,
            "class_filter": self.class_filter,
            "sim": dict(self.sim),
            "sweep": None if self.sweep is None else {
                axis: {"min": g.min, "max": g.max, "count": g.count, "spacing": g.spacing}
                for axis, g in self.sweep.items()},
            "output": self.output,
            "formats": list(self.formats),
        }


# ---------------------------------------------------------------------------
# parsing


def _check_keys(obj, allowed, where: str, required=()):
    if not isinstance(obj, dict):
        raise ParseError(f"{where or 'config'} must be a JSON object")
    for key in obj:
        if key not in allowed:
            raise ParseError(f"unknown key {(where + '.' if where else '') + key!r}")
    for key in required:
        if key not in obj:
            raise ValidationError(f"{where + '.' if where else ''}{key}", "missing")


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(name, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ValidationError(name, "must be finite")
    return float(value)


def canonical_class(name: str) -> str:
    for c in CLASSES + ("NoInspection",):
        if c.lower() == str(name).lower():
            return c
    raise ValidationError("class_filter", f"unknown class {name!r}; expected one of {', '.join(CLASSES)}")


def _grid(obj, name: str) -> GridSpec:
    _check_keys(obj, GRID_KEYS, name, required=("min", "max", "count"))
    lo, hi = _number(obj["min"], name + ".min"), _number(obj["max"], name + ".max")
    count = obj["count"]
    if isinstance(count, bool) or not isinstance(count, int) or count < 2:
        raise ValidationError(name + ".count", "must be an integer >= 2")
    spacing = obj.get("spacing", "log")
    if spacing not in ("linear", "log"):
        raise ValidationError(name + ".spacing", "must be 'linear' or 'log'")
    if not 0 < lo < hi:
        raise ValidationError(name, "need 0 < min < max")
    return GridSpec(lo, hi, count, spacing)


def parse_config(source: str) -> RunConfig:
    """Parse a JSON document given inline or as a file path."""
    text = source
    if not source.lstrip().startswith("{"):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"cannot read config {source!r}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc)


def config_from_dict(doc) -> RunConfig:
    _check_keys(doc, ("params", "command", "class_filter", "sim", "sweep", "output", "formats"), "",
                required=("params", "command"))
    _check_keys(doc["params"], PARAM_KEYS, "params", required=PARAM_KEYS)
    raw = {key: _number(doc["params"][key], "params." + key) for key in PARAM_KEYS}
    try:
        params = validate_params(raw["H"], raw["L"], raw["c"], raw["lambda"], raw["r"], raw["u"], raw["k"])
    except ModelError as exc:
        raise ValidationError("params", f"{type(exc).__name__}: {exc}") from exc

    command = doc["command"]
    if command not in COMMANDS:
        raise ValidationError("command", f"must be one of {', '.join(COMMANDS)}")
    class_filter = doc.get("class_filter")
    if class_filter is not None:
        class_filter = canonical_class(class_filter)

    sim_doc = doc.get("sim") or {}
    _check_keys(sim_doc, SIM_DEFAULTS, "sim")
    sim_cfg = dict(SIM_DEFAULTS)
    for key, value in sim_doc.items():
        if key == "n_paths":
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValidationError("sim.n_paths", "must be a positive integer")
        elif key == "horizon":
            if value is not None and not _number(value, "sim.horizon") > 0:
                raise ValidationError("sim.horizon", "must be positive")
        elif key == "seed":
            if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2 ** 64:
                raise ValidationError("sim.seed", "must be an integer in [0, 2^64)")
        elif key == "record_paths":
            if not isinstance(value, bool):
                raise ValidationError("sim.record_paths", "must be true or false")
        elif key == "truncation_policy":
            if value not in ("analytic_tail", "hard_cut"):
                raise ValidationError("sim.truncation_policy", "must be 'analytic_tail' or 'hard_cut'")
        sim_cfg[key] = float(value) if key == "horizon" and value is not None else value

    sweep = None
    if doc.get("sweep") is not None:
        _check_keys(doc["sweep"], ("k", "u"), "sweep", required=("k", "u"))
        sweep = {axis: _grid(doc["sweep"][axis], "sweep." + axis) for axis in ("k", "u")}

    output = doc.get("output", "out")
    if not isinstance(output, str) or not output:
        raise ValidationError("output", "must be a nonempty path")
    formats = doc.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not formats or any(f not in ("csv", "json") for f in formats):
        raise ValidationError("formats", "must be a nonempty subset of ['csv', 'json']")
    formats = tuple(f for f in ("csv", "json") if f in formats)
    return RunConfig(params, command, class_filter, sim_cfg, sweep, output, formats)


# ---------------------------------------------------------------------------
# writers


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    write_json(out / "resolved_config.json", cfg.to_dict())
    write_json(out / "manifest.json", {"tool": "oversight", "version": __version__,
                                       "command": cfg.command, "seed": cfg.sim["seed"]})
    return out


# ---------------------------------------------------------------------------
# solve


def residual_checks(sol: es.EquilibriumSolution) -> dict:
    out = {}
    for name, value in sol.diagnostics.items():
        if name in TOL and value is not None:
            out[name] = {"value": float(value), "tol": TOL[name], "ok": abs(float(value)) < TOL[name]}
    return out


def solution_record(sol: es.EquilibriumSolution) -> dict:
    rec = sol.summary()
    rec["residual_checks"] = residual_checks(sol)
    rec["equilibrium"] = bool(sol.diagnostics.get("equilibrium", True))
    return rec


def values_table(sol: es.EquilibriumSolution, n: int = 2001):
    p = np.linspace(0.0, 1.0, n)
    cols = (p, sol.value(p), sol.effort(p), sol.hazard(p), sol.approval(p),
            sol.agent_value(p, 1), sol.agent_value(p, 0))
    return ("p", "V", "eta", "sigma", "alpha", "U1", "U0"), list(zip(*cols))


def candidate_solutions(params: ModelParams, class_filter: str | None = None) -> dict:
    """Every class whose cutoffs and rates solve, equilibrium or not."""
    out = {}
    for name in CLASSES:
        if class_filter and name != class_filter:
            continue
        try:
            sol = es.SOLVERS[name](params)
        except (es.NoRoot, es.NoFixedPoint, es.NotSupported):
            continue
        if sol.cls == name:
            out[name] = sol
    return out


def run_solve(cfg: RunConfig, **_) -> int:
    out = _prepare_output(cfg)
    sols = candidate_solutions(cfg.params, cfg.class_filter)
    for name, sol in sols.items():
        if "json" in cfg.formats:
            write_json(out / f"solution_{name.lower()}.json", solution_record(sol))
        if "csv" in cfg.formats:
            header, rows = values_table(sol)
            write_csv(out / f"values_{name.lower()}.csv", header, rows)
    equilibria = [n for n, s in sols.items() if s.diagnostics.get("equilibrium", True)]
    if not equilibria:
        ni = es.solve_no_inspection(cfg.params)
        if "json" in cfg.formats:
            write_json(out / "solution_noinspection.json", solution_record(ni))
        if "csv" in cfg.formats:
            header, rows = values_table(ni)
            write_csv(out / "values_noinspection.csv", header, rows)
        print("no equilibrium with inspections; wrote the no-inspection solution", file=sys.stderr)
        return EXIT_NO_INSPECTION
    print("equilibria: " + ", ".join(equilibria))
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def _mc_table(sol: es.EquilibriumSolution, est: sim.ValueEstimates) -> dict:
    ref = {"V1": sol.bv.V1, "V0": sol.bv.V0, "U11": sol.bv.U11, "U00": sol.bv.U00}
    table = {}
    for name, value in ref.items():
        e = getattr(est, name)
        # deterministic quantities have zero spread; allow rounding noise
        scale = max(e.se, 1e-12 * max(1.0, abs(value)))
        z = (e.mean - value) / scale
        table[name] = {"closed_form": value, "mc_mean": e.mean, "mc_se": e.se, "z": z,
                       "ok": abs(z) <= TOL["mc_z"]}
    return table


def check_solution(sol: es.EquilibriumSolution, sim_cfg: sim.SimConfig,
                   levels=((2001, 1e-3), (1001, 2e-3))) -> dict:
    rep: dict = {"class": sol.cls, "equilibrium": bool(sol.diagnostics.get("equilibrium", True))}
    checks = residual_checks(sol)
    if sol.sigma_star is not None:
        regime = {"Breakdown": "breakdown", "Recovery": "recovery", "Disclosure": "disclosure"}[sol.cls]
        h = float(es.h_function(sol.sigma_star, sol.cutoffs.x_bar, sol.cutoffs.x_low, regime, sol.params))
        checks["h_at_sigma_star"] = {"value": h, "tol": TOL["h_at_sigma_star"],
                                     "ok": abs(h) < TOL["h_at_sigma_star"]}
        res = float(sol.incentive_residual())
        checks["incentive_residual"] = {"value": res, "tol": TOL["incentive_residual"],
                                        "ok": abs(res) < TOL["incentive_residual"]}
    rep["residuals"] = checks

    oracle = []
    for n, dt in levels:
        cmp = dp.compare_with_solution(sol, n, dt)
        g = cmp.gaps
        oracle.append({"n_nodes": n, "dt": dt, "sup_error_V": cmp.err_V, "sup_error_U": cmp.err_U,
                       "agent_gap": g.agent_gap, "agent_one_step": g.agent_one_step,
                       "principal_gap": g.principal_gap, "bound": g.bound,
                       "gap_ok": g.certified, "flags": g.flags})
    oracle[0]["error_ok"] = oracle[0]["sup_error_V"] < TOL["oracle_sup_error"] and \
        oracle[0]["sup_error_U"] < TOL["oracle_sup_error"]
    ratio = max(oracle[1]["sup_error_V"], oracle[1]["sup_error_U"]) / \
        max(oracle[0]["sup_error_V"], oracle[0]["sup_error_U"])
    rep["oracle"] = {"levels": oracle, "refinement_ratio": ratio,
                     "refinement_ok": ratio >= TOL["oracle_refinement_ratio"]}

    est = sim.estimate_values(sol, sim_cfg)
    rep["monte_carlo"] = {"n_paths": est.n_paths, "seed": sim_cfg.seed, "table": _mc_table(sol, est)}

    rep["pass"] = bool(
        rep["equilibrium"]
        and all(c["ok"] for c in checks.values())
        and oracle[0]["error_ok"]
        and rep["oracle"]["refinement_ok"]
        and all(lv["gap_ok"] for lv in oracle)
        and all(v["ok"] for v in rep["monte_carlo"]["table"].values()))
    return rep


def negative_control(params: ModelParams, n: int = 2001, dt: float = 1e-3) -> dict | None:
    """Breakdown effort with no inspections: the audit must flag it."""
    try:
        sol = es.solve_breakdown(params)
    except (es.NoRoot, es.NoFixedPoint, es.NotSupported):
        return None
    grid = dp.grid_for_solution(sol, n, dt)
    g = dp.deviation_gap(grid, dp.breakdown_without_inspection(sol, grid))
    gap = max(g.agent_gap, g.principal_gap)
    return {"profile": "breakdown effort, never inspect", "principal_gap": g.principal_gap,
            "agent_gap": g.agent_gap, "bound": g.bound, "detected": gap >= 10 * g.bound}


def run_check(cfg: RunConfig, workers: int = 1, sigma_scale: float | None = None, **_) -> int:
    out = _prepare_output(cfg)
    if cfg.class_filter:
        sols = candidate_solutions(cfg.params, cfg.class_filter)
    else:
        sols = es.solve_all(cfg.params)
    if not sols:
        print("no class with inspections solves at these parameters", file=sys.stderr)
        return EXIT_NO_INSPECTION
    sim_cfg = cfg.sim_config(workers)
    report = {"params": cfg.to_dict()["params"], "tolerances": TOL, "classes": {}}
    for name, sol in sols.items():
        if sigma_scale is not None and sol.sigma_star is not None:
            sol = replace(sol, sigma_star=sol.sigma_star * sigma_scale,
                          diagnostics={**sol.diagnostics, "debug_sigma_scale": sigma_scale})
            for key in ("incentive_residual", "h_at_sigma_star"):
                sol.diagnostics.pop(key, None)
        report["classes"][name] = check_solution(sol, sim_cfg)
    report["negative_control"] = negative_control(cfg.params)
    ok = all(c["pass"] for c in report["classes"].values())
    if report["negative_control"] is not None:
        ok = ok and report["negative_control"]["detected"]
    report["pass"] = ok
    write_json(out / "check_report.json", report)
    for name, c in report["classes"].items():
        print(f"{name}: {'pass' if c['pass'] else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# simulate


def run_simulate(cfg: RunConfig, workers: int = 1, **_) -> int:
    if cfg.class_filter is None:
        raise ValidationError("class_filter", "simulate needs --class")
    sols = candidate_solutions(cfg.params, cfg.class_filter)
    if cfg.class_filter == "NoInspection":
        sols = {"NoInspection": es.solve_no_inspection(cfg.params)}
    if cfg.class_filter not in sols:
        print(f"class {cfg.class_filter} does not solve at these parameters", file=sys.stderr)
        return EXIT_NO_INSPECTION
    sol = sols[cfg.class_filter]
    out = _prepare_output(cfg)
    sc = cfg.sim_config(workers)
    hi = sim.simulate(sol, sc, 1.0, 1, stream=1)
    lo = sim.simulate(sol, sc, 0.0, 0, stream=2)
    est = sim.ValueEstimates(sim._estimate(hi.principal), sim._estimate(lo.principal),
                             sim._estimate(hi.agent), sim._estimate(lo.agent), sc.n_paths)
    if sc.record_paths:
        recorded = [hi, lo]
    else:
        small = replace(sc, n_paths=min(sc.n_paths, 2000), record_paths=True)
        recorded = [sim.simulate(sol, small, 1.0, 1, stream=3)]
    stats = sim.cycle_statistics(recorded[0], sol)
    if sc.record_paths and "csv" in cfg.formats:
        rows = []
        for res in recorded:
            ev = res.events
            rows.extend(zip(ev["path_id"], ev["t"], (sim.EVENT_KINDS[k] for k in ev["kind"]),
                            ev["p_before"], ev["p_after"], ev["theta"]))
        write_csv(out / "paths.csv", ("path_id", "t", "event", "p_before", "p_after", "theta"), rows)
    table = _mc_table(sol, est)
    doc = {"class": sol.cls, "estimates": est.as_dict(), "consistency": table,
           "consistent": all(v["ok"] for v in table.values()),
           "cycle_statistics": stats,
           "cycle_statistics_paths": "all recorded paths from (1, 1)" if sc.record_paths
           else f"{recorded[0].n_paths} recorded paths from (1, 1)"}
    write_json(out / "estimates.json", doc)
    print(f"{sol.cls}: V1={est.V1.mean:.6g}±{est.V1.se:.2g} U11={est.U11.mean:.6g}±{est.U11.se:.2g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def run_sweep(cfg: RunConfig, workers: int = 1, **_) -> int:
    if cfg.sweep is None:
        raise ValidationError("sweep", "sweep command needs k and u grids")
    out = _prepare_output(cfg)
    ks, us = cfg.sweep["k"].values(), cfg.sweep["u"].values()
    cells = es.existence_map(cfg.params, ks, us, workers=workers)
    rows = [(c.k, c.u, c.periodic_exists, c.breakdown_exists, c.recovery_exists, c.disclosure_exists,
             c.thresholds.u_bar_P, c.thresholds.u_low_B, c.thresholds.u_low_R_r, c.thresholds.u_low_R_rl)
            for c in cells]
    write_csv(out / "existence_map.csv",
              ("k", "u", "periodic", "breakdown", "recovery", "disclosure",
               "u_bar_P", "u_low_B", "u_low_R_r", "u_low_R_rl"), rows)
    diag = es.map_diagnostics(cells)
    write_csv(out / "corollary1_witnesses.csv", ("k", "k_prime", "u"),
              [(w["k"], w["k_prime"], w["u"]) for w in diag["witnesses"]])
    if not diag["witnesses"]:
        diag["witness_report"] = "no witness on this grid"
    write_json(out / "sweep_report.json", diag)
    print(f"{len(cells)} cells, {len(diag['witnesses'])} witnesses")
    return EXIT_OK


RUNNERS = {"solve": run_solve, "check": run_check, "simulate": run_simulate, "sweep": run_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oversight", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON file or inline JSON document")
        sp.add_argument("--output", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="simulation seed (overrides config)")
        sp.add_argument("--class", dest="class_filter", help="restrict to one equilibrium class")
        sp.add_argument("--workers", type=int, default=1, help="worker processes")
        if name == "check":
            sp.add_argument("--debug-sigma-scale", type=float, default=None,
                            help="multiply sigma* before checking (audit self-test)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = parse_config(args.config)
        cfg.command = args.command
        if args.output:
            cfg.output = args.output
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ValidationError("seed", "must be an integer in [0, 2^64)")
            cfg.sim["seed"] = args.seed
        if args.class_filter:
            cfg.class_filter = canonical_class(args.class_filter)
        if args.workers < 1:
            raise ValidationError("workers", "must be positive")
        return RUNNERS[args.command](cfg, workers=args.workers,
                                     sigma_scale=getattr(args, "debug_sigma_scale", None))
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except sim.HorizonTooShort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

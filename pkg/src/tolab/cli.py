"""Command-line front end: ``tolab {solve,diagnose,experiment,sweep}``.

Configuration is a JSON key tree (see README). ``--override key=value``
replaces one entry, addressed by its dotted path; values are parsed as JSON
when possible and kept as strings otherwise. The output directory is
``--out``, else the TOL_OUT environment variable, else ``./tol_out``.

Exit codes: 0 pass, 1 threshold or solver failure, 2 configuration error,
3 inapplicable diagnostic, 4 inapplicable scenario.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .diagnostics import (
    DiagnosticError,
    InapplicableError,
    acf,
    almgren,
    default_radii,
    delta_mono,
    fit_exponent,
    growth_series,
    weiss,
)
from .energy import ConfigError, Problem, assemble
from .experiments import (
    SCENARIOS,
    InapplicableScenario,
    ScenarioConfig,
    default_config,
    run_scenario,
    solve_options_from_dict,
)
from .io import FieldFormatError, config_hash, dumps, read_field, write_field, write_json, write_thin_csv
from .solver import SolverError, solve_fista, solve_pdas

log = logging.getLogger("tolab")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_DIAGNOSTIC, EXIT_SCENARIO = 0, 1, 2, 3, 4

FREE = object()  # marks a mapping whose keys are not checked

SCHEMA = {
    "n": None,
    "a": None,
    "lam_plus": None,
    "lam_minus": None,
    "grid": {"cells": None, "extent": None, "grading_ratio": None},
    "datum": {"family": None, "params": FREE},
    "solver": {
        "method": None, "kkt_tol": None, "max_outer_iters": None, "linear_solver": None, "cg_rtol": None,
        "fallback": None, "fista_tol": None, "fista_max_iters": None, "energy_rtol": None, "move_tol": None,
    },
    "scenario": {"id": None, "ladder": None, "params": FREE, "seed": None, "workers": None},
    "diagnose": {
        "field": None, "functional": None, "center": None, "radii": None, "count": None,
        "fit_range": None, "mode": None,
    },
    "sweep": {"scenario": None, "a": None, "lam": None, "M": None, "cells": None},
}

FUNCTIONALS = ("weiss", "almgren", "acf", "growth")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, key: str | None = None):
        super().__init__(message)
        self.code, self.kind, self.key = code, kind, key


# -- configuration tree ------------------------------------------------------


def validate_tree(tree, schema=SCHEMA, prefix: str = ""):
    if not isinstance(tree, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'} must be a mapping", prefix.rstrip(".") or None)
    for k, v in tree.items():
        path = prefix + k
        if k not in schema:
            raise ConfigError(f"unknown key {path!r}", path)
        sub = schema[k]
        if isinstance(sub, dict):
            validate_tree(v, sub, path + ".")
        elif sub is FREE and not isinstance(v, dict):
            raise ConfigError(f"{path} must be a mapping", path)


def _known_path(path: str) -> bool:
    node = SCHEMA
    for part in path.split("."):
        if node is FREE:
            return True
        if not isinstance(node, dict) or part not in node:
            return False
        node = node[part]
    return True


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value", text)
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key or not _known_path(key):
        raise ConfigError(f"override names unknown key {key!r}", key)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def set_path(tree: dict, key: str, value):
    parts = key.split(".")
    node = tree
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[parts[-1]] = value


def merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_tree(path: str | None, overrides: list[str]) -> dict:
    """Read the config file (if any), check its keys and apply the overrides."""
    tree: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path!r} does not exist", "config")
        try:
            tree = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}", "config") from None
    validate_tree(tree)
    for text in overrides:
        key, value = parse_override(text)
        set_path(tree, key, value)
    validate_tree(tree)
    return tree


def problem_tree(tree: dict) -> dict:
    return {k: tree[k] for k in ("n", "a", "lam_plus", "lam_minus", "grid", "datum") if k in tree}


def scenario_config(tree: dict, sid: str | None, out_dir: Path) -> ScenarioConfig:
    sc = tree.get("scenario", {})
    sid = sid or sc.get("id")
    if sid is None:
        raise ConfigError("no scenario id given", "scenario.id")
    if sid not in SCENARIOS:
        raise ConfigError(f"unknown scenario {sid!r}", "scenario.id")
    base = default_config(sid)
    merged = merge(base.problem.to_dict(), problem_tree(tree))
    problem = Problem.from_dict(merged)
    params = merge(base.params, sc.get("params", {}))
    ladder = sc.get("ladder", list(base.ladder))
    if not isinstance(ladder, list):
        ladder = [ladder]
    try:
        seed = int(sc.get("seed", 0))
        workers = int(sc.get("workers", 1))
    except (TypeError, ValueError):
        raise ConfigError("seed and workers must be integers", "scenario.seed") from None
    opts = solve_options_from_dict(tree.get("solver", {}))
    return ScenarioConfig(sid, problem, tuple(ladder), params, str(out_dir), seed, opts, workers)


def output_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get("TOL_OUT") or "tol_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------


def cmd_solve(tree: dict, out: Path) -> int:
    problem = Problem.from_dict(tree)
    sv = dict(tree.get("solver", {}))
    method = sv.pop("method", "pdas")
    if method not in ("pdas", "fista"):
        raise ConfigError(f"unknown solver method {method!r}", "solver.method")
    opts = solve_options_from_dict(sv)
    E = assemble(problem)
    try:
        rep = solve_pdas(E, opts) if method == "pdas" else solve_fista(E, opts)
    except SolverError as exc:
        raise CliError(EXIT_FAIL, "solver", str(exc)) from None
    write_field(rep.field, out / "solution.field")
    write_thin_csv(rep.field, out / "thin_trace.csv")
    doc = {
        "problem": problem.to_dict(),
        "config": tree,
        "config_hash": config_hash(tree),
        "report": rep.summary(),
    }
    write_json(doc, out / "solve_report.json")
    print(f"solved {problem.datum.family} a={problem.a} cells={list(problem.grid.cells_per_axis)}: "
          f"energy={rep.energy!r} inclusion={rep.max_inclusion_residual:.2e} iterations={rep.iterations}")
    ok = rep.converged and rep.max_inclusion_residual <= opts.kkt_tol
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_diagnose(tree: dict, out: Path, field_path: str | None) -> int:
    d = tree.get("diagnose", {})
    path = field_path or d.get("field")
    if path is None:
        raise ConfigError("no field file given", "diagnose.field")
    try:
        u = read_field(path)
    except (OSError, FieldFormatError) as exc:
        raise ConfigError(f"cannot read field {path!r}: {exc}", "diagnose.field") from None
    g = u.grid
    for key, have in (("n", g.n), ("a", g.a)):
        if key in tree and float(tree[key]) != float(have):
            raise ConfigError(f"config {key}={tree[key]} does not match the field ({have})", key)
    functional = d.get("functional", "weiss")
    if functional not in FUNCTIONALS:
        raise ConfigError(f"unknown functional {functional!r}", "diagnose.functional")
    center = np.asarray(d.get("center", [0.0] * (g.n - 1)), dtype=float)
    if center.size != g.n - 1:
        raise ConfigError(f"center needs {g.n - 1} coordinates", "diagnose.center")
    x0 = np.append(center, 0.0)
    try:
        if d.get("radii") is not None:
            radii = np.asarray(d["radii"], dtype=float)
        else:
            radii = default_radii(g, x0, int(d.get("count", 16)))
    except DiagnosticError as exc:
        raise ConfigError(str(exc), "diagnose.radii") from None
    lp = float(tree.get("lam_plus", 1.0))
    lm = float(tree.get("lam_minus", 1.0))
    try:
        if functional == "weiss":
            s = weiss(u, None, x0, radii, lam_plus=lp, lam_minus=lm)
        elif functional == "almgren":
            s = almgren(u, g.a, x0, radii)
        elif functional == "acf":
            s = acf(u, x0, radii)
        else:
            mode = d.get("mode", "linear_corrected" if g.a < 0 else "raw")
            s = growth_series(u, x0, radii, mode)
    except InapplicableError as exc:
        raise CliError(EXIT_DIAGNOSTIC, "inapplicable", str(exc)) from None
    except DiagnosticError as exc:
        raise ConfigError(str(exc), "diagnose.radii") from None
    s.to_csv(out / f"{functional}_series.csv")
    summary = {
        "functional": functional,
        "center": x0,
        "radii": s.radii,
        "values": s.values,
        "violation": s.violation(),
        "delta_mono": delta_mono(s),
        "field": str(path),
        "config_hash": config_hash(tree),
    }
    if functional == "growth" or d.get("fit_range") is not None:
        fr = d.get("fit_range")
        try:
            fit = fit_exponent(s, tuple(fr) if fr is not None else None)
        except DiagnosticError as exc:
            raise ConfigError(str(exc), "diagnose.fit_range") from None
        summary["fit"] = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "count": fit.count}
    write_json(summary, out / f"{functional}_summary.json")
    print(f"{functional}: {len(s.radii)} radii, violation {summary['violation']:.3e}"
          + (f", slope {summary['fit']['slope']:.4f}" if "fit" in summary else ""))
    return EXIT_PASS


def cmd_experiment(tree: dict, out: Path, sid: str | None) -> int:
    cfg = scenario_config(tree, sid, out)
    try:
        rep = run_scenario(cfg)
    except InapplicableScenario as exc:
        raise CliError(EXIT_SCENARIO, "inapplicable", str(exc)) from None
    except SolverError as exc:
        raise CliError(EXIT_FAIL, "solver", str(exc)) from None
    for c in rep.checks:
        log.info(c.line())
    fails = rep.failures()
    for c in fails:
        print(c.line())
    print(f"{cfg.scenario}: {len(rep.checks) - len(fails)}/{len(rep.checks)} checks passed -> "
          f"{out / (cfg.scenario + '_report.json')}")
    return EXIT_PASS if rep.passed else EXIT_FAIL


SWEEP_AXES = ("a", "lam", "M", "cells")


def sweep_points(spec: dict) -> list[dict]:
    axes = {k: spec[k] for k in SWEEP_AXES if k in spec}
    if not axes:
        raise ConfigError("sweep grid declares no axes", "sweep")
    for k, v in axes.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"sweep axis {k!r} is empty", f"sweep.{k}")
    names = list(axes)
    seen, points = set(), []
    for combo in itertools.product(*(axes[k] for k in names)):
        point = dict(zip(names, combo))
        key = json.dumps(point, sort_keys=True)
        if key in seen:
            log.warning("duplicate sweep point %s skipped", key)
            continue
        seen.add(key)
        points.append(point)
    return points


def _point_tree(tree: dict, point: dict) -> dict:
    t = copy.deepcopy(tree)
    t.pop("sweep", None)
    if "a" in point:
        t["a"] = point["a"]
    if "lam" in point:
        t["lam_plus"] = t["lam_minus"] = point["lam"]
    if "M" in point:
        set_path(t, "datum.params.M", point["M"])
    if "cells" in point:
        set_path(t, "scenario.ladder", [point["cells"]])
    return t


def _headline(rep) -> float | None:
    runs = [r for r in rep.runs if isinstance(r, dict)]
    if rep.scenario == "E2":
        slopes = [pt["slope"] for r in runs for pt in r.get("points", [])]
        return float(np.mean(slopes)) if slopes else None
    if rep.scenario == "E5":
        seps = [r["separation"] for r in runs if "separation" in r]
        return seps[-1] if seps else None
    return float(len(rep.failures()))


def cmd_sweep(tree: dict, out: Path) -> int:
    spec = tree.get("sweep")
    if not spec:
        raise ConfigError("no sweep grid declared", "sweep")
    sid = spec.get("scenario") or tree.get("scenario", {}).get("id")
    if sid is None:
        raise ConfigError("sweep needs a scenario id", "sweep.scenario")
    points = sweep_points(spec)
    base = default_config(sid)
    if "M" in spec:
        fam = tree.get("datum", {}).get("family", base.problem.datum.family)
        if fam not in ("odd_x1", "linear_xi"):
            raise ConfigError(f"datum {fam!r} has no parameter M", "sweep.M")
    rows, worst = [], EXIT_PASS
    for i, point in enumerate(points):
        pdir = out / f"point_{i:03d}"
        pdir.mkdir(parents=True, exist_ok=True)
        row = {"point": i, **{k: point.get(k, "") for k in SWEEP_AXES}, "scenario": sid}
        try:
            cfg = scenario_config(_point_tree(tree, point), sid, pdir)
            rep = run_scenario(cfg)
            row.update(status="pass" if rep.passed else "fail", headline=_headline(rep),
                       failed_checks=len(rep.failures()), config_hash=rep.config_hash)
        except InapplicableScenario as exc:
            row.update(status="inapplicable", headline="", failed_checks="", config_hash="")
            write_json({"error": "inapplicable", "message": str(exc), "point": point}, pdir / "error.json")
        except (ValueError, SolverError) as exc:
            row.update(status="error", headline="", failed_checks="", config_hash="")
            write_json({"error": type(exc).__name__, "message": str(exc), "point": point}, pdir / "error.json")
        if row["status"] != "pass":
            worst = EXIT_FAIL
        rows.append(row)
        print(f"point {i} {point}: {row['status']}")
    cols = ["point", "scenario", *SWEEP_AXES, "status", "headline", "failed_checks", "config_hash"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _csv_cell(row.get(k, "")) for k in cols})
    return worst


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "nan")
    return v


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tolab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "diagnose", "experiment", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--out", help="output directory (default: $TOL_OUT or ./tol_out)")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        if name == "diagnose":
            sp.add_argument("--field", help="field file (overrides diagnose.field)")
        if name == "experiment":
            sp.add_argument("--scenario", choices=SCENARIOS)
    return ap


def _emit_error(out: Path | None, code: int, kind: str, message: str, key: str | None) -> int:
    doc = {"status": "error", "exit_code": code, "kind": kind, "key": key, "message": message}
    print(dumps(doc))
    if out is not None:
        try:
            write_json(doc, out / "error.json")
        except OSError:
            pass
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        out = output_dir(args.out)
        tree = load_tree(args.config, args.override)
        if args.command == "solve":
            return cmd_solve(tree, out)
        if args.command == "diagnose":
            return cmd_diagnose(tree, out, args.field)
        if args.command == "experiment":
            return cmd_experiment(tree, out, args.scenario)
        return cmd_sweep(tree, out)
    except ConfigError as exc:
        return _emit_error(out, EXIT_CONFIG, "config", str(exc), exc.key)
    except CliError as exc:
        return _emit_error(out, exc.code, exc.kind, str(exc), exc.key)
    except ValueError as exc:
        return _emit_error(out, EXIT_CONFIG, "config", str(exc), None)


if __name__ == "__main__":
    sys.exit(main())

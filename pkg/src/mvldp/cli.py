"""Command-line front end.

``mvldp run <config>`` runs an experiment and writes its outputs,
``mvldp validate <config>`` only checks the config and ``mvldp describe``
prints the config schema. Exit codes: 0 success or PASS, 2 verdict FAIL or
inconclusive, 1 invalid input or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, config_schema, load_config
from .dynamics import Scenario, simulate_particles, solve_limit, trajectory_rows
from .lab import (
    THREADS_ENV,
    ExperimentPlan,
    PowerLambda,
    _fmt,
    _jsonable,
    capped_square,
    emit_report,
    escape_reward,
    run_convergence_experiment,
    run_laplace_check,
    run_ldp_scan,
    run_mdp_scan,
    run_replicas,
    zero_functional,
)
from .rate import RateQuery, TerminalBall, TerminalHalfSpace, Tube, rate_optimize
from .skeleton import solve_mdp_skeleton, solve_skeleton

log = logging.getLogger("mvldp")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def build_event(cfg: Config, scenario: Scenario, regime: str):
    ev = cfg.experiment.event
    d = scenario.dim
    if ev.kind == "terminal-half-space":
        return TerminalHalfSpace(ev.normal, ev.level)
    if ev.kind == "terminal-ball":
        return TerminalBall(ev.center, ev.radius)
    center = ev.center if ev.center is not None else ("zero" if regime == "MDP" else "limit")
    if center == "limit":
        path = solve_limit(scenario)[0].values
    elif center == "zero":
        path = np.zeros((scenario.grid.steps + 1, d))
    else:
        path = np.tile(np.asarray(center, dtype=float), (scenario.grid.steps + 1, 1))
    return Tube(path, ev.radius)


def build_functional(cfg: Config):
    f = cfg.experiment.functional
    if f.kind == "capped-square":
        return capped_square(f.scale, f.cap)
    if f.kind == "escape-reward":
        return escape_reward(f.cap)
    return zero_functional()


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer)) and not isinstance(v, bool) else _fmt(v)
                        for v in row])


def _traj_header(d: int):
    return ["replica", "particle", "step", "t"] + [f"x{k + 1}" for k in range(d)] + [f"k{k + 1}" for k in range(d)]


def _path_rows(X, K):
    Kc = K.values
    for i, t in enumerate(X.grid.times):
        yield (0, 0, i, t, *X.values[i], *Kc[i])


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def dispatch(cfg: Config, threads: int | None = None) -> int:
    """Run the configured experiment; returns the process exit code."""
    out = Path(cfg.output.directory)
    if not out.is_dir():
        if not cfg.output.create:
            raise FileNotFoundError(f"output directory {out} does not exist (set output.create or pass --create)")
        out.mkdir(parents=True)
    (out / "config.json").write_text(cfg.canonical_text(), encoding="utf-8")
    scenario = cfg.build_scenario()
    ex = cfg.experiment
    d = scenario.dim
    meta = {"seed": cfg.seed, "config_hash": cfg.config_hash(), "kind": ex.kind}
    want_csv, want_json = "csv" in cfg.output.formats, "json" in cfg.output.formats

    if ex.kind == "limit":
        X, K = solve_limit(scenario)
        if want_csv:
            _write_csv(out / "trajectory.csv", _traj_header(d), _path_rows(X, K))
        if want_json:
            _write_json(out / "summary.json", {"meta": meta, "terminal": X.terminal,
                                               "reflection_variation": K.total_variation})
        return EXIT_OK

    if ex.kind == "simulate":
        keep = min(ex.save_particles, scenario.particles)

        def one(r):
            ens = simulate_particles(scenario, ex.eps, replica=r, record=keep > 0)
            rows = list(trajectory_rows(ens, range(keep))) if keep else []
            return rows, ens.terminal, ens.vi_ok
        parts = run_replicas(one, scenario.replicas, threads)
        if want_csv:
            _write_csv(out / "trajectory.csv", _traj_header(d), (row for p in parts for row in p[0]))
        if want_json:
            term = np.concatenate([p[1] for p in parts])
            vi = [p[2] for p in parts if p[2] is not None]
            _write_json(out / "summary.json", {
                "meta": meta, "eps": ex.eps, "replicas_completed": len(parts), "paths": int(term.shape[0]),
                "terminal_mean": term.mean(axis=0), "terminal_second_moment": float(np.mean(np.sum(term**2, 1))),
                "variation_inequality_failures": int(sum((~v).sum() for v in vi)) if vi else None})
        return EXIT_OK

    if ex.kind in ("skeleton", "mdp-skeleton"):
        u = ex.control.build(scenario.grid, d)
        Y, K = solve_skeleton(scenario, u) if ex.kind == "skeleton" else solve_mdp_skeleton(scenario, u)
        if want_csv:
            _write_csv(out / "trajectory.csv", _traj_header(d), _path_rows(Y, K))
        if want_json:
            _write_json(out / "summary.json", {"meta": meta, "control_energy": u.energy, "terminal": Y.terminal})
        return EXIT_OK

    if ex.kind == "rate":
        event = build_event(cfg, scenario, ex.regime)
        res = rate_optimize(scenario, RateQuery(event, ex.regime), seed=cfg.seed, **ex.rate.model_dump())
        if want_csv:
            _write_csv(out / "trajectory.csv", _traj_header(d),
                       ((0, 0, i, t, *res.path.values[i], *([0.0] * d))
                        for i, t in enumerate(scenario.grid.times)))
        if want_json:
            _write_json(out / "summary.json", {"meta": meta, "rate": res.to_json()})
        return EXIT_OK if res.converged else EXIT_FAIL

    regime = "MDP" if ex.kind == "mdp" else "LDP"
    plan = ExperimentPlan(scenario, ex.eps_grid, event=build_event(cfg, scenario, regime) if ex.event else None,
                          lam=PowerLambda(ex.lambda_power), tolerance=ex.tolerance, fit=ex.fit, threads=threads,
                          rate_options=({**ex.rate.model_dump(), "seed": cfg.seed} if ex.kind != "laplace"
                                        else {"segments": ex.rate.segments, "maxiter": ex.rate.maxiter}),
                          name=ex.kind)
    if ex.kind == "ldp":
        report = run_ldp_scan(plan)
    elif ex.kind == "mdp":
        report = run_mdp_scan(plan)
    elif ex.kind == "laplace":
        report = run_laplace_check(plan, build_functional(cfg))
    else:
        report = run_convergence_experiment(plan)
    emit_report([report], out, meta)
    print(f"{ex.kind}: verdict {report.verdict} (predicted {report.predicted}, fit {report.fit})")
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvldp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--threads", type=int, default=None,
                     help=f"worker threads for replicas (default: ${THREADS_ENV} or 1)")
    run.add_argument("--create", action="store_true", help="create the output directory if missing")
    val = sub.add_parser("validate", help="validate a config and print its canonical form")
    val.add_argument("config")
    sub.add_parser("describe", help="print the config schema as JSON")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "describe":
        print(json.dumps(config_schema(), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        cfg = load_config(args.config, seed=getattr(args, "seed", None), out=getattr(args, "out", None))
        if args.command == "validate":
            sys.stdout.write(cfg.canonical_text())
            return EXIT_OK
        if args.create:
            cfg.output.create = True
        return dispatch(cfg, threads=args.threads)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # every runtime failure maps to exit 1 with a message
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

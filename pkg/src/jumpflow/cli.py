"""Command-line front end.

Configuration is a TOML file with an explicit schema_version; scenario
parameters live under [scenario], run parameters under [run], and optional
[output] / [validation] tables tune destinations and checking. Flags
override their config counterparts. Exit codes are stable:

    0  everything passed
    1  a statistical verdict came back non_decreasing under --strict
    2  a validation check failed, or a template rejected its parameters
    3  configuration problems (parse errors, bad keys, unusable schedules)
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, replace
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .experiments import CouplingPlan, run_coupled
from .noise import TimeGrid, sample_noise
from .scenarios import TEMPLATES, ParameterError, ScenarioError, run_validators
from .solver import SolveConfig, integrate_on_union, prepare_union

SCHEMA_VERSION = 1
WORKERS_ENV = "JUMPFLOW_WORKERS"


class ConfigError(Exception):
    """Anything that makes the configuration unusable."""


@dataclass
class RunConfig:
    template_id: str
    params: dict
    plan: CouplingPlan
    out_dir: str = "."
    formats: tuple = ("json", "csv")
    validation_mode: str = "strict"
    validation_samples: int = 200
    workers: int = 1
    dump_paths: bool = False


_RUN_KEYS = {"master_seed", "paths", "schedule", "epsilons", "n_steps",
             "refine_hits", "trend_slack"}
_OUTPUT_KEYS = {"directory", "formats"}
_VALIDATION_KEYS = {"mode", "samples"}
_TOP_KEYS = {"schema_version", "scenario", "run", "output", "validation"}


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing required key {key!r} in {where}")
    return table[key]


def _check_keys(table: dict, allowed: set, where: str, strict: bool):
    extra = set(table) - allowed
    if not extra:
        return
    msg = f"unknown key(s) in {where}: {', '.join(sorted(extra))}"
    if strict:
        raise ConfigError(msg)
    print(f"warning: {msg}", file=sys.stderr)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config parse error in {path}: {e}")

    version = _require(raw, "schema_version", "the top level")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; this build "
                          f"reads version {SCHEMA_VERSION}")

    vtab = raw.get("validation", {})
    mode = vtab.get("mode", "strict")
    if mode not in ("strict", "warn", "skip"):
        raise ConfigError(f"validation.mode must be strict, warn or skip, got {mode!r}")
    strict_keys = mode == "strict"

    _check_keys(raw, _TOP_KEYS, "the top level", strict_keys)
    _check_keys(vtab, _VALIDATION_KEYS, "[validation]", strict_keys)

    scen = _require(raw, "scenario", "the top level")
    if not isinstance(scen, dict):
        raise ConfigError("[scenario] must be a table")
    tid = _require(scen, "template", "[scenario]")
    if tid not in TEMPLATES:
        raise ConfigError(f"unknown scenario template {tid!r}; known: "
                          f"{', '.join(sorted(TEMPLATES))}")
    params = {k: v for k, v in scen.items() if k != "template"}

    run = _require(raw, "run", "the top level")
    if not isinstance(run, dict):
        raise ConfigError("[run] must be a table")
    _check_keys(run, _RUN_KEYS, "[run]", strict_keys)
    try:
        plan = CouplingPlan(
            schedule=tuple(_require(run, "schedule", "[run]")),
            paths=int(_require(run, "paths", "[run]")),
            master_seed=int(_require(run, "master_seed", "[run]")),
            n_steps=int(_require(run, "n_steps", "[run]")),
            epsilons=tuple(run.get("epsilons", (0.1,))),
            refine_hits=bool(run.get("refine_hits", True)),
            trend_slack=float(run.get("trend_slack", 0.25)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [run] table: {e}")

    out = raw.get("output", {})
    _check_keys(out, _OUTPUT_KEYS, "[output]", strict_keys)
    formats = tuple(out.get("formats", ("json", "csv")))
    bad = set(formats) - {"json", "csv"}
    if bad:
        raise ConfigError(f"output.formats entries must be json or csv, got "
                          f"{', '.join(sorted(bad))}")

    samples = vtab.get("samples", 200)
    if not isinstance(samples, int) or samples < 8:
        raise ConfigError("validation.samples must be an integer >= 8")

    return RunConfig(template_id=tid, params=params, plan=plan,
                     out_dir=str(out.get("directory", ".")), formats=formats,
                     validation_mode=mode, validation_samples=samples)


def _resolve_workers(flag_value: Optional[int]) -> int:
    if flag_value is not None:
        if flag_value < 1:
            raise ConfigError("--workers must be >= 1")
        return flag_value
    env = os.environ.get(WORKERS_ENV)
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer")
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    plan = cfg.plan
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.paths is not None:
        updates["paths"] = args.paths
    if args.schedule is not None:
        try:
            updates["schedule"] = tuple(int(s) for s in args.schedule.split(","))
        except ValueError:
            raise ConfigError(f"--schedule must be comma-separated integers, "
                              f"got {args.schedule!r}")
    if args.eps is not None:
        try:
            updates["epsilons"] = tuple(float(s) for s in args.eps.split(","))
        except ValueError:
            raise ConfigError(f"--eps must be comma-separated numbers, got {args.eps!r}")
    if updates:
        try:
            plan = replace(plan, **updates)
        except ValueError as e:
            raise ConfigError(str(e))
    cfg.plan = plan
    if args.out is not None:
        cfg.out_dir = args.out
    if args.validation_mode is not None:
        cfg.validation_mode = args.validation_mode
    cfg.workers = _resolve_workers(args.workers)
    return cfg


def _build_sequence(cfg: RunConfig):
    return TEMPLATES[cfg.template_id].build(cfg.params)


def _print_reports(reports) -> bool:
    ok = True
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        line = f"{r.assumption}: {status} constant={r.constant:.6g}"
        if r.note:
            line += f" ({r.note})"
        print(line)
        ok = ok and r.passed
    return ok


def _run_validation(cfg: RunConfig, seq) -> tuple[bool, bool]:
    """Returns (ran, all_passed)."""
    if cfg.validation_mode == "skip":
        print("validation skipped")
        return False, True
    template = TEMPLATES[cfg.template_id]
    reports = run_validators(
        seq, checks=template.checks, schedule=cfg.plan.schedule,
        master_seed=cfg.plan.master_seed, samples=cfg.validation_samples,
        radius=template.validation_radius)
    ok = _print_reports(reports)
    return True, ok


def cmd_validate(cfg: RunConfig) -> int:
    try:
        seq = _build_sequence(cfg)
    except ParameterError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except ScenarioError as e:
        print(f"scenario rejected: {e}", file=sys.stderr)
        return 2
    _, ok = _run_validation(cfg, seq)
    if not ok and cfg.validation_mode == "strict":
        return 2
    return 0


def cmd_converge(cfg: RunConfig) -> int:
    if len(cfg.plan.schedule) < 2:
        print("config error: trend verdicts need a schedule of at least two "
              "indices", file=sys.stderr)
        return 3
    try:
        seq = _build_sequence(cfg)
    except ParameterError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except ScenarioError as e:
        print(f"scenario rejected: {e}", file=sys.stderr)
        return 2
    ran, ok = _run_validation(cfg, seq)
    if ran and not ok:
        if cfg.validation_mode == "strict":
            return 2
        print("continuing despite validation failures (warn mode)", file=sys.stderr)

    report = run_coupled(seq, cfg.plan, workers=cfg.workers)
    report.validation_mode = cfg.validation_mode

    os.makedirs(cfg.out_dir, exist_ok=True)
    if "json" in cfg.formats:
        report.write_json(os.path.join(cfg.out_dir, "report.json"))
    if "csv" in cfg.formats:
        report.write_summary_csv(os.path.join(cfg.out_dir, "summary.csv"))

    print(f"solution convergence: {report.verdicts['mean_sq_delta']}")
    for eps_key, verdict in report.verdicts["tau_exceed"].items():
        print(f"hit-time convergence[eps={eps_key}]: {verdict}")
    print(f"wall {report.wall_seconds:.2f}s lane={report.lane} "
          f"out={cfg.out_dir}")

    if cfg.dump_paths:
        dump = os.path.join(cfg.out_dir, "paths.csv")
        with open(dump, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "n", "delta_sq", "tau_n", "tau_limit", "gap"])
            for o in report.iter_outcomes():
                w.writerow([o.path_id, o.n, repr(o.delta_sq), repr(o.tau_n),
                            repr(o.tau_limit), repr(o.gap)])

    if cfg.validation_mode == "strict":
        bad = report.verdicts["mean_sq_delta"] == "non_decreasing" or any(
            v == "non_decreasing" for v in report.verdicts["tau_exceed"].values())
        if bad:
            return 1
    return 0


def cmd_simulate(cfg: RunConfig, path_id: int) -> int:
    try:
        seq = _build_sequence(cfg)
    except ParameterError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except ScenarioError as e:
        print(f"scenario rejected: {e}", file=sys.stderr)
        return 2
    plan = cfg.plan
    grid = TimeGrid(seq.horizon, plan.n_steps)
    cs0 = seq.coefficients(0)
    noise = sample_noise(grid, seq.jump_spec, plan.master_seed, path_id,
                         cs0.dim_wiener)
    union = prepare_union(noise.wiener, noise.jumps)
    config = SolveConfig(n_steps=plan.n_steps)
    levels = (0,) + plan.schedule
    columns = {}
    d = cs0.dim_state
    for n in levels:
        states, _, _ = integrate_on_union(seq.coefficients(n),
                                          seq.initial_state(n), union, config)
        columns[n] = states

    os.makedirs(cfg.out_dir, exist_ok=True)
    dest = os.path.join(cfg.out_dir, f"trajectory_{path_id}.csv")
    header = ["time"]
    for n in levels:
        if d == 1:
            header.append(f"x_n{n}")
        else:
            header.extend(f"x_n{n}_{j + 1}" for j in range(d))
    header.append("is_jump")
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(union.times):
            row = [repr(float(t))]
            for n in levels:
                row.extend(repr(float(v)) for v in columns[n][i])
            row.append(int(union.is_jump[i]))
            w.writerow(row)
    print(f"wrote {dest} ({len(union.times)} nodes, levels {list(levels)})")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML configuration file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker threads (default ${WORKERS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--paths", type=int, default=None, help="path count override")
    p.add_argument("--schedule", default=None,
                   help="comma-separated family indices, e.g. 1,4,16,64")
    p.add_argument("--eps", default=None,
                   help="comma-separated gap thresholds, e.g. 0.05,0.1")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--strict", dest="validation_mode", action="store_const",
                   const="strict", help="fail on validation or verdict problems")
    g.add_argument("--warn", dest="validation_mode", action="store_const",
                   const="warn", help="report validation failures but continue")
    g.add_argument("--skip-validation", dest="validation_mode",
                   action="store_const", const="skip",
                   help="do not run validators")
    p.set_defaults(validation_mode=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jumpflow",
        description="coupled jump-diffusion simulation and hitting-time "
                    "convergence experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("validate", help="run assumption checks on a scenario")
    _add_common(pv)

    pc = sub.add_parser("converge", help="run the coupled convergence experiment")
    _add_common(pc)
    pc.add_argument("--dump-paths", action="store_true",
                    help="also write per-path outcomes to paths.csv")

    ps = sub.add_parser("simulate", help="write one coupled trajectory set as CSV")
    _add_common(ps)
    ps.add_argument("--path-id", type=int, default=0,
                    help="which path's noise to realize (default 0)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "converge":
            cfg.dump_paths = args.dump_paths
            return cmd_converge(cfg)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.path_id)
        raise AssertionError(f"unhandled command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

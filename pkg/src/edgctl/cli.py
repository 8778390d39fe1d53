"""Command-line batch driver.

Subcommands: ``solve`` (one coupled solve, optional field sampling),
``convergence`` (levels vs a fine reference, CSV table), ``mms``
(state-only manufactured-solution study), ``dofs`` (dof-count report).

Flags may also come from a JSON config file via ``--config``;
command-line flags override file values.  Exit codes: 0 success,
2 config error, 3 solver error, 4 I/O error.  ``EDG_THREADS`` caps
internal parallelism (0 = serial deterministic mode, the default).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, SolverError
from .postproc import field_csv, sample_field
from .problems import CATALOG_NAMES
from .spaces import dof_report
from .workflows import (convergence_study, mms_study, solve_control,
                        solve_state)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

_METHODS = ("edg", "iedg", "hdg")


@dataclass
class RunConfig:
    command: str
    method: str = "edg"
    degree: int = 1
    level: Optional[int] = None
    levels: Optional[list] = None
    reference_level: Optional[int] = None
    problem: str = "example1-high"
    sample_grid: int = 0
    sample_which: str = "y"
    solver: str = "condensed"
    output: Optional[str] = None
    threads: int = 0

    def validate(self):
        if self.command not in ("solve", "convergence", "mms", "dofs"):
            raise ConfigurationError(f"unknown command {self.command!r}")
        if self.method not in _METHODS:
            raise ConfigurationError(
                f"--method must be one of {_METHODS}, got {self.method!r}")
        if self.degree not in (0, 1, 2):
            raise ConfigurationError("--degree must be 0, 1 or 2")
        if self.solver not in ("condensed", "monolithic"):
            raise ConfigurationError(
                "--solver must be 'condensed' or 'monolithic'")
        if self.command in ("solve", "dofs"):
            if self.level is None or self.level < 0:
                raise ConfigurationError(
                    f"{self.command} requires --level >= 0")
        if self.command in ("convergence", "mms"):
            if not self.levels:
                raise ConfigurationError(
                    f"{self.command} requires --levels a..b")
            if sorted(self.levels) != self.levels or \
                    len(set(self.levels)) != len(self.levels):
                raise ConfigurationError("levels must be strictly increasing")
        if self.command == "convergence":
            if self.reference_level is None:
                raise ConfigurationError("convergence requires "
                                         "--reference-level")
            if self.reference_level <= max(self.levels):
                raise ConfigurationError(
                    "--reference-level must exceed the largest study level")
        if self.command in ("solve", "convergence") and \
                self.problem not in CATALOG_NAMES:
            raise ConfigurationError(
                f"unknown problem {self.problem!r}; available: "
                f"{CATALOG_NAMES}")
        if self.sample_grid < 0:
            raise ConfigurationError("--sample-grid must be nonnegative")
        if self.threads < 0:
            raise ConfigurationError("EDG_THREADS must be a nonnegative "
                                     "integer")
        return self


def parse_levels(text):
    """Inclusive level range 'a..b' or comma list."""
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(p) for p in text.split(",")]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="edgctl",
        description="Embedded/hybridizable DG solvers for Dirichlet "
                    "boundary control of convection-diffusion equations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_level=False, with_levels=False):
        p.add_argument("--config", help="JSON config file; flags override "
                                        "its values")
        p.add_argument("--method", choices=_METHODS,
                       help="trace-continuity variant (default edg)")
        p.add_argument("--degree", type=int, help="flux degree k in {0,1,2} "
                                                  "(default 1)")
        p.add_argument("--problem", help="catalog problem name "
                                         "(default example1-high)")
        p.add_argument("--solver", choices=("condensed", "monolithic"),
                       help="solution path (default condensed)")
        p.add_argument("--output", "-o", help="output file (directory for "
                                              "solve)")
        if with_level:
            p.add_argument("--level", type=int, help="refinement level")
        if with_levels:
            p.add_argument("--levels", help="inclusive level range a..b")

    p = sub.add_parser("solve", help="solve the coupled control problem "
                                     "at one level")
    common(p, with_level=True)
    p.add_argument("--sample-grid", type=int,
                   help="sample fields on an NxN grid and write CSV")
    p.add_argument("--sample-which", default=None,
                   help="field to sample (y, z, qx, qy, px, py; default y)")

    p = sub.add_parser("convergence", help="error/order table against a "
                                           "fine reference solution")
    common(p, with_levels=True)
    p.add_argument("--reference-level", type=int,
                   help="level of the reference solve (must exceed all "
                        "study levels)")

    p = sub.add_parser("mms", help="state-only manufactured-solution study")
    common(p, with_levels=True)

    p = sub.add_parser("dofs", help="degree-of-freedom report (JSON)")
    common(p, with_level=True)
    return parser


def _merge_config(args) -> RunConfig:
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file is not valid JSON: {exc}")
        if not isinstance(file_cfg, dict):
            raise ConfigurationError("config file must hold a JSON object")

    cfg = RunConfig(command=args.command)
    known = {f for f in RunConfig.__dataclass_fields__ if f != "command"}
    for key, val in file_cfg.items():
        k = key.replace("-", "_")
        if k not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        if k == "levels" and isinstance(val, str):
            val = parse_levels(val)
        setattr(cfg, k, val)

    for k in known:
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, parse_levels(v) if k == "levels" else v)

    try:
        cfg.threads = int(os.environ.get("EDG_THREADS", cfg.threads))
    except ValueError:
        raise ConfigurationError("EDG_THREADS must be an integer")
    return cfg.validate()


def _write_text(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise _IOFailure(str(exc))


class _IOFailure(Exception):
    pass


def _cmd_solve(cfg: RunConfig):
    spec_mode_state = cfg.problem == "mms-trig"
    if spec_mode_state:
        sol = solve_state(cfg.method, cfg.degree, cfg.level, cfg.problem)
    else:
        sol = solve_control(cfg.method, cfg.degree, cfg.level, cfg.problem,
                            solver_path=cfg.solver)
    report = {
        "method": cfg.method, "degree": cfg.degree, "level": cfg.level,
        "problem": cfg.problem, "residual_rel": sol.bundle.residual_rel,
    }
    outputs = {}
    if cfg.sample_grid:
        X, Y, vals = sample_field(sol, cfg.sample_which, cfg.sample_grid)
        report["sample_which"] = cfg.sample_which
        report["sample_min"] = float(vals.min())
        report["sample_max"] = float(vals.max())
        report["sample_finite"] = bool(vals.size and np.isfinite(vals).all())
        outputs["field"] = field_csv(X, Y, vals)
    outputs["solution"] = sol.bundle.to_json()

    if cfg.output:
        outdir = Path(cfg.output)
        _write_text(outdir / "solution.json", outputs["solution"])
        if "field" in outputs:
            _write_text(outdir / f"field_{cfg.sample_which}.csv",
                        outputs["field"])
        report["output_dir"] = str(outdir)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def _cmd_convergence(cfg: RunConfig):
    table = convergence_study(cfg.method, cfg.degree, cfg.levels,
                              cfg.reference_level, cfg.problem,
                              solver_path=cfg.solver, threads=cfg.threads)
    csv = table.to_csv()
    if cfg.output:
        _write_text(cfg.output, csv)
    sys.stdout.write(csv)
    return EXIT_OK


def _cmd_mms(cfg: RunConfig):
    table = mms_study(cfg.method, cfg.degree, cfg.levels)
    csv = table.to_csv()
    if cfg.output:
        _write_text(cfg.output, csv)
    sys.stdout.write(csv)
    return EXIT_OK


def _cmd_dofs(cfg: RunConfig):
    from .mesh import build_uniform_square
    from .spaces import TraceVariant, build_spaces
    spaces = build_spaces(build_uniform_square(cfg.level),
                          TraceVariant.from_name(cfg.method), cfg.degree)
    text = json.dumps(dof_report(spaces), indent=2, sort_keys=True) + "\n"
    if cfg.output:
        _write_text(cfg.output, text)
    sys.stdout.write(text)
    return EXIT_OK


def run(cfg: RunConfig) -> int:
    """Execute a validated RunConfig; returns the process exit code."""
    dispatch = {"solve": _cmd_solve, "convergence": _cmd_convergence,
                "mms": _cmd_mms, "dofs": _cmd_dofs}
    return dispatch[cfg.command](cfg)


def _error_record(kind, message):
    return json.dumps({"error": kind, "message": str(message)},
                      sort_keys=True)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
    except (ConfigurationError, ValueError) as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg)
    except _IOFailure as exc:
        print(_error_record("io", exc), file=sys.stderr)
        return EXIT_IO
    except SolverError as exc:
        print(_error_record("solver", exc), file=sys.stderr)
        return EXIT_SOLVER
    except ConfigurationError as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

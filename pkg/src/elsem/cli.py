"""Command-line entry point (``python3 -m elsem``).

Subcommands
-----------
simulate   run Monte Carlo scenarios from a JSON config and write report.csv
           and replications.csv
fit        fit plain and EL-weighted estimators to a CSV data file
el-diag    print EL diagnostics and multiplier bound checks for a data file

Exit codes: 0 success, 2 study degenerate, 3 configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import el_core
from .constraints import SideInfoSpec
from .errors import ConfigError, StudyDegenerate
from .mdf_fit import DiscrepancyKind, build_constraints, fit_el, fit_plain
from .sem_model import DataMatrix, SemSpec, sem22_spec
from .simulation import load_config, render_report, run_study, write_outputs

EXIT_OK = 0
EXIT_DEGENERATE = 2
EXIT_CONFIG = 3

_SPEC_KEYS = {"model", "fix_beta", "d", "c", "free", "B_fixed", "Gamma_fixed", "phi_free",
              "Phi_fixed", "discrepancy", "side"}


def spec_from_config(doc: dict) -> tuple[SemSpec, DiscrepancyKind, dict]:
    """Model description for ``fit`` and ``el-diag``.

    Either ``{"model": "sem22", "fix_beta": false}`` or an explicit
    ``{"d", "c", "free": [[matrix, row, col, name], ...], ...}``. Optional
    ``discrepancy`` and ``side`` objects are passed through.
    """
    if not isinstance(doc, dict):
        raise ConfigError("spec config must be an object")
    unknown = set(doc) - _SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
    try:
        if doc.get("model", "sem22" if "d" not in doc else None) == "sem22":
            spec = sem22_spec(fix_beta=bool(doc.get("fix_beta", False)))
        else:
            spec = SemSpec(d=int(doc["d"]), c=int(doc["c"]),
                           free=tuple(tuple(f) for f in doc.get("free", ())),
                           B_fixed=doc.get("B_fixed"), Gamma_fixed=doc.get("Gamma_fixed"),
                           phi_free=bool(doc.get("phi_free", True)),
                           Phi_fixed=doc.get("Phi_fixed"))
        kind = DiscrepancyKind(**doc.get("discrepancy", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad spec config: {exc}") from None
    return spec, kind, dict(doc.get("side", {}))


def _side(kind: str, m, extra: dict) -> SideInfoSpec:
    opts = dict(extra)
    opts["kind"] = kind or opts.get("kind", "independence")
    if m is not None:
        opts["m"] = m
    if opts["kind"] == "medians" and opts.get("medians") is None:
        raise ConfigError("the medians side information needs known medians in the spec config")
    try:
        return SideInfoSpec(**opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _read_data(path) -> DataMatrix:
    try:
        return DataMatrix.from_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read data {path}: {exc}") from None


def cmd_simulate(args) -> int:
    configs = load_config(args.config)
    overrides = {}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.seed is not None:
        overrides["seed"] = args.seed
    configs = [replace(c, **overrides) for c in configs]
    reports = [run_study(c, threads=args.threads) for c in configs]
    write_outputs(reports, args.out)
    sys.stdout.write(render_report(reports, args.format))
    return EXIT_OK


def cmd_fit(args) -> int:
    data = _read_data(args.data)
    spec, kind, side_doc = spec_from_config(_read_json(args.spec) if args.spec else {})
    if (spec.d, spec.c) != (data.d, data.c):
        raise ConfigError(f"spec has d={spec.d}, c={spec.c}; data has d={data.d}, c={data.c}")
    side = _side(args.side or side_doc.get("kind"), args.m, side_doc)
    plain = fit_plain(data, spec, kind, compute_avar=True)
    print("plain MDF fit")
    print(plain.to_text())
    el = fit_el(data, spec, kind, side=side, compute_avar=True)
    print()
    print(f"EL-weighted MDF fit ({side.kind})")
    print(el.to_text())
    return EXIT_OK


def cmd_el_diag(args) -> int:
    data = _read_data(args.data)
    spec, kind, side_doc = spec_from_config(_read_json(args.spec) if args.spec else {})
    side = _side(args.side, args.m, side_doc)
    theta = fit_plain(data, spec, kind).theta_hat.theta if side.kind == "independence" else None
    U = build_constraints(data, spec, theta, side)
    sol = el_core.solve_dual(U)
    print("EL diagnostics")
    for k, v in sol.diagnostics.as_dict().items():
        print(f"  {k:>15}: {v}")
    print(f"  {'zeta':>15}: {np.array2string(sol.zeta, precision=6)}")
    rep = el_core.verify_lemma_bounds(sol, U)
    print(f"multiplier bounds (guaranteed: {rep.applicable})")
    for name in ("o3", "o4", "o6", "o9"):
        print(f"  {name}: {'holds' if getattr(rep, name) else 'violated'}")
    for k, v in rep.values.items():
        print(f"  {k:>15}: {v:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elsem", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run Monte Carlo scenarios")
    s.add_argument("--config", required=True)
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default=".")
    s.add_argument("--format", choices=("csv", "markdown"), default="csv")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a data file")
    f.add_argument("--data", required=True)
    f.add_argument("--spec")
    f.add_argument("--side", choices=("independence", "medians"))
    f.add_argument("--m", type=int)
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("el-diag", help="EL diagnostics for a data file")
    d.add_argument("--data", required=True)
    d.add_argument("--side", required=True, choices=("independence", "medians"))
    d.add_argument("--spec")
    d.add_argument("--m", type=int)
    d.set_defaults(func=cmd_el_diag)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StudyDegenerate as exc:
        print(f"study degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE

"""Command line interface.

    brwpass <analyze|dp|simulate|survival|verify> --config PATH [--seed S] [--out DIR] [--workers W]

Exit status: 0 when every invoked check passes, 1 when a check fails, 2 on
a malformed config or a violated precondition.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from pathlib import Path

from . import spectral
from .brw_dp import default_horizon, passage_laws, survival_curve
from .errors import BrwError
from .mc_engine import floor_bias_bound, replicate
from .verify import ExperimentConfig, run_checks

log = logging.getLogger("brwpass")

FLOOR_BIAS_TARGET = 1e-9


def _emit(out: Path | None, name: str, text: str):
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def _summary(cfg: ExperimentConfig, seed: int, command: str, body: dict) -> str:
    return json.dumps({"command": command, "config_sha256": cfg.sha256(), "seed": seed,
                       "config": cfg.to_json(), **body}, indent=2, default=str) + "\n"


def _u_tag(u: float) -> str:
    return f"{u:g}"


def _file_tag(label: str) -> str:
    return re.sub(r"[^\w.]+", "_", label).strip("_")


def cmd_analyze(cfg, args, out):
    prof = spectral.solve_alpha0(cfg.model)
    body = {"profile": prof.to_json(),
            "ld": [spectral.ld_prediction(cfg.model, u, rho).__dict__
                   for rho in cfg.rho_list for u in cfg.u_list]}
    if out is None:
        print(json.dumps(prof.to_json(), indent=2))
    else:
        _emit(out, "summary.json", _summary(cfg, args.seed, "analyze", body))
    return 0


def cmd_dp(cfg, args, out):
    laws = passage_laws(cfg.model, cfg.u_list, cfg.h, n_max=cfg.n_max, b=cfg.b)
    for u, law in laws.items():
        _emit(out, f"passage_u{_u_tag(u)}.csv", law.to_csv())
    if out is not None:
        body = {"laws": [law.header() | {"iterations": law.iterations} for law in laws.values()]}
        _emit(out, "summary.json", _summary(cfg, args.seed, "dp", body))
    return 0


def _auto_floor(model, u):
    if math.isfinite(model.law.support_min):
        return None
    for depth in range(1, 2000):
        if floor_bias_bound(model, u, -float(depth)) <= FLOOR_BIAS_TARGET:
            return -float(depth)
    raise BrwError("no position floor reaches the bias target")


def cmd_simulate(cfg, args, out):
    if cfg.M < 1:
        raise ValueError("simulate needs M >= 1")
    prof = spectral.solve_alpha0(cfg.model)
    runs = []
    for u in cfg.u_list:
        horizon = cfg.n_max or default_horizon(prof, u, cfg.b)
        floor = cfg.floor if cfg.floor is not None else _auto_floor(cfg.model, u)
        stats = replicate(cfg.model, u, horizon, cfg.M, args.seed, workers=args.workers,
                          floor=floor)
        bias = None if floor is None else floor_bias_bound(cfg.model, u, floor)
        runs.append({"u": u, "horizon": horizon, "floor": floor, "floor_bias_bound": bias,
                     **stats.to_json()})
        _emit(out, f"histogram_u{_u_tag(u)}.csv", stats.histogram_csv())
    text = _summary(cfg, args.seed, "simulate", {"runs": runs})
    _emit(out, "summary.json", text)
    return 0


def cmd_survival(cfg, args, out):
    curve = survival_curve(cfg.model, cfg.u_list, cfg.h)
    lines = ["u,survival,iterations"] + [f"{u!r},{s!r},{it}" for u, (s, it) in curve.items()]
    _emit(out, "survival.csv", "\n".join(lines) + "\n")
    if out is not None:
        _emit(out, "summary.json", _summary(cfg, args.seed, "survival", {}))
    return 0


def cmd_verify(cfg, args, out):
    reports = run_checks(cfg, workers=args.workers)
    for rep in reports:
        print(f"{'PASS' if rep.passed else 'FAIL'} {rep.check}")
        if out is not None and rep.rows:
            _emit(out, f"report_{_file_tag(rep.check)}.csv", rep.to_csv())
    body = {"reports": [r.to_json() for r in reports],
            "passed": all(r.passed for r in reports)}
    if out is not None:
        _emit(out, "summary.json", _summary(cfg, args.seed, "verify", body))
    return 0 if body["passed"] else 1


COMMANDS = {"analyze": cmd_analyze, "dp": cmd_dp, "simulate": cmd_simulate,
            "survival": cmd_survival, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brwpass",
                                description="First-passage times of branching random walks.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    p.add_argument("--out", default=None, help="output directory (default: stdout)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"brwpass: bad config {args.config}: {exc}", file=sys.stderr)
        return 2
    if args.seed is None:
        args.seed = cfg.base_seed
    out = Path(args.out or cfg.out) if (args.out or cfg.out) else None
    try:
        return COMMANDS[args.command](cfg, args, out)
    except (BrwError, ValueError, ZeroDivisionError) as exc:
        print(f"brwpass {args.command}: precondition failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

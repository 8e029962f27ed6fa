"""Command-line entry point: ``krrsphere <subcommand> ...``.

Exit codes: 0 success, 1 validation error (bad flags, bad config, bad
input), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import harness as hn
from . import rate_theory as rt
from .kernel_spec import parse_profile
from .quantities import KeyQuantities, build_target, check_approximation_conditions, key_quantities
from .spectrum import TruncationPolicy, build_spectrum

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _policy(args) -> TruncationPolicy:
    if getattr(args, "K", None) is not None:
        return TruncationPolicy(K=args.K)
    return TruncationPolicy(eps_tail=args.eps_tail)


def _cmd_spectrum(args) -> int:
    sp = build_spectrum(parse_profile(args.profile), args.d, _policy(args))
    text = sp.to_json(indent=2 if args.pretty else None)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _cmd_quantities(args) -> int:
    sp = build_spectrum(parse_profile(args.profile), args.d, _policy(args))
    tg = build_target(sp, args.s, args.gamma, args.c0, args.r_cap)
    if args.lambdas:
        lams = args.lambdas
    else:
        lams = [float(args.d) ** (-l) for l in args.l_grid]
    print(",".join(KeyQuantities.CSV_FIELDS))
    for lam in lams:
        row = key_quantities(sp, tg, lam).csv_row()
        print(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                       for k in KeyQuantities.CSV_FIELDS))
    return EXIT_OK


def _print_answer(label: str, ans: rt.RateAnswer) -> None:
    print(f"[{label}]")
    print(f"d_exponent: {ans.d_exponent:.12g}")
    print(f"n_exponent: {ans.n_exponent:.12g}")
    if ans.lambda_exponent is not None:
        print(f"lambda_exponent: {ans.lambda_exponent:.12g}")
    print(f"period: p={ans.p} case={ans.case} kind={ans.period_kind}")
    print(f"log_factor: {ans.log_factor}  lambda_ln_d: {ans.lambda_ln_d}  epsilon_slack: {ans.epsilon_slack}")


def _cmd_rates(args) -> int:
    if args.figure_data:
        s_list = args.s_list or list(hn.FIGURE2_S)
        out = hn.emit_figure_data(s_list, (args.gamma_min, args.gamma_max), args.family,
                                  args.figure_data, args.step)
        print(f"wrote {out}")
        return EXIT_OK
    if args.s is None:
        raise UsageError("rates: --s is required unless --figure-data is given")
    family = args.family[0]
    if args.curve:
        rows = []
        methods = [rt.KRR, rt.MINIMAX] if args.method == "both" else [args.method]
        for m in methods:
            curve = rt.sample_rate_curve(args.s, (args.gamma_min, args.gamma_max), args.step, family, m)
            rows.extend(rt.curve_rows(args.s, curve, m, family))
        sys.stdout.write(rt.curve_to_csv(rows))
        return EXIT_OK
    if args.gamma is None:
        raise UsageError("rates: --gamma is required for a point query")
    if args.method in (rt.KRR, "both"):
        _print_answer("krr", rt.rate(args.s, args.gamma, family, rt.KRR))
    if args.method in (rt.MINIMAX, "both"):
        _print_answer("minimax", rt.rate(args.s, args.gamma, family, rt.MINIMAX))
    if args.method == "both":
        print(f"saturation_gap: {rt.saturation_gap(args.s, args.gamma, family).gap:.12g}")
    return EXIT_OK


def _cmd_conditions(args) -> int:
    sp = build_spectrum(parse_profile(args.profile), args.d, _policy(args))
    tg = build_target(sp, args.s, args.gamma, args.c0, args.r_cap)
    if (args.lam is None) == (args.l is None):
        raise UsageError("conditions: give exactly one of --lambda or --l")
    lam = args.lam if args.lam is not None else float(args.d) ** (-args.l)
    rep = check_approximation_conditions(sp, tg, lam, args.n, args.regime, args.threshold, args.eps)
    print(json.dumps({"lambda": lam, "regime": rep.regime, "threshold": rep.threshold,
                      "ratios": rep.ratios, "passes": rep.passes, "all_pass": rep.all_pass},
                     indent=2))
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = hn.ExperimentConfig.from_toml(args.config)
    out = args.out or cfg.output
    if not out:
        raise hn.ConfigError("no output path: set 'output' in the config or pass --out")
    records = hn.run_sweep(cfg, args.workers)
    hn.write_records(records, out)
    failed = sum(1 for r in records if not math.isfinite(r.excess_risk))
    print(f"wrote {len(records)} records to {out} ({failed} failed cells)")
    return EXIT_RUNTIME if failed == len(records) else EXIT_OK


def _cmd_fit(args) -> int:
    if not Path(args.csv).is_file():
        raise hn.ConfigError(f"CSV not found: {args.csv}")
    records = hn.read_records(args.csv)
    fit = hn.fit_rate(records, args.axis, args.metric, args.include_unverified, args.expected,
                      args.lambda_exponent)
    out = {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared,
           "n_points": fit.n_points, "axis": fit.axis}
    if fit.expected is not None:
        out.update(expected=fit.expected, deviation=fit.deviation)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_checks

    ok = True
    for res in run_checks():
        ok &= res.ok
        print(f"{'PASS' if res.ok else 'FAIL'}  {res.name}: {res.detail}")
    if args.pytest:
        tests = Path(args.tests_dir) if args.tests_dir else Path(__file__).resolve().parents[2] / "tests"
        if not tests.is_dir():
            raise hn.ConfigError(f"test directory not found: {tests}")
        ok &= subprocess.call([sys.executable, "-m", "pytest", "-q", str(tests)]) == 0
    return EXIT_OK if ok else EXIT_RUNTIME


def _add_truncation(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--K", type=int, default=None, help="fixed truncation degree")
    g.add_argument("--eps-tail", type=float, default=1e-10, help="relative tail tolerance")


def _add_target(p):
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--c0", type=float, default=1.0)
    p.add_argument("--r-cap", type=float, default=10.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="krrsphere", description="KRR rates on the sphere in large dimensions")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spectrum", help="build and export a kernel spectrum as JSON")
    p.add_argument("--profile", default="exp")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--pretty", action="store_true")
    _add_truncation(p)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("quantities", help="table of N1, N2, M2, Q1, Q2, M1 over lambda")
    p.add_argument("--profile", default="exp")
    p.add_argument("--d", type=int, required=True)
    _add_target(p)
    p.add_argument("--l-grid", type=_float_list, default=[0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
                   help="lambda = d^-l for each l (comma-separated)")
    p.add_argument("--lambdas", type=_float_list, default=None, help="explicit lambda values")
    _add_truncation(p)
    p.set_defaults(func=_cmd_quantities)

    p = sub.add_parser("rates", help="rate exponents, curves and figure data")
    p.add_argument("--s", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--method", choices=[rt.KRR, rt.MINIMAX, "both"], default=rt.KRR)
    p.add_argument("--family", choices=[rt.GENERIC, rt.NTK], action="append", default=None)
    p.add_argument("--curve", action="store_true", help="emit a sampled curve as CSV")
    p.add_argument("--gamma-min", type=float, default=0.0)
    p.add_argument("--gamma-max", type=float, default=6.0)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--figure-data", metavar="PATH", help="write both curves for a list of s")
    p.add_argument("--s-list", type=_float_list, default=None)
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("conditions", help="approximation-condition ratios")
    p.add_argument("--profile", default="exp")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    _add_target(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--l", type=float, help="lambda = d^-l")
    p.add_argument("--regime", choices=["general", "sub_one"], default=None)
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--eps", type=float, default=0.05)
    _add_truncation(p)
    p.set_defaults(func=_cmd_conditions)

    p = sub.add_parser("simulate", help="run a sweep from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit a log-log rate to a results CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--axis", choices=["log_d", "log_n"], default="log_d")
    p.add_argument("--metric", choices=["expected", "excess_risk", "bias2", "variance"],
                   default="expected")
    p.add_argument("--include-unverified", action="store_true")
    p.add_argument("--expected", type=float, default=None, help="theoretical exponent to compare")
    p.add_argument("--lambda-exponent", type=float, default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("verify", help="run built-in checks (and optionally pytest)")
    p.add_argument("--pytest", action="store_true")
    p.add_argument("--tests-dir")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "family", "unset") is None:
            args.family = [rt.GENERIC]
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, hn.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

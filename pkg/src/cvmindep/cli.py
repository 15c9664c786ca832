"""Command-line driver: test | tables | power | are | sample.

Exit codes: 0 success, 1 error, 2 rejection at level alpha when
--fail-on-reject is given.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys

EXIT_OK, EXIT_ERROR, EXIT_REJECT = 0, 1, 2


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.05, help="test level (default 0.05)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--output", "-o", help="output file (default: stdout)")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads for internal numerics")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvmindep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test a dataset for independence")
    p.add_argument("--input", "-i", required=True, help="delimited text file, one row per case")
    p.add_argument("--stats", type=_csv_list, default=["B", "L", "W", "M", "T"],
                   help="comma list from B,L,W,M,T,L2,M2,T2")
    p.add_argument("--method", choices=["asymptotic", "finite-sample-mc"], default="asymptotic")
    p.add_argument("--reps", type=int, default=2000, help="replications for finite-sample-mc")
    p.add_argument("--critical-source", choices=["auto", "published", "computed"], default="auto")
    p.add_argument("--delimiter", default="auto", help="auto, ',', ';', 'tab' or 'space'")
    p.add_argument("--no-header", action="store_true", help="first line is data")
    p.add_argument("--fail-on-reject", action="store_true", help="exit with status 2 when any test rejects")
    _add_common(p)

    p = sub.add_parser("tables", help="critical-value tables")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--stats", type=_csv_list, default=None,
                   help="comma list (default: B,L,W,q2..qd,T,L2,M2,T2)")
    p.add_argument("--reps", type=int, default=100_000, help="Monte Carlo replications (B, L, L2, T, T2)")
    p.add_argument("--w-reps", type=int, default=1_000_000, help="Monte Carlo replications for W")
    p.add_argument("--m", type=int, default=128, help="grid size of the Deheuvels-Martynov sampler")
    p.add_argument("--max-reps", type=int, default=5_000_000, help="budget guard on any replication count")
    p.add_argument("--cache", help="critical-value cache file")
    _add_common(p)

    p = sub.add_parser("power", help="local power curves")
    p.add_argument("--family", required=True)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--stats", type=_csv_list, default=["L", "M", "W"], help="comma list from L,W,M,L2,M2,B,T,T2")
    p.add_argument("--delta-max", type=float, default=3.0)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--reps", type=int, default=10_000, help="replications per point for B and T")
    p.add_argument("--m", type=int, default=128)
    _add_common(p)

    p = sub.add_parser("are", help="local asymptotic relative efficiency table")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--families", type=_csv_list, default=["gaussian", "fgm", "frank", "clayton"])
    p.add_argument("--stats", type=_csv_list, default=["L", "L2", "M", "M2", "W"])
    _add_common(p)

    p = sub.add_parser("sample", help="draw a dataset from a copula family")
    p.add_argument("--family", required=True)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--rho", type=float, default=None, help="alias of --theta for the Gaussian family")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    _add_common(p)
    return parser


def _header(config: dict) -> str:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    from . import __version__

    return (f"# cvmindep {__version__} generated {stamp}\n"
            f"# config: {json.dumps(config, sort_keys=True)}\n")


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _effective(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("output", "threads")}
    return cfg


def cmd_test(args) -> int:
    from .ranks import load_dataset
    from .statistics import TestConfig, run_test

    delim = {"tab": "\t", "space": None}.get(args.delimiter, args.delimiter)
    data = load_dataset(args.input, delimiter=delim, header=False if args.no_header else None)
    cfg = TestConfig(statistics=tuple(args.stats), alpha=args.alpha, method=args.method, seed=args.seed,
                     reps=args.reps, critical_source=args.critical_source)
    report = run_test(data, cfg)
    out = report.to_dict()
    out["config"]["input"] = args.input
    out["config"]["columns"] = list(data.names)
    _emit(json.dumps(out, indent=2) + "\n", args.output)
    if args.fail_on_reject and report.rejected:
        return EXIT_REJECT
    return EXIT_OK


def cmd_tables(args) -> int:
    from .spectral import GLOBAL_TRUNCATION, PUBLISHED_CRITICAL_VALUES, critical_value, set_cache

    d = args.d
    if not 2 <= d <= 5:
        raise ValueError("tables cover 2 <= d <= 5")
    for name in ("reps", "w_reps"):
        if getattr(args, name) > args.max_reps:
            raise ValueError(f"--{name.replace('_', '-')} exceeds the budget --max-reps {args.max_reps}")
    if args.cache:
        set_cache(args.cache)
    stats = args.stats or (["B", "L", "W"] + [f"q{k}" for k in range(2, d + 1)] + ["T", "L2", "M2", "T2"])
    pub = PUBLISHED_CRITICAL_VALUES.get(d, {}) if args.alpha == 0.05 else {}
    lines = ["statistic\tmethod\tvalue\tstderr\treps\tpublished"]
    for st in stats:
        if st in ("B", "L", "W", "L2"):
            jobs = [("spectral-mc", args.w_reps if st == "W" else args.reps)]
            if st != "B" or d in GLOBAL_TRUNCATION:
                jobs.append(("inversion", None))
        elif st in ("T", "T2"):
            jobs = [("chi2", None), ("spectral-mc", args.reps)]
        elif st == "M2" or st.startswith("q"):
            jobs = [("inversion", None)]
        else:
            raise ValueError(f"unknown statistic {st!r}")
        for method, reps in jobs:
            cv = critical_value(st, d, args.alpha, method, reps=reps, seed=args.seed, m=args.m)
            value = cv.value[2] if isinstance(cv.value, dict) else cv.value
            lines.append("\t".join([st, method, f"{value:.6g}", _fmt(None if cv.stderr is None else float(f"{cv.stderr:.3g}")),
                                    _fmt(cv.reps), _fmt(pub.get(st))]))
    _emit(_header(_effective(args)) + "\n".join(lines) + "\n", args.output)
    return EXIT_OK


def cmd_power(args) -> int:
    from .power import power_curve

    blocks = []
    for st in args.stats:
        curve = power_curve(st, args.family, args.d, args.alpha, args.delta_max, args.points, args.reps,
                            args.seed, args.m)
        rows = [f"{st}\t{dl:.6g}\t{b:.6f}\t{'' if s is None else f'{s:.6f}'}" for dl, b, s in curve.rows()]
        blocks.append(f"# curve: {json.dumps(curve.header(), sort_keys=True, default=str)}\n" + "\n".join(rows))
    text = _header(_effective(args)) + "statistic\tdelta\tbeta\tstderr\n" + "\n".join(blocks) + "\n"
    _emit(text, args.output)
    return EXIT_OK


def cmd_are(args) -> int:
    from .efficiency import are_table

    rows = are_table(args.families, args.stats, args.d, args.alpha)
    lines = ["family\tbest\t" + "\t".join(args.stats)]
    for r in rows:
        lines.append(f"{r.family}\t{r.best}\t" + "\t".join(f"{r.percent[s]:.2f}" for s in args.stats))
    _emit(_header(_effective(args)) + "\n".join(lines) + "\n", args.output)
    return EXIT_OK


def cmd_sample(args) -> int:
    from .copulas import sample

    theta = args.theta if args.theta is not None else args.rho
    if theta is None:
        raise ValueError("give the dependence parameter with --theta (or --rho)")
    data = sample(args.family, theta, args.n, args.d, args.seed)
    lines = [",".join(data.names)] + [",".join(repr(float(v)) for v in row) for row in data.values]
    _emit(_header(_effective(args)) + "\n".join(lines) + "\n", args.output)
    return EXIT_OK


COMMANDS = {"test": cmd_test, "tables": cmd_tables, "power": cmd_power, "are": cmd_are, "sample": cmd_sample}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"cvmindep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

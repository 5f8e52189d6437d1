"""Command-line runner: ``mechlab run|phi|gap|bound|lowerbound|reproduce``.

Outputs are deterministic for a fixed seed and worker count; the seed is
echoed in every output header.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import acceptance, experiment
from .bounds import solve_cp, upper_bound_check
from .corrgap import WeightedRank, closed_form_gap, correlation_gap, miniset_gap_profile, phi
from .errors import MechlabError
from .experiment import ConfigError, fmt_value, parse_config, parse_instance, rows_to_csv
from .setsys import UniformMatroid, system_from_config

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load_json(text: str, what: str) -> Any:
    """Parse ``text`` as JSON, or read it from a file when it names one."""
    path = Path(text)
    try:
        if not text.lstrip().startswith(("{", "[")) and path.exists():
            text = path.read_text()
        return json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(what, f"cannot read JSON ({exc})") from None


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _table_csv(header: dict, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt_value(x) if not isinstance(x, str) else x for x in r])
    return buf.getvalue()


# -- subcommands -------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _load_json(args.config, "config")
    config = parse_config(cfg, samples=args.samples, seed=args.seed, out=args.out, fmt=args.format)
    report = experiment.run(config)
    if config.fmt == "json":
        text = experiment.dumps_json(report.to_json())
    else:
        header = {"seed": report.seed, "samples": report.samples, "beta": fmt_value(report.beta)}
        if report.infinite_stderr:
            header["stderr"] = "inf"
        text = rows_to_csv(report.rows(), header)
    _emit(text, config.out)
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_phi(args) -> int:
    print(fmt_value(phi(args.n, args.k)))
    return EXIT_OK


def cmd_gap(args) -> int:
    sys_cfg = _load_json(args.system, "system")
    try:
        system = system_from_config(sys_cfg)
    except MechlabError as exc:
        raise ConfigError("system", str(exc)) from None
    w = _load_json(args.weights, "weights") if args.weights else [1.0] * system.n
    if len(w) != system.n:
        raise ConfigError("weights", f"expected {system.n} weights")
    if args.method == "closed_form":
        if not isinstance(system, UniformMatroid) or len(set(w)) > 1:
            raise ConfigError("method", "closed form is only available for unit-weight uniform systems")
        rep = closed_form_gap(system.n, system.k)
    else:
        rep = correlation_gap(WeightedRank(system, tuple(float(x) for x in w)), system.n,
                              search=args.search, budget=args.budget, seed=args.seed)
    data = {"gap": rep.gap, "numerator": rep.numerator, "denominator": rep.denominator,
            "method": rep.method, "closed_form": rep.closed_form, "q": [float(x) for x in rep.q]}
    if args.format == "json":
        data["seed"] = args.seed
        if rep.witness is not None:
            data["witness"] = [{"set": sorted(S), "prob": p} for S, p in rep.witness.support]
        _emit(experiment.dumps_json(data), args.out)
    elif args.format == "csv":
        _emit(_table_csv({"seed": args.seed}, ("gap", "numerator", "denominator", "method", "closed_form"),
                         [(rep.gap, rep.numerator, rep.denominator, rep.method, rep.closed_form)]), args.out)
    else:
        print(fmt_value(rep.gap))
    return EXIT_OK


def cmd_bound(args) -> int:
    inst = parse_instance(_load_json(args.config, "config"))
    sol = solve_cp(inst)
    data: dict[str, Any] = {"seed": args.seed, "cp_value": sol.value, "q_star": [float(x) for x in sol.q_star]}
    ok = True
    if args.samples:
        chk = upper_bound_check(inst, args.samples, args.seed)
        data.update(myerson=chk.myerson.mean, myerson_stderr=chk.myerson.stderr,
                    ew_rank=chk.ew_rank.mean, ew_rank_stderr=chk.ew_rank.stderr, ok=chk.ok)
        ok = chk.ok
    if args.format == "json":
        _emit(experiment.dumps_json(data), args.out)
    else:
        cols = [k for k in data if k not in ("seed", "q_star")]
        text = _table_csv({"seed": args.seed, "q_star": " ".join(fmt_value(x) for x in sol.q_star)},
                          cols, [[data[c] for c in cols]])
        _emit(text, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_lowerbound(args) -> int:
    rows = miniset_gap_profile(args.n, samples=args.samples or 0, seed=args.seed)
    if args.format == "json":
        _emit(experiment.dumps_json({"seed": args.seed, "rows": [r.__dict__ for r in rows]}), args.out)
    else:
        cols = ("n", "dependent", "independent", "ratio", "mc_mean", "mc_stderr")
        _emit(_table_csv({"seed": args.seed}, cols, [[getattr(r, c) for c in cols] for r in rows]), args.out)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    ids = None
    if args.only:
        ids = [int(x) for x in args.only.split(",") if x.strip()]
    rows = acceptance.run_criteria(ids, seed=args.seed,
                                   log=lambda line: print(line, file=sys.stderr))
    if args.format == "json":
        text = experiment.dumps_json({"seed": args.seed, "criteria": [
            {**r.as_dict(), "detail": r.detail.split("; runtime")[0]} for r in rows]})
    else:
        text = rows_to_csv([r.as_dict() for r in rows], {"seed": args.seed})
    _emit(text, args.out)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mechlab", description="Posted-price mechanism experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, samples_default=None, fmt_default="csv", formats=("csv", "json")):
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--samples", type=int, default=samples_default)
        sp.add_argument("--out", default=None, help="write output here instead of stdout")
        sp.add_argument("--format", choices=formats, default=fmt_default)

    r = sub.add_parser("run", help="simulate mechanisms on an instance and check ratios")
    r.add_argument("--config", required=True, help="instance config (JSON file or inline JSON)")
    common(r, fmt_default=None)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("phi", help="print phi(n, k) = E[min(Binomial(n, k/n), k)]")
    f.add_argument("--n", type=int, required=True)
    f.add_argument("--k", type=int, required=True)
    f.set_defaults(func=cmd_phi)

    g = sub.add_parser("gap", help="correlation gap of a weighted rank function")
    g.add_argument("--system", required=True, help="set-system config (JSON file or inline JSON)")
    g.add_argument("--weights", default=None, help="JSON list of weights (default all ones)")
    g.add_argument("--method", choices=("lp", "closed_form"), default="lp")
    g.add_argument("--search", choices=("coordinate_ascent", "grid"), default="coordinate_ascent")
    g.add_argument("--budget", type=int, default=400)
    common(g, fmt_default="text", formats=("text", "csv", "json"))
    g.set_defaults(func=cmd_gap)

    b = sub.add_parser("bound", help="concave-program upper bound for an instance")
    b.add_argument("--config", required=True)
    common(b)
    b.set_defaults(func=cmd_bound)

    lb = sub.add_parser("lowerbound", help="miniset correlated versus independent values")
    lb.add_argument("--n", type=int, nargs="+", required=True)
    common(lb)
    lb.set_defaults(func=cmd_lowerbound)

    rp = sub.add_parser("reproduce", help="run the acceptance suite, one row per criterion")
    rp.add_argument("--only", default=None, help="comma-separated criterion ids")
    common(rp)
    rp.set_defaults(func=cmd_reproduce)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "samples", None) is not None and args.samples < 1:
        parser.error("--samples must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mechlab: config error at {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MechlabError as exc:
        print(f"mechlab: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

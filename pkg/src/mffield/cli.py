"""Command-line front end: ``mffield generate | bench | report``.

Exit codes: 0 success, 1 usage or input error, 2 some benchmark rows
failed, 3 every benchmark row failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__, bench, sim, surrogates
from .data import DatasetError, load_dataset, save_dataset
from .doe import nested_lhs

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_TOTAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("multipliers must be positive integers")
    return vals


def _names(text: str) -> list[str]:
    if text.strip() == "all":
        return list(surrogates.NAMES)
    names = [n.strip() for n in text.split(",") if n.strip()]
    unknown = [n for n in names if n not in surrogates.NAMES]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown surrogate {unknown[0]!r}; choose from {', '.join(surrogates.NAMES)} or 'all'"
        )
    return names


def _default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _manifest(command: str, config: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": config,
    }


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _add_sim_args(p):
    p.add_argument("--case", default="vff", choices=["vff"], help="simulated test case")
    p.add_argument("--variant", default="no_ground", choices=list(sim.VARIANTS))
    p.add_argument("--horizon", type=float, default=sim.DEFAULT_HORIZON,
                   help="simulated duration T in seconds (default %(default)s)")
    p.add_argument("--ode-tol", type=float, default=sim.DEFAULT_ODE_TOL,
                   help="relative tolerance of the HF integrator (default %(default)g)")
    p.add_argument("--n-nodes", type=int, default=sim.N_NODES)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mffield", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mffield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a nested two-fidelity dataset")
    _add_sim_args(g)
    g.add_argument("--n1", type=int, required=True, help="number of HF samples")
    g.add_argument("--n2", type=int, required=True, help="number of LF samples (>= n1)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True, help="dataset directory to write")

    b = sub.add_parser("bench", help="run the benchmark protocol")
    _add_sim_args(b)
    b.add_argument("--dataset", type=Path, help="benchmark an ingested dataset pool instead of a simulated case")
    b.add_argument("--surrogates", type=_names, default=list(surrogates.NAMES),
                   help="comma-separated names or 'all' (default all)")
    b.add_argument("--n1-mult", type=_int_list, default=(2, 5, 10), help="n1 = m * d_u (default 2,5,10)")
    b.add_argument("--n2-mult", type=_int_list, default=(1, 5, 10), help="n2 = m * n1 (default 1,5,10)")
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--n-v", type=int, default=1000, help="validation set size")
    b.add_argument("--ric", type=float, default=0.999)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--restarts", type=int, default=20, help="optimizer restarts per GP")
    b.add_argument("--jobs", type=int, default=_default_jobs(), help="worker processes")
    b.add_argument("--out", type=Path, required=True, help="output directory")
    b.add_argument("--quiet", action="store_true")

    r = sub.add_parser("report", help="rank and summarize stored results")
    r.add_argument("results", type=Path, help="results.csv or a directory containing it")
    r.add_argument("--format", choices=["text", "csv", "json"], default="text")
    r.add_argument("--out", type=Path, help="directory for summary files (default: next to results)")
    return parser


def cmd_generate(args) -> int:
    if args.n1 < 1 or args.n2 < args.n1:
        raise UsageError(f"need 1 <= n1 <= n2, got n1={args.n1}, n2={args.n2}")
    doe = nested_lhs(args.n1, args.n2, sim.DOMAIN, args.seed)
    ds = sim.generate_case(doe, args.variant, args.n_nodes, args.horizon, args.ode_tol)
    config = {"case": args.case, "variant": args.variant, "n1": args.n1, "n2": args.n2,
              "seed": args.seed, "horizon": args.horizon, "ode_tol": args.ode_tol,
              "n_nodes": args.n_nodes}
    ds = type(ds)(ds.hf, ds.lf, ds.common_index, {**ds.metadata, "run": _manifest("generate", config)})
    save_dataset(ds, args.out)
    print(f"wrote {args.out} (HF {ds.hf.n}x{ds.hf.d_y}, LF {ds.lf.n}x{ds.lf.d_y})")
    return EXIT_OK


def _write_summaries(results, out: Path):
    ranking = bench.rank(results)
    bench.write_rows(bench.summary_rows(results, ranking), out / "summary.csv")
    bench.write_rows(bench.size_rows(results), out / "summary_by_size.csv")
    return ranking


def cmd_bench(args) -> int:
    if args.reps < 1 or args.n_v < 1 or args.restarts < 1 or args.jobs < 1:
        raise UsageError("--reps, --n-v, --restarts and --jobs must be >= 1")
    if not 0.0 < args.ric <= 1.0:
        raise UsageError(f"--ric must lie in (0, 1], got {args.ric}")
    cfg = bench.BenchConfig(args.n1_mult, args.n2_mult, args.reps, args.n_v, args.ric,
                            args.seed, args.restarts)
    if args.dataset is not None:
        case = bench.PoolCase(load_dataset(args.dataset), args.dataset.name)
    else:
        case = bench.VffCase(args.variant, args.horizon, args.n_nodes, args.ode_tol)
    args.out.mkdir(parents=True, exist_ok=True)
    config = {
        **case.describe(),
        "dataset": None if args.dataset is None else str(args.dataset),
        "surrogates": args.surrogates,
        "n1_mult": list(cfg.n1_mult), "n2_mult": list(cfg.n2_mult),
        "grid": cfg.grid(case.d_u), "reps": cfg.reps, "n_v": cfg.n_v, "ric": cfg.ric,
        "seed": cfg.seed, "restarts": cfg.restarts, "jobs": args.jobs,
    }

    def progress(rows):
        if not args.quiet:
            r = rows[0]
            bad = sum(not x.ok for x in rows)
            print(f"n1={r.n1} n2={r.n2} rep={r.rep}: {len(rows) - bad}/{len(rows)} ok",
                  file=sys.stderr, flush=True)

    results = bench.run_protocol(cfg, args.surrogates, case, jobs=args.jobs, progress=progress)
    bench.write_results(results, args.out / "results.csv")
    failed = sum(not r.ok for r in results)
    if failed < len(results):
        _write_summaries(results, args.out)
    _write_json(args.out / "manifest.json",
                {**_manifest("bench", config), "rows": len(results), "failed_rows": failed})
    print(f"{len(results)} rows, {failed} failed; results in {args.out}")
    if failed == len(results):
        return EXIT_TOTAL
    return EXIT_PARTIAL if failed else EXIT_OK


def _format_table(rows, thresholds=bench.THRESHOLDS) -> str:
    head = ["#", "surrogate"] + [f"<={t:g}x" for t in thresholds] + ["median e_norm", "mean e_norm", "failed"]
    lines = [head]
    for r in rows:
        lines.append([str(r["order"]), r["surrogate"]]
                     + [str(r[f"within_{t:g}"]) for t in thresholds]
                     + [f"{r['median_e_norm']:.4g}", f"{r['mean_e_norm']:.4g}", str(r["failed"])])
    widths = [max(len(line[i]) for line in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in lines)


def cmd_report(args) -> int:
    path = args.results / "results.csv" if args.results.is_dir() else args.results
    try:
        results = bench.read_results(path)
    except bench.ResultsFileError as exc:
        raise UsageError(str(exc)) from None
    if not any(r.ok for r in results):
        raise UsageError(f"{path}: no successful rows to report")
    out = args.out or path.parent
    out.mkdir(parents=True, exist_ok=True)
    ranking = _write_summaries(results, out)
    rows = bench.summary_rows(results, ranking)
    if args.format == "json":
        print(json.dumps({"combinations": ranking.n_combinations, "summary": rows}, indent=2))
    elif args.format == "csv":
        print((out / "summary.csv").read_text(), end="")
    else:
        print(f"{ranking.n_combinations} complete combinations"
              + (f", {len(ranking.skipped)} skipped" if ranking.skipped else ""))
        print(_format_table(rows))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"generate": cmd_generate, "bench": cmd_bench, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except (UsageError, DatasetError, ValueError) as exc:
        print(f"mffield {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: simulate, verify, sweep and report."""

from __future__ import annotations

import argparse
import json
import re
import sys
from collections import Counter, defaultdict
from pathlib import Path

import numpy as np

from .config import expand_grid, load_config, load_grid
from .csvio import emit_csv, read_run, write_table
from .metrics import detect_collapse, median_collapse
from .runner import WORKERS_ENV, run_many
from .verify import DEFAULT_SEED, format_results, run_checks

RUN_FILE = re.compile(r"run_g(\d+)_s(\d+)\.csv$")


def _print_summary(records) -> None:
    groups = defaultdict(list)
    for r in records:
        c = r.config
        groups[(c.estimator.value, c.optimizer.value, c.group_size, c.iac_alpha,
                c.dlc_mu if c.dlc_enabled else 0.0, c.variant, c.lr)].append(r)
    print(f"{'estimator':<13}{'optimizer':<10}{'G':>3}{'alpha':>7}{'mu':>6}{'variant':>8}{'lr':>7}"
          f"{'runs':>6}{'collapsed':>10}{'median':>9}")
    for (est, opt, g, a, mu, var, lr), rs in groups.items():
        steps = [r.collapse_step for r in rs]
        n = sum(s is not None for s in steps)
        print(f"{est:<13}{opt:<10}{g:>3}{a:>7g}{mu:>6g}{var:>8}{lr:>7g}{len(rs):>6}{n:>10}"
              f"{median_collapse(steps):>9g}")


def cmd_simulate(args) -> int:
    config, _ = load_config(args.config)
    records = run_many([config])
    out = Path(args.out or f"runs/{config.experiment.value}")
    emit_csv(records, out)
    _print_summary(records)
    print(f"wrote {len(records)} run files and summary.csv to {out}")
    return 0


def cmd_sweep(args) -> int:
    config, inline = load_config(args.config)
    grid = load_grid(args.grid) if args.grid else inline
    configs = expand_grid(config, grid)
    records = run_many(configs)
    # run_many orders by config then seed
    grid_index = [i for i, c in enumerate(configs) for _ in c.seeds]
    out = Path(args.out or f"runs/{config.experiment.value}_sweep")
    emit_csv(records, out, grid_index)
    _print_summary(records)
    print(f"wrote {len(records)} run files ({len(configs)} grid points) and summary.csv to {out}")
    return 0


def cmd_verify(args) -> int:
    results = run_checks(args.module, args.trials, args.seed, args.report_dir)
    print(format_results(results))
    ok = all(r.passed for r in results)
    print("ALL CHECKS PASSED" if ok else "SOME CHECKS FAILED")
    return 0 if ok else 1


def cmd_report(args) -> int:
    src = Path(getattr(args, "in"))
    configs = json.loads((src / "configs.json").read_text(encoding="utf-8"))
    runs = defaultdict(list)
    for path in sorted(src.glob("run_g*_s*.csv")):
        m = RUN_FILE.search(path.name)
        if m:
            runs[int(m.group(1))].append((int(m.group(2)), path))
    if not runs:
        print(f"no run files in {src}", file=sys.stderr)
        return 1
    out = Path(args.out or src)
    out.mkdir(parents=True, exist_ok=True)

    summary_rows = []
    for g in sorted(runs):
        cfg = configs[str(g)]
        tables = [read_run(p) for _, p in sorted(runs[g])]
        prefix = cfg["train_query"] + "."
        train = [i for i, c in enumerate(tables[0].columns) if c.startswith(prefix)]
        steps, winners, entropies = [], Counter(), []
        for t in tables:
            series = t.probs[:, train].max(axis=1)
            steps.append(detect_collapse(series, cfg["collapse_threshold"], cfg["collapse_window"]))
            winners[t.columns[train[int(np.argmax(t.probs[-1, train]))]].partition(".")[2]] += 1
            entropies.append(t.entropy[-1])
        summary_rows.append([
            g, cfg["estimator"], cfg["optimizer"], cfg["group_size"], cfg["lr"], cfg["iac_alpha"],
            cfg["dlc_mu"] if cfg["dlc_enabled"] else 0.0, cfg["variant"], len(tables),
            sum(s is not None for s in steps), median_collapse(steps), float(np.median(entropies)),
            ";".join(f"{k}:{v}" for k, v in sorted(winners.items())),
        ])
        # plot-ready: per-step median and quartiles across seeds
        header = ["step"]
        cols = []
        for j, name in enumerate(tables[0].columns):
            stack = np.stack([t.probs[:, j] for t in tables])
            cols.append(stack)
            header += [f"{name}.median", f"{name}.q25", f"{name}.q75"]
        cols.append(np.stack([t.entropy for t in tables]))
        header += ["entropy.median", "entropy.q25", "entropy.q75"]
        qs = [np.quantile(c, [0.5, 0.25, 0.75], axis=0) for c in cols]
        rows = ([int(s)] + [float(q[k, s]) for q in qs for k in range(3)] for s in tables[0].steps)
        write_table(out / f"plot_g{g:03d}.csv", header, rows)

    header = ["grid", "estimator", "optimizer", "G", "lr", "alpha", "mu", "variant", "runs",
              "collapsed", "median_collapse_step", "median_final_entropy", "winners"]
    write_table(out / "report.csv", header, summary_rows)
    widths = [5, 13, 10, 4, 7, 6, 5, 8, 5, 10, 12, 10]
    print("".join(f"{h[:w]:>{w}} " for h, w in zip(header, widths)) + "winners")
    for row in summary_rows:
        print("".join(f"{(f'{x:g}' if isinstance(x, float) else str(x)):>{w}} " for x, w in zip(row, widths)) + row[-1])
    print(f"wrote report.csv and {len(summary_rows)} plot files to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oversharp",
        description="Toy over-sharpening simulations and oracle checks.",
        epilog=f"Worker processes for simulate/sweep come from ${WORKERS_ENV} (default 1).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one config over its seeds and write CSVs")
    p.add_argument("--config", required=True, help="JSON config file (flat keys; a 'grid' section is ignored)")
    p.add_argument("--out", help="output directory (default runs/<experiment>)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the randomized oracle checks; exit 0 iff all pass")
    p.add_argument("--module", choices=("theory", "coupling", "all"), default="all", help="check group (default all)")
    p.add_argument("--trials", type=int, help="instances per check (default: each check's own count)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"instance generator seed (default {DEFAULT_SEED})")
    p.add_argument("--report-dir", help="write the toy alignment report (alignment.csv) here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="run the cartesian grid over a base config")
    p.add_argument("--config", required=True, help="base JSON config")
    p.add_argument("--grid", help="JSON file mapping config keys to value lists (default: the config's 'grid' section)")
    p.add_argument("--out", help="output directory (default runs/<experiment>_sweep)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a run directory and write plot-ready CSVs")
    p.add_argument("--in", required=True, help="directory written by simulate or sweep")
    p.add_argument("--out", help="output directory (default: same as --in)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

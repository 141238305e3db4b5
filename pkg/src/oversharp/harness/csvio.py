"""CSV output for runs and experiment summaries, plus readers for round trips.

Floats are written with ``repr`` (shortest string that parses back to the
same double), files are UTF-8 with LF line endings, and an absent collapse
step is an empty cell.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .runner import RunRecord

SUMMARY_FIELDS = (
    "seed", "estimator", "optimizer", "G", "alpha", "mu", "variant",
    "collapse_step", "winner", "final_entropy",
)
SUMMARY_NAME = "summary.csv"
ARGMAX_SUFFIX = ".argmax"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _open_writer(path: Path):
    try:
        fh = path.open("w", encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return fh, csv.writer(fh, lineterminator="\n")


def run_filename(grid_index: int, seed: int) -> str:
    return f"run_g{grid_index:03d}_s{seed:05d}.csv"


def run_header(record: RunRecord) -> list[str]:
    hits = [f"{q}{ARGMAX_SUFFIX}" for q in record.argmax_hits]
    return ["step", *record.columns, *hits, "entropy", "z_prime", "collapse_flag"]


def write_run(record: RunRecord, path: str | Path) -> Path:
    """One row per step: tracked probabilities, argmax hits, entropy, Z', collapse flag."""
    path = Path(path)
    flags = record.collapse_flags
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(run_header(record))
        for t in range(record.steps):
            row = [str(t)]
            row += [_fmt(v) for v in record.probs[t]]
            row += [str(int(h[t])) for h in record.argmax_hits.values()]
            row += [_fmt(record.entropy[t]), _fmt(record.z_prime[t]), str(int(flags[t]))]
            writer.writerow(row)
    return path


def summary_row(record: RunRecord) -> list[str]:
    c = record.config
    return [
        str(record.seed),
        c.estimator.value,
        c.optimizer.value,
        str(c.group_size),
        _fmt(c.iac_alpha),
        _fmt(c.dlc_mu if c.dlc_enabled else 0.0),
        c.variant,
        "" if record.collapse_step is None else str(record.collapse_step),
        record.winner,
        _fmt(record.final_entropy),
    ]


def write_summary(records: Iterable[RunRecord], path: str | Path) -> Path:
    path = Path(path)
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(SUMMARY_FIELDS)
        for r in records:
            writer.writerow(summary_row(r))
    return path


def emit_csv(
    records: Sequence[RunRecord],
    out_dir: str | Path,
    grid_index: Sequence[int] | None = None,
) -> list[Path]:
    """Write one CSV per run plus ``summary.csv``; returns every path written.

    ``grid_index[i]`` names the grid position of ``records[i]`` (all zero for
    a single config). Records are written in the order given.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if grid_index is None:
        grid_index = [0] * len(records)
    if len(grid_index) != len(records):
        raise ValueError("grid_index must match records one to one")
    paths = [write_run(r, out / run_filename(g, r.seed)) for r, g in zip(records, grid_index)]
    configs = {}
    for r, g in zip(records, grid_index):
        configs.setdefault(g, r.config.to_dict())
    config_path = out / "configs.json"
    config_path.write_text(json.dumps({str(g): c for g, c in configs.items()}, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8", newline="\n")
    paths.append(config_path)
    paths.append(write_summary(records, out / SUMMARY_NAME))
    return paths


@dataclass(frozen=True)
class RunTable:
    """A per-run CSV read back into arrays."""

    columns: tuple[str, ...]  # tracked probability columns
    steps: np.ndarray
    probs: np.ndarray
    argmax_hits: dict[str, np.ndarray]
    entropy: np.ndarray
    z_prime: np.ndarray
    collapse_flag: np.ndarray


def read_run(path: str | Path) -> RunTable:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if header[0] != "step" or header[-3:] != ["entropy", "z_prime", "collapse_flag"]:
        raise ValueError(f"{path}: unexpected header {header}")
    middle = header[1:-3]
    hit_cols = [c for c in middle if c.endswith(ARGMAX_SUFFIX)]
    prob_cols = [c for c in middle if not c.endswith(ARGMAX_SUFFIX)]
    data = {name: [row[i] for row in body] for i, name in enumerate(header)}
    return RunTable(
        columns=tuple(prob_cols),
        steps=np.array(data["step"], dtype=int),
        probs=np.array([[float(x) for x in data[c]] for c in prob_cols]).T.reshape(len(body), len(prob_cols)),
        argmax_hits={c[: -len(ARGMAX_SUFFIX)]: np.array(data[c], dtype=int) for c in hit_cols},
        entropy=np.array(data["entropy"], dtype=float),
        z_prime=np.array(data["z_prime"], dtype=float),
        collapse_flag=np.array(data["collapse_flag"], dtype=int),
    )


def read_summary(path: str | Path) -> list[dict[str, object]]:
    """Summary rows with typed values; collapse_step is None when absent."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            out.append({
                "seed": int(row["seed"]),
                "estimator": row["estimator"],
                "optimizer": row["optimizer"],
                "G": int(row["G"]),
                "alpha": float(row["alpha"]),
                "mu": float(row["mu"]),
                "variant": row["variant"],
                "collapse_step": int(row["collapse_step"]) if row["collapse_step"] else None,
                "winner": row["winner"],
                "final_entropy": float(row["final_entropy"]),
            })
    return out


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """Generic writer used by reports; numbers go through the same formatting."""
    path = Path(path)
    fh, writer = _open_writer(path)
    with fh:
        writer.writerow(header)
        for row in rows:
            writer.writerow([x if isinstance(x, str) else ("" if x is None else _fmt(x)) for x in row])
    return path

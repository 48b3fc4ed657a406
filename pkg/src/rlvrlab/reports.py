"""Comparison tables, dynamics tables, and SVG plots.

Plots are rendered from the CSV files on disk, never from in-memory state,
so ``report`` can regenerate them without recomputation. SVG output is made
byte-deterministic by pinning matplotlib's hash salt and stripping the
creation date.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "rlvrlab"

COMPARISON_CSV_SCHEMA = "rlvrlab-comparison-csv-v1"
DYNAMICS_CSV_SCHEMA = "rlvrlab-dynamics-csv-v1"

PLOT_FILES = ("pass_at_k.svg", "entropy.svg", "correct_ratio.svg",
              "fully_solved_ratio.svg")
_DYNAMIC_METRICS = ("entropy", "correct_ratio", "fully_solved_ratio")


class ReportError(Exception):
    """Missing or malformed report inputs."""


def write_comparison_csv(path: Path, rows: list[tuple[str, int, float]]) -> None:
    buf = io.StringIO()
    buf.write(f"# schema={COMPARISON_CSV_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["algorithm", "k", "exact_pass_at_k"])
    for algorithm, k, value in rows:
        writer.writerow([algorithm, k, repr(float(value))])
    Path(path).write_text(buf.getvalue())


def write_dynamics_csv(
    path: Path, rows: list[tuple[str, int, float, float, float]]
) -> None:
    buf = io.StringIO()
    buf.write(f"# schema={DYNAMICS_CSV_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["algorithm", "step", "entropy", "correct_ratio", "fully_solved_ratio"]
    )
    for algorithm, step, entropy, correct, solved in rows:
        writer.writerow(
            [algorithm, step, repr(float(entropy)), repr(float(correct)),
             repr(float(solved))]
        )
    Path(path).write_text(buf.getvalue())


def _read_csv(path: Path, schema: str) -> list[dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing report input {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(f"# schema={schema}"):
        raise ReportError(f"{path} does not carry schema {schema}")
    reader = csv.DictReader(lines[1:])
    return list(reader)


def read_comparison_csv(path: Path) -> list[tuple[str, int, float]]:
    rows = _read_csv(path, COMPARISON_CSV_SCHEMA)
    return [(r["algorithm"], int(r["k"]), float(r["exact_pass_at_k"])) for r in rows]


def read_dynamics_csv(path: Path) -> list[tuple[str, int, float, float, float]]:
    rows = _read_csv(path, DYNAMICS_CSV_SCHEMA)
    return [
        (
            r["algorithm"],
            int(r["step"]),
            float(r["entropy"]),
            float(r["correct_ratio"]),
            float(r["fully_solved_ratio"]),
        )
        for r in rows
    ]


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_pass_curves(
    comparison_path: Path, out_path: Path, k_filter: tuple[int, ...] | None = None
) -> None:
    """Exact Pass@k vs k (log2 axis), one curve per algorithm."""
    rows = read_comparison_csv(comparison_path)
    by_alg: dict[str, list[tuple[int, float]]] = {}
    for algorithm, k, value in rows:
        if k_filter is not None and k not in k_filter:
            continue
        by_alg.setdefault(algorithm, []).append((k, value))
    if not by_alg:
        raise ReportError("no pass@k rows to plot (check --k-list)")
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for algorithm, points in by_alg.items():
        points.sort()
        ax.plot(
            [k for k, _ in points],
            [v for _, v in points],
            marker="o",
            markersize=3,
            label=algorithm,
        )
    ax.set_xscale("log", base=2)
    ax.set_xlabel("k")
    ax.set_ylabel("exact Pass@k")
    ax.set_ylim(0.0, 1.02)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, out_path)


def plot_dynamics(dynamics_path: Path, metric: str, out_path: Path) -> None:
    """One training-dynamics metric vs step, one curve per algorithm."""
    if metric not in _DYNAMIC_METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    rows = read_dynamics_csv(dynamics_path)
    column = {"entropy": 2, "correct_ratio": 3, "fully_solved_ratio": 4}[metric]
    by_alg: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        by_alg.setdefault(row[0], []).append((row[1], row[column]))
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for algorithm, points in by_alg.items():
        points.sort()
        ax.plot([s for s, _ in points], [v for _, v in points], label=algorithm)
    ax.set_xlabel("step")
    ax.set_ylabel(metric.replace("_", " "))
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, out_path)


def generate_plots(out_dir: Path, k_filter: tuple[int, ...] | None = None) -> None:
    """(Re)render the four standard SVGs from the CSVs in ``out_dir``."""
    out_dir = Path(out_dir)
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    plot_pass_curves(out_dir / "comparison.csv", plots / "pass_at_k.svg", k_filter)
    for metric in _DYNAMIC_METRICS:
        plot_dynamics(out_dir / "dynamics.csv", metric, plots / f"{metric}.svg")

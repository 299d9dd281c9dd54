"""Trajectory figures from the engine's exported history table.

Reads the ``history.csv`` that ``opshap search`` / ``export-history`` write
(columns: epoch, player, edge, op, alpha, phi) and draws one curve per
operation per edge.  Epochs before the first contribution estimate (the
warm-up phase, where the phi column is empty) are not plotted.
"""

from __future__ import annotations

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REQUIRED_COLUMNS = {"epoch", "player", "edge", "op", "alpha", "phi"}


class HistoryFormatError(ValueError):
    pass


def load_history(path: str | Path):
    """Returns (per-edge series, first epoch with an estimate).

    Series layout: edge -> op name -> list of (epoch, alpha).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise HistoryFormatError("history file is empty")
        missing = REQUIRED_COLUMNS - set(reader.fieldnames)
        if missing:
            raise HistoryFormatError(
                f"history file lacks required columns: {sorted(missing)}"
            )
        series: dict[int, dict[str, list[tuple[int, float]]]] = defaultdict(
            lambda: defaultdict(list)
        )
        first_estimate: int | None = None
        rows = 0
        for row in reader:
            rows += 1
            epoch = int(row["epoch"])
            edge = int(row["edge"])
            series[edge][row["op"]].append((epoch, float(row["alpha"])))
            if row["phi"] != "" and (first_estimate is None or epoch < first_estimate):
                first_estimate = epoch
        if rows == 0:
            raise HistoryFormatError("history file has no data rows")
    return series, (first_estimate if first_estimate is not None else 0)


def plot_history(
    history_path: str | Path,
    out_dir: str | Path,
    edges: list[int] | None = None,
) -> dict[int, str]:
    """Write one trajectory figure per edge; returns each edge's top op at the
    final epoch (the curve that ends on top)."""
    series, start_epoch = load_history(history_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wanted = sorted(series) if edges is None else edges
    top_ops: dict[int, str] = {}
    for edge in wanted:
        if edge not in series:
            raise HistoryFormatError(f"edge {edge} not present in history")
        fig, ax = plt.subplots(figsize=(6, 4))
        final: list[tuple[float, str]] = []
        for op, points in series[edge].items():
            points = [(e, a) for e, a in sorted(points) if e >= start_epoch]
            xs = [e for e, _ in points]
            ys = [a for _, a in points]
            ax.plot(xs, ys, label=op, linewidth=1.6)
            final.append((ys[-1], op))
        top_ops[edge] = max(final)[1]
        ax.set_xlabel("epoch")
        ax.set_ylabel("architecture parameter")
        ax.set_title(f"edge {edge}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / f"edge{edge}_trajectory.png", dpi=120)
        plt.close(fig)
    return top_ops


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="toysupernet.plots",
        description="draw per-edge architecture-parameter trajectories",
    )
    parser.add_argument("history", help="history.csv exported by the engine")
    parser.add_argument("--out", default="figures", help="output directory")
    parser.add_argument("--edges", help="comma-separated edge indices (default all)")
    args = parser.parse_args(argv)
    edges = None
    if args.edges:
        edges = [int(t) for t in args.edges.split(",")]
    try:
        top_ops = plot_history(args.history, args.out, edges)
    except (HistoryFormatError, OSError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    for edge in sorted(top_ops):
        print(f"edge {edge}: top curve {top_ops[edge]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

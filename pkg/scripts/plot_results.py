#!/usr/bin/env python3
"""Plot reconstruction-error curves from `gridtopo experiment` results CSVs.

Each input file contributes one errorbar curve: mean total edge errors vs
sample count, with the population standard deviation as the error bar (both
read from the summary rows the experiment command appends).

Requires matplotlib (`pip install gridtopo[plot]`).

Example:
    python3 scripts/plot_results.py dc.csv lc.csv --out errors.png --log-x
"""
import argparse
import csv
import sys
from pathlib import Path


def read_summary(path: Path) -> tuple[str, list[int], list[float], list[float]]:
    """(label, sample counts, total_mean, total_std) from one results CSV."""
    means: dict[int, float] = {}
    stds: dict[int, float] = {}
    label = path.stem
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["trial"] == "mean":
                means[int(row["n"])] = float(row["total"])
                label = f"{row['grid']} {row['model']} {row['algo']}"
            elif row["trial"] == "std":
                stds[int(row["n"])] = float(row["total"])
    if not means:
        raise SystemExit(f"{path}: no summary rows found (not an experiment results CSV?)")
    counts = sorted(means)
    return label, counts, [means[n] for n in counts], [stds.get(n, 0.0) for n in counts]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("results", nargs="+", type=Path, help="results CSV file(s)")
    parser.add_argument("--out", type=Path, default=Path("errors.png"),
                        help="output image path (default errors.png)")
    parser.add_argument("--log-x", action="store_true", help="log-scale sample counts")
    parser.add_argument("--title", default="Reconstruction errors vs sample count")
    args = parser.parse_args(argv)

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is required: pip install 'gridtopo[plot]'", file=sys.stderr)
        return 1

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in args.results:
        label, counts, means, stds = read_summary(path)
        ax.errorbar(counts, means, yerr=stds, marker="o", capsize=3, label=label)
    if args.log_x:
        ax.set_xscale("log")
    ax.set_xlabel("samples n")
    ax.set_ylabel("mean total edge errors")
    ax.set_title(args.title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

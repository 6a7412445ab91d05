"""Plot the CSV tables written by `drcme fit-convergence` and `drcme power`.

    python scripts/plot_results.py results/fit_convergence_summary.csv conv.png
    python scripts/plot_results.py results/power_curve_summary.csv power.png

Needs matplotlib, which the package itself does not depend on.
"""

import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def plot_convergence(rows, ax_list):
    targets = sorted({r["setting"] for r in rows})
    for ax, target in zip(ax_list, targets):
        lines = defaultdict(list)
        for r in rows:
            if r["setting"] == target:
                lines[r["statistic"]].append((float(r["grid_point"]), float(r["median"])))
        for est, pts in sorted(lines.items()):
            pts.sort()
            ax.plot(*zip(*pts), marker="o", label=est)
        ax.set(xscale="log", yscale="log", xlabel="n", title=target)
        ax.legend()
    ax_list[0].set_ylabel("median RKHS error")


def plot_power(rows, ax_list):
    settings = sorted({r["setting"] for r in rows})
    for ax, setting in zip(ax_list, settings):
        lines = defaultdict(list)
        for r in rows:
            if r["setting"] == setting:
                lines[r["statistic"]].append((float(r["grid_point"]), float(r["mean"])))
        for stat, pts in sorted(lines.items()):
            pts.sort()
            ax.plot(*zip(*pts), marker="o", label=stat)
        ax.set(xlabel="effect size", ylim=(-0.02, 1.02), title=setting)
        ax.legend()
    ax_list[0].set_ylabel("rejection rate")


def main(argv):
    if len(argv) != 2:
        sys.exit(__doc__)
    rows = load(argv[0])
    if not rows:
        sys.exit("empty table")
    suite = rows[0]["suite"]
    panels = sorted({r["setting"] for r in rows})
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.5), squeeze=False)
    if suite == "fit_convergence":
        plot_convergence(rows, axes[0])
    else:
        plot_power(rows, axes[0])
    fig.tight_layout()
    fig.savefig(argv[1], dpi=120)


if __name__ == "__main__":
    main(sys.argv[1:])

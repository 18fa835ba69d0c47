#!/usr/bin/env python3
"""Plot the CSV tables written by `cpa-parallab reproduce`.

Usage: plot.py RESULTS_DIR [OUT_DIR]

Looks for the per-figure subdirectories (fig2, fig3, fig4, fig5, appendixA,
appendixB, appendixC) and writes one PNG per figure found. Needs matplotlib.
"""
import csv
import math
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def col(table, name):
    return [float(r[name]) if r[name] not in ("", "inf") else math.inf for r in table]


def decay(fit, n):
    return fit["a"] * math.exp(-fit["b"] * n) + fit["c"]


def curves(ax, folder, prefix="", style="-"):
    fits = {}
    if (folder / "fits.csv").exists():
        fits = {int(r["tau"]): {k: float(r[k]) for k in "abc"} for r in rows(folder / "fits.csv")}
    for path in sorted(folder.glob(f"curve_{prefix}tau*.csv")):
        t = rows(path)
        tau = int(t[0]["tau"])
        n = col(t, "n_pe")
        line = ax.plot(n, col(t, "rho"), style, label=f"{prefix}correct tau={tau}")[0]
        ax.plot(n, col(t, "best_incorrect"), ":", color=line.get_color(), label=f"{prefix}incorrect tau={tau}")
        if tau in fits:
            ax.plot(n, [decay(fits[tau], x) for x in n], "--", color=line.get_color(), alpha=0.5)
    ax.set_xlabel("parallel PEs")
    ax.set_ylabel("|rho|")


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    root = Path(sys.argv[1])
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else root
    out.mkdir(parents=True, exist_ok=True)
    for name in ["fig2", "fig3", "fig4", "fig5", "appendixA", "appendixB", "appendixC"]:
        folder = root / name
        if not folder.is_dir():
            continue
        fig, ax = plt.subplots(figsize=(7, 4.5))
        if name == "fig2":
            t = rows(folder / "snr.csv")
            for tau in sorted({int(r["tau"]) for r in t}):
                sub = [r for r in t if int(r["tau"]) == tau and r["snr"] != "inf"]
                ax.plot(col(sub, "n_pe"), col(sub, "snr"), label=f"tau={tau}")
            ax.set_yscale("log")
            ax.set_xlabel("parallel PEs")
            ax.set_ylabel("SNR")
        elif name == "fig3":
            t = rows(folder / "dependence.csv")
            ax.plot(col(t, "tau"), col(t, "max_abs_rho"), "o-")
            ax.set_xlabel("tau")
            ax.set_ylabel("max |rho| between PEs")
        elif name == "fig5":
            t = [r for r in rows(folder / "snr_bins.csv") if int(r["count"]) > 0]
            x = col(t, "center")
            ax.plot(x, col(t, "rho"), label="correct")
            ax.plot(x, col(t, "best_incorrect"), label="best incorrect")
            env = [r for r in t if r["envelope_rho"]]
            ax.fill_between(col(env, "center"), col(env, "envelope_rho"), col(env, "envelope_best_incorrect"),
                            alpha=0.2, label="envelope")
            ax.set_xscale("log")
            ax.set_xlabel("SNR")
            ax.set_ylabel("|rho|")
        elif name == "appendixA":
            curves(ax, folder, "uniform_", "-")
            curves(ax, folder, "normal_", "-.")
        else:
            curves(ax, folder)
        ax.set_title(name)
        ax.legend(fontsize="x-small")
        fig.tight_layout()
        fig.savefig(out / f"{name}.png", dpi=120)
        plt.close(fig)
        print(out / f"{name}.png")


if __name__ == "__main__":
    main()

"""Render a saved simulation-study report: CSV summary and diagnostic figures.

Reports are data; this module is the only place that turns them into
pictures.  All figures are written to files (Agg backend, no display).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

__all__ = ["summary_rows", "write_csv_summary", "render_figures"]


def summary_rows(report: dict) -> list[dict]:
    """One flat row per m: median error, coverage per method/level, failures."""
    rows = []
    for entry in report["per_m"]:
        row = {
            "m": entry["m"],
            "median_x_error": entry["median_x_error"],
            "no_solution": entry["failures"]["no_solution"],
            "no_convergence": entry["failures"]["no_convergence"],
            "used_reps": entry["failures"]["used"],
        }
        first = entry["directions"][0]
        for method in ("analytic", "sandwich"):
            for level, stats in first["coverage"][method].items():
                row[f"coverage_{method}_{level}"] = stats["rate"]
        rows.append(row)
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv_summary(report: dict, path) -> None:
    rows = summary_rows(report)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(rows[0].keys())
        for row in rows:
            writer.writerow([_fmt(v) for v in row.values()])


def _fig_consistency(report: dict, outdir: Path) -> Path:
    ms = [entry["m"] for entry in report["per_m"]]
    med = [entry["median_x_error"] for entry in report["per_m"]]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(ms, med, "o-", label="median error")
    ref = [med[0] * (ms[0] / m) ** 0.5 for m in ms]
    ax.loglog(ms, ref, "k--", alpha=0.6, label=r"$m^{-1/2}$ reference")
    ax.set_xlabel("rows m")
    ax.set_ylabel("median Frobenius error")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = outdir / "consistency.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _fig_coverage(report: dict, outdir: Path) -> Path:
    per_m = report["per_m"]
    ms = [entry["m"] for entry in per_m]
    directions = per_m[0]["directions"]
    levels = list(directions[0]["coverage"]["analytic"].keys())
    fig, axes = plt.subplots(
        1, len(directions), figsize=(4 * len(directions), 3.2), sharey=True, squeeze=False
    )
    for i, ax in enumerate(axes[0]):
        for method, marker in (("analytic", "o"), ("sandwich", "s")):
            for level in levels:
                rates = [entry["directions"][i]["coverage"][method][level]["rate"] for entry in per_m]
                ax.plot(ms, rates, marker + "-", label=f"{method} @ {level}", alpha=0.8)
        for level in levels:
            ax.axhline(float(level), color="gray", lw=0.6, ls=":")
        ax.set_xscale("log")
        ax.set_xlabel("rows m")
        ax.set_title(f"direction {i}")
    axes[0][0].set_ylabel("empirical coverage")
    axes[0][-1].legend(frameon=False, fontsize=7)
    fig.tight_layout()
    path = outdir / "coverage.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _fig_normality(report: dict, outdir: Path) -> Path | None:
    entry = report["per_m"][-1]
    labels, stats = [], []
    crit = None
    for i, direction in enumerate(entry["directions"]):
        crit = direction.get("ks_critical_1pct") or crit
        for method in ("analytic", "sandwich"):
            ks = direction["ks_studentized"][method]
            if ks["stats"] is None:
                continue
            for coord, stat in enumerate(ks["stats"]):
                labels.append(f"u{i}/{method[:4]}/{coord}")
                stats.append(stat)
    if not stats:
        return None
    fig, ax = plt.subplots(figsize=(max(5, 0.45 * len(stats)), 3.2))
    ax.bar(range(len(stats)), stats, color="steelblue")
    if crit is not None:
        ax.axhline(crit, color="firebrick", ls="--", label="1% critical value")
        ax.legend(frameon=False)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=70, fontsize=6)
    ax.set_ylabel("KS statistic")
    ax.set_title(f"studentized coordinates at m={entry['m']}")
    fig.tight_layout()
    path = outdir / "normality.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _fig_method_agreement(report: dict, outdir: Path) -> Path | None:
    per_m = report["per_m"]
    ms = [entry["m"] for entry in per_m]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    drew = False
    for i in range(len(per_m[0]["directions"])):
        gaps = [entry["directions"][i].get("su_gap_rel_fro") for entry in per_m]
        if any(g is None for g in gaps):
            continue
        ax.plot(ms, [g["median"] for g in gaps], "o-", label=f"direction {i}")
        drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xscale("log")
    ax.set_xlabel("rows m")
    ax.set_ylabel("median rel. Frobenius gap")
    ax.set_title("sandwich vs analytic covariance")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = outdir / "method_agreement.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_figures(report: dict, outdir) -> list[Path]:
    """Write every figure the report supports; returns the created paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    made = [
        _fig_consistency(report, outdir),
        _fig_coverage(report, outdir),
        _fig_normality(report, outdir),
        _fig_method_agreement(report, outdir),
    ]
    return [p for p in made if p is not None]

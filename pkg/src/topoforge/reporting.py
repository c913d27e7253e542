"""Report rendering: CSV/JSON tables with matplotlib figures alongside.

Every writer targets an explicit path; nothing touches the working
directory.  Figures use the Agg backend so reports render headless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import BarGraph, ConstraintReport
from .simp import OptimizationTrace

BAR_COLORS = {"clamped": "tab:red", "loaded": "tab:green", "internal": "tab:blue"}


def save_design_image(design: np.ndarray, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 5 * design.shape[0] / max(design.shape[1], 1)))
    ax.imshow(np.asarray(design), cmap="gray_r", vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def save_trace_csv(trace: OptimizationTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "compliance", "volfrac", "change"])
        for k, (c, v, d) in enumerate(
            zip(trace.compliances, trace.volumes, trace.changes), start=1
        ):
            writer.writerow([k, f"{c:.10g}", f"{v:.10g}", f"{d:.10g}"])


def save_convergence_plot(trace: OptimizationTrace, path: str | Path) -> None:
    iters = np.arange(1, len(trace.compliances) + 1)
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(iters, trace.compliances, color="tab:blue", label="compliance")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("compliance (J)", color="tab:blue")
    ax1.set_yscale("log")
    ax2 = ax1.twinx()
    ax2.plot(iters, trace.volumes, color="tab:orange", label="volume fraction")
    ax2.set_ylabel("volume fraction", color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bar_overlay(
    design: np.ndarray, graph: BarGraph, path: str | Path, title: str = ""
) -> None:
    fig, ax = plt.subplots(figsize=(6, 6 * design.shape[0] / max(design.shape[1], 1)))
    ax.imshow(
        np.asarray(design),
        cmap="gray_r",
        vmin=0.0,
        vmax=1.0,
        interpolation="nearest",
        extent=(0, design.shape[1], design.shape[0], 0),
        alpha=0.4,
    )
    for bar in graph.bars:
        ax.plot(bar.polyline[:, 0], bar.polyline[:, 1], color=BAR_COLORS[bar.kind], lw=2)
    for x, y in graph.nodes:
        ax.plot(x, y, "ko", ms=3)
    handles = [plt.Line2D([0], [0], color=c, lw=2, label=k) for k, c in BAR_COLORS.items()]
    ax.legend(handles=handles, loc="upper right", fontsize=8)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def save_bars_json(graph: BarGraph, path: str | Path) -> None:
    payload = {
        "totals": {
            "clamped": graph.clamped,
            "loaded": graph.loaded,
            "internal": graph.internal,
            "total": graph.total,
        },
        "empty": graph.empty,
        "bars": [
            {
                "kind": bar.kind,
                "length_px": bar.length,
                "polyline": [[float(x), float(y)] for x, y in bar.polyline],
            }
            for bar in graph.bars
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def save_constraint_report(
    report: ConstraintReport,
    csv_path: str | Path,
    json_path: str | Path,
    unpaired: Optional[list[int]] = None,
) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "margin", "pass_rate"])
        for metric, margin, rate in report.csv_rows():
            writer.writerow([metric, margin, f"{rate:.6f}"])
        writer.writerow(["mse", "", "" if report.mse is None else f"{report.mse:.10g}"])
    summary = report.to_summary()
    if unpaired is not None:
        summary["unpaired_indices"] = unpaired
    # insertion order preserves the canonical margin-column ordering
    Path(json_path).write_text(json.dumps(summary, indent=2))


def save_report_distributions(report: ConstraintReport, path: str | Path) -> None:
    """Histogram panels: candidate vs reference compliance, volume, bar count."""
    details = report.details
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    vols = [d.volume for d in details]
    tvols = [d.volume_target for d in details]
    axes[0].hist(vols, bins=20, alpha=0.6, label="candidate")
    axes[0].hist(tvols, bins=20, alpha=0.6, label="target")
    axes[0].set_title("volume fraction")
    axes[0].legend(fontsize=8)
    bars = [d.bar_total for d in details]
    tbars = [d.bar_target for d in details]
    hi = max(bars + tbars + [1]) + 2
    axes[1].hist(bars, bins=range(0, hi), alpha=0.6, label="candidate")
    axes[1].hist(tbars, bins=range(0, hi), alpha=0.6, label="target")
    axes[1].set_title("bar count")
    axes[1].legend(fontsize=8)
    comp = [d.compliance for d in details if np.isfinite(d.compliance)]
    ref = [
        d.reference_compliance
        for d in details
        if d.reference_compliance is not None and np.isfinite(d.reference_compliance)
    ]
    if comp:
        axes[2].hist(comp, bins=20, alpha=0.6, label="candidate")
    if ref:
        axes[2].hist(ref, bins=20, alpha=0.6, label="reference")
    axes[2].set_title("compliance (J)")
    axes[2].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_dataset_report(
    summary: dict, csv_path: str | Path, fig_path: str | Path
) -> None:
    """Acceptance statistics CSV plus volume/complexity distribution figure."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        writer.writerow(["accepted", summary["acceptance"]["accepted"]])
        writer.writerow(["rejected", summary["acceptance"]["rejected"]])
        writer.writerow(["acceptance_rate", f"{summary['acceptance']['rate']:.6f}"])
        writer.writerow(["volfrac_ks_statistic", f"{summary['volfrac_ks_statistic']:.6f}"])
        writer.writerow(["volfrac_mean", f"{summary['volfrac_mean']:.6f}"])
        writer.writerow(["volfrac_reference_mean", f"{summary['volfrac_reference_mean']:.6f}"])
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].hist(
        summary["reference_volfracs"], bins=30, alpha=0.6, density=True, label="sampler"
    )
    axes[0].hist(summary["volfracs"], bins=30, alpha=0.6, density=True, label="accepted")
    axes[0].set_title("volume fraction")
    axes[0].legend(fontsize=8)
    hist = summary["complexity_histogram"]
    axes[1].bar(hist["bin_edges"][:-1], hist["counts"], width=0.9, align="edge")
    axes[1].set_title("bar count of accepted designs")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=150)
    plt.close(fig)


def save_bench_report(
    rows: list[dict],
    csv_path: str | Path,
    fig_path: str | Path,
    context_baseline_s: float = 1.13,
) -> None:
    """Timing table: one row per batch size, footer carries an external
    CPU baseline for context only (never asserted)."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_designs", "total_seconds", "seconds_per_design"])
        for row in rows:
            writer.writerow(
                [row["n"], f"{row['total_s']:.6f}", f"{row['per_design_s']:.6f}"]
            )
        writer.writerow([])
        writer.writerow(
            ["# context_baseline_seconds_per_design", f"{context_baseline_s}", "reported external figure, not asserted"]
        )
    fig, ax = plt.subplots(figsize=(5, 4))
    ns = [row["n"] for row in rows]
    ax.loglog(ns, [row["total_s"] for row in rows], "o-", label="measured")
    ax.loglog(ns, [context_baseline_s * n for n in ns], "--", label="context baseline")
    ax.set_xlabel("number of designs")
    ax.set_ylabel("seconds")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=150)
    plt.close(fig)

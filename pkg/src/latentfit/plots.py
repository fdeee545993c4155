"""Figure rendering for the evaluation reports.

Figures are a presentation layer on top of the CSV outputs: every plot
function takes the same result objects the CSV writers take and writes a
PNG. The Agg backend keeps this headless-safe. CSV stays the contract;
nothing here feeds back into any computation.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .evaluate import (  # noqa: E402
    METHOD_AE,
    METHOD_LS,
    PARAM_UNITS,
    BenchReport,
    DistributionSummary,
    ScanRow,
    SweepRow,
    freedman_diaconis_bins,
)

_METHOD_STYLE = {METHOD_AE: ("tab:blue", "o"), METHOD_LS: ("tab:orange", "s")}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_distribution(estimates, reference: float, summary: DistributionSummary, path, unit: str = "1") -> None:
    """Histogram of (estimate - reference) with the fitted Gaussian overlaid."""
    deltas = np.asarray(estimates, dtype=np.float64) - reference
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        edges = freedman_diaconis_bins(deltas)
    except ValueError:
        edges = 10
    ax.hist(deltas, bins=edges, color="tab:blue", alpha=0.65, label=f"n={summary.n}")
    if summary.has_fit:
        x = np.linspace(deltas.min(), deltas.max(), 400)
        counts, _ = np.histogram(deltas, bins=edges)
        amp = counts.max()
        g = amp * np.exp(-((x - summary.center) ** 2) / (2 * summary.sigma**2))
        ax.plot(x, g, "k-", lw=1.5, label=f"fit: center={summary.center:.3g}, FWHM={summary.fwhm:.3g}")
        ax.axvline(summary.center, color="k", ls=":", lw=1)
    ax.axvline(0.0, color="red", ls="--", lw=1, label="reference")
    ax.set_xlabel(f"estimate - reference [{unit}]")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_sweep(rows: list[SweepRow], path) -> None:
    """Empirical sigma vs SNR per parameter and method, with the CRLB line."""
    params = list(rows[0].sigmas.keys())
    fig, axes = plt.subplots(1, len(params), figsize=(4.5 * len(params), 3.6), squeeze=False)
    for j, name in enumerate(params):
        ax = axes[0][j]
        for method, (color, marker) in _METHOD_STYLE.items():
            pts = [(r.snr, r.sigmas[name]) for r in rows if r.method == method and not math.isnan(r.sigmas[name])]
            if pts:
                x, y = zip(*pts)
                ax.loglog(x, y, marker, color=color, ms=4, ls="-", lw=0.8, label=method)
        crlb_pts = sorted({(r.snr, r.crlb[name]) for r in rows})
        ax.loglog(*zip(*crlb_pts), "k--", lw=1, label="CRLB")
        ax.set_xlabel("SNR")
        ax.set_ylabel(f"sigma({name}) [{PARAM_UNITS.get(name, '1')}]")
        ax.legend(fontsize=7)
    _save(fig, path)


def plot_scan(rows: list[ScanRow], path) -> None:
    """Mean +- stddev per detuning for each method, against the true curve."""
    params = list(rows[0].true.keys())
    fig, axes = plt.subplots(len(params), 1, figsize=(6, 2.8 * len(params)), squeeze=False)
    for j, name in enumerate(params):
        ax = axes[j][0]
        truth = sorted({(r.detuning, r.true[name]) for r in rows})
        ax.plot(*zip(*truth), "k:", lw=1.2, label="true")
        for method, (color, marker) in _METHOD_STYLE.items():
            sel = [r for r in rows if r.method == method]
            x = [r.detuning for r in sel]
            y = [r.mean[name] for r in sel]
            e = [r.stddev[name] for r in sel]
            ax.errorbar(x, y, yerr=e, color=color, marker=marker, ms=3, ls="none", lw=0.8, capsize=2, label=method)
        ax.set_xlabel("detuning [arb. units]")
        ax.set_ylabel(f"{name} [{PARAM_UNITS.get(name, '1')}]")
        ax.legend(fontsize=7)
    _save(fig, path)


def plot_bench(reports: list[BenchReport], path) -> None:
    """Median per-signal latency vs FLOPs on log-log axes."""
    reports = [r for r in reports if r.flops > 0]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    flops = [r.flops for r in reports]
    lat = [r.median_latency_s for r in reports]
    ax.loglog(flops, lat, "o-", color="tab:blue")
    for r in reports:
        ax.annotate(r.description, (r.flops, r.median_latency_s), fontsize=6, textcoords="offset points", xytext=(4, 4))
    ax.set_xlabel("encoder FLOPs")
    ax.set_ylabel("median latency per signal [s]")
    _save(fig, path)


def plot_train_report(report, path) -> None:
    """Per-stage loss history; dataset boundaries show as vertical lines."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4), squeeze=False)
    for stage in (1, 2, 3):
        ax = axes[0][stage - 1]
        train = report.series(stage, "train")
        if not len(train):
            ax.set_visible(False)
            continue
        val = report.series(stage, "val")
        x = np.arange(len(train))
        ax.semilogy(x, train, lw=0.7, label="train")
        if np.isfinite(val).any():
            ax.semilogy(x, val, lw=0.7, alpha=0.7, label="validation")
        per_dataset = len(train) // max(1, report.n_datasets)
        for d in range(1, report.n_datasets):
            ax.axvline(d * per_dataset, color="gray", lw=0.4, alpha=0.5)
        ax.set_title(f"stage {stage}")
        ax.set_xlabel("epoch (cumulative)")
        ax.set_ylabel("MSE per neuron")
        ax.legend(fontsize=7)
    _save(fig, path)


def plot_reconstruction(times, original, reconstructed, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.6))
    ax.plot(np.asarray(times) * 1e6, original, lw=0.7, alpha=0.7, label="input")
    ax.plot(np.asarray(times) * 1e6, reconstructed, lw=1.2, label="reconstruction")
    ax.set_xlabel("time [us]")
    ax.set_ylabel("signal [arb. units]")
    ax.legend(fontsize=8)
    _save(fig, path)

"""Matplotlib figures written next to the emitted reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .runner import MonteCarloResult, RunReport  # noqa: E402

# No software/version stamp, so repeated runs give identical files.
_PNG_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=100, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_report(report: RunReport, out_dir, stem: str = "report") -> list:
    """Outputs against setpoints, inputs, and ILC error norms when present."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = report.times
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for i in range(report.outputs.shape[1]):
        line, = axes[0].plot(t, report.outputs[:, i], label=f"y{i}")
        if np.any(np.isfinite(report.setpoints[:, i])):
            axes[0].plot(t, report.setpoints[:, i], "--", color=line.get_color(), label=f"sp{i}")
    for i in range(report.estimates.shape[1]):
        axes[0].plot(t, report.estimates[:, i], ":", label=f"est{i}")
    axes[0].set_ylabel("output")
    axes[0].legend(loc="best", fontsize="small")
    for i in range(report.inputs.shape[1]):
        axes[1].step(t, report.inputs[:, i], where="post", label=f"u{i}")
    axes[1].set_ylabel("input")
    axes[1].set_xlabel("time")
    axes[1].legend(loc="best", fontsize="small")
    paths = [_save(fig, out / f"{stem}_trajectory.png")]
    norms = report.summary.get("ilc_error_norms")
    if norms:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.semilogy(np.arange(len(norms)), np.maximum(norms, 1e-300), "o-")
        ax.set_xlabel("iteration")
        ax.set_ylabel("||e_k||")
        paths.append(_save(fig, out / f"{stem}_ilc_errors.png"))
    return paths


def plot_monte_carlo(result: MonteCarloResult, out_dir, stem: str = "mc") -> list:
    """Per-replicate violation rates and tracking RMSE."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ok = [r for r in result.reports if r is not None]
    rates = [r.summary["violation_rate"] for r in ok]
    rmse = [r.summary["tracking_rmse"] for r in ok]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].hist(rates, bins=20)
    axes[0].axvline(result.aggregate["violation_rate"], color="k", linestyle="--")
    axes[0].set_xlabel("violation rate per replicate")
    axes[1].hist([v for v in rmse if np.isfinite(v)], bins=20)
    axes[1].set_xlabel("tracking RMSE per replicate")
    return [_save(fig, out / f"{stem}_summary.png")]

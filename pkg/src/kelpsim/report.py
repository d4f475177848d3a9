"""Figure rendering for the report path: every delimited table the CLI
writes gets a matplotlib companion rendered to PNG next to it."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_ensemble_figures",
    "render_sweep_figure",
    "render_strong_error_figure",
    "render_meanfield_figure",
]

_DPI = 130


def _save(fig, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def render_ensemble_figures(out_dir: str, summary, density, records=None) -> list[str]:
    """Mean curves with quantile band, the total-biomass density heatmap,
    the final-time histogram, and a few sample paths."""
    written = []
    t = summary["t"]

    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, tag, label in zip(
        axes.flat,
        ("J", "A", "E", "P"),
        ("juvenile biomass", "adult biomass", "compliance fraction", "price"),
    ):
        ax.plot(t, summary[f"mean_{tag}"], lw=1.4)
        ax.fill_between(
            t, summary[f"p10_{tag}"], summary[f"p90_{tag}"], alpha=0.25, lw=0
        )
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("time (years)")
    fig.suptitle("ensemble mean and 10-90% band")
    written.append(_save(fig, out_dir, "fig_mean_curves.png"))

    times = np.unique(density["t"])
    lows = np.unique(density["bin_lo"])
    grid = np.full((len(lows), len(times)), np.nan)
    ti = {v: i for i, v in enumerate(times)}
    bi = {v: i for i, v in enumerate(lows)}
    for k in range(len(density["t"])):
        grid[bi[density["bin_lo"][k]], ti[density["t"][k]]] = density["density"][k]
    centres = lows + 0.5 * (density["bin_hi"][0] - density["bin_lo"][0])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    mesh = ax.pcolormesh(times, centres, grid, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="density")
    ax.set_xlabel("time (years)")
    ax.set_ylabel("total biomass")
    ax.set_title("total-biomass density over time")
    written.append(_save(fig, out_dir, "fig_density_total.png"))

    last_t = times.max()
    sel = density["t"] == last_t
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.stairs(density["density"][sel], np.append(density["bin_lo"][sel], density["bin_hi"][sel][-1]))
    ax.set_xlabel("total biomass at final time")
    ax.set_ylabel("density")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out_dir, "fig_final_hist.png"))

    if records:
        fig, ax = plt.subplots(figsize=(7, 4))
        for rec in records[:12]:
            tt = rec.grid.times()
            ax.plot(tt, rec.states[:, 0] + rec.states[:, 1], lw=0.9, alpha=0.8)
        ax.set_xlabel("time (years)")
        ax.set_ylabel("total biomass")
        ax.set_title("sample trajectories")
        ax.grid(alpha=0.3)
        written.append(_save(fig, out_dir, "fig_paths.png"))
    return written


def render_sweep_figure(out_dir: str, parameter: str, points) -> list[str]:
    """Overlayed final-time densities plus the low-biomass mass per point.
    ``points`` is a list of (value, density_columns, low_mass_fraction)."""
    written = []
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for value, density, _ in points:
        last_t = density["t"].max()
        sel = density["t"] == last_t
        ax1.stairs(
            density["density"][sel],
            np.append(density["bin_lo"][sel], density["bin_hi"][sel][-1]),
            label=f"{parameter}={value:g}",
        )
    ax1.set_xlabel("total biomass at final time")
    ax1.set_ylabel("density")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    values = [v for v, _, _ in points]
    fracs = [f for _, _, f in points]
    ax2.bar([f"{v:g}" for v in values], fracs, color="tab:red", alpha=0.8)
    ax2.set_xlabel(parameter)
    ax2.set_ylabel("low-biomass mass fraction")
    ax2.grid(alpha=0.3, axis="y")
    written.append(_save(fig, out_dir, "fig_sweep_comparison.png"))
    return written


def render_strong_error_figure(out_dir: str, result) -> list[str]:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for c, tag in enumerate(("J", "A", "E")):
        rms = np.sqrt(result.sup_errors[:, c])
        ax.loglog(result.dts, rms, "o-", label=f"{tag} (order {result.orders_sup[c]:.2f})")
    ref = np.sqrt(result.sup_errors[0, 0]) * (result.dts / result.dts[0]) ** 0.5
    ax.loglog(result.dts, ref, "k--", lw=0.8, label="slope 1/2")
    ax.set_xlabel("step size")
    ax.set_ylabel("sup-time RMS coupled error")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    return [_save(fig, out_dir, "fig_strong_error.png")]


def render_meanfield_figure(out_dir: str, result) -> list[str]:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for c, tag in enumerate(("j", "a", "e")):
        ax1.errorbar(
            result.n_values,
            result.mean_gaps[:, c],
            yerr=2 * result.mean_gap_ses[:, c],
            fmt="o-",
            capsize=3,
            label=tag,
        )
    ax1.set_xscale("log")
    ax1.set_yscale("log")
    ax1.set_xlabel("agents n")
    ax1.set_ylabel("sup-time |IBM mean - limit mean|")
    ax1.legend()
    ax1.grid(alpha=0.3, which="both")
    for k, n in enumerate(result.n_values):
        ax2.plot(result.report_times, result.ibm_means[k, :, 2], lw=1.0, label=f"n={n}")
    ax2.plot(result.report_times, result.limit_means[:, 2], "k--", lw=1.4, label="limit")
    ax2.set_xlabel("time")
    ax2.set_ylabel("mean compliance fraction")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    return [_save(fig, out_dir, "fig_meanfield.png")]

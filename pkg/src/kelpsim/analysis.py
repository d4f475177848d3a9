"""Ensemble statistics and long-term diagnostics: densities, extinction
probabilities with confidence intervals, Lyapunov-exponent estimation, the
closed-form extinction criterion, and invariant-measure diagnostics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import (
    ModelParams,
    ParameterError,
    StateVec,
    params_hash,
    rate_extrema,
)
from .scheme import GridSpec, PathRecord, simulate_batch

__all__ = [
    "Ensemble",
    "run_ensemble",
    "Histogram",
    "Histogram2D",
    "histogram",
    "joint_histogram",
    "extinction_probability",
    "LyapunovResult",
    "lyapunov_estimate",
    "ExtinctionCriterion",
    "extinction_criterion",
    "moment_curve",
    "OccupationMeasure",
    "occupation_measure",
    "tv_distance",
]

_WILSON_Z = 1.959963984540054  # 95% two-sided


@dataclass
class Ensemble:
    """Independent trajectories sharing grid and parameters, held as
    snapshot arrays plus per-path summaries (full records only for the
    first few paths, when requested)."""

    params: ModelParams
    params_hash: str
    grid: GridSpec
    master_seed: int
    report_times: np.ndarray
    states: np.ndarray  # (M, R, 4)
    final_states: np.ndarray  # (M, 4)
    min_j: np.ndarray
    min_a: np.ndarray
    min_e: np.ndarray
    max_e: np.ndarray
    min_biomass: np.ndarray
    jump_counts: np.ndarray
    dropped_jumps: np.ndarray
    extinction_threshold: float
    records: list[PathRecord] = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def extinct(self) -> np.ndarray:
        """Per-path flag: final total biomass below the threshold."""
        return (self.final_states[:, 0] + self.final_states[:, 1]) < self.extinction_threshold

    def total_biomass(self) -> np.ndarray:
        """(M, R) total biomass at the report times."""
        return self.states[:, :, 0] + self.states[:, :, 1]

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.report_times - t)))
        return idx


def _run_chunk(args):
    params, x0, grid, master_seed, indices, schedule, report_idx, n_full = args
    try:
        return simulate_batch(
            params,
            x0,
            grid,
            master_seed,
            indices,
            schedule=schedule,
            report_indices=report_idx,
            full_record_count=n_full,
        )
    except Exception as exc:
        raise RuntimeError(
            f"trajectories {indices[0]}..{indices[-1]} failed: {exc}"
        ) from exc


def run_ensemble(
    params: ModelParams,
    x0: StateVec,
    grid: GridSpec,
    n_paths: int,
    master_seed: int,
    *,
    schedule=None,
    report_every: Optional[float] = None,
    record_paths: int = 0,
    threads: int = 1,
    extinction_threshold: Optional[float] = None,
    chunk_size: int = 2000,
) -> Ensemble:
    """Simulate ``n_paths`` independent trajectories.

    Noise derives from (master seed, trajectory index) alone, so the result
    is identical whatever the chunking or the worker count.  ``schedule``
    lets a burn-in phase run with a different parameter set.
    """
    if n_paths < 1:
        raise ParameterError("need at least one path")
    if extinction_threshold is None:
        extinction_threshold = 1e-6 * params.eco.carrying_capacity
    if report_every is None:
        stride = max(1, grid.n_steps // 200)
    else:
        stride = max(1, round(report_every / grid.dt))
    report_idx = np.arange(0, grid.n_steps + 1, stride)
    if report_idx[-1] != grid.n_steps:
        report_idx = np.append(report_idx, grid.n_steps)

    chunks = []
    start = 0
    while start < n_paths:
        stop = min(start + chunk_size, n_paths)
        n_full = max(0, min(record_paths - start, stop - start))
        chunks.append(
            (params, x0, grid, master_seed, list(range(start, stop)), schedule, report_idx, n_full)
        )
        start = stop

    if threads == 0:
        import os

        threads = os.cpu_count() or 1
    if threads > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_chunk, chunks))
    else:
        results = [_run_chunk(c) for c in chunks]

    records: list[PathRecord] = []
    for r in results:
        records.extend(r.records)
    cat = lambda attr: np.concatenate([getattr(r, attr) for r in results])
    return Ensemble(
        params=params,
        params_hash=params_hash(params),
        grid=grid,
        master_seed=master_seed,
        report_times=results[0].report_times,
        states=np.concatenate([r.snapshots for r in results]),
        final_states=cat("final_states"),
        min_j=cat("min_j"),
        min_a=cat("min_a"),
        min_e=cat("min_e"),
        max_e=cat("max_e"),
        min_biomass=cat("min_biomass"),
        jump_counts=cat("jump_counts"),
        dropped_jumps=cat("dropped_jumps"),
        extinction_threshold=extinction_threshold,
        records=records,
    )


# ---------------------------------------------------------------------------
# densities


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def mass(self) -> float:
        return float(np.sum(self.density * self.widths))


@dataclass
class Histogram2D:
    edges_x: np.ndarray
    edges_y: np.ndarray
    counts: np.ndarray
    density: np.ndarray

    def mass(self) -> float:
        wx = np.diff(self.edges_x)[:, None]
        wy = np.diff(self.edges_y)[None, :]
        return float(np.sum(self.density * wx * wy))


def _resolve_edges(values, bins, lo=None, hi=None):
    if isinstance(bins, (Sequence, np.ndarray)) and not isinstance(bins, (int, np.integer)):
        edges = np.asarray(bins, dtype=float)
    else:
        lo = float(np.min(values)) if lo is None else lo
        hi = float(np.max(values)) if hi is None else hi
        if hi <= lo:
            hi = lo + max(abs(lo), 1.0) * 1e-9 + 1e-12
        edges = np.linspace(lo, hi, int(bins) + 1)
    if np.any(np.diff(edges) <= 0):
        raise ParameterError("bin edges must be strictly increasing")
    return edges


def histogram(values, bins=50, lo=None, hi=None) -> Histogram:
    """Density table; values outside the edge range are clipped into the
    boundary bins so that counts always sum to the sample size."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ParameterError("histogram needs at least one value")
    edges = _resolve_edges(values, bins, lo, hi)
    clipped = np.clip(values, edges[0], np.nextafter(edges[-1], -np.inf))
    counts, _ = np.histogram(clipped, bins=edges)
    density = counts / (values.size * np.diff(edges))
    return Histogram(edges=edges, counts=counts, density=density)


def joint_histogram(x, y, bins=50, lo=None, hi=None) -> Histogram2D:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or x.shape != y.shape:
        raise ParameterError("joint histogram needs matching non-empty samples")
    ex = _resolve_edges(x, bins, lo, hi)
    ey = _resolve_edges(y, bins, lo, hi)
    cx = np.clip(x, ex[0], np.nextafter(ex[-1], -np.inf))
    cy = np.clip(y, ey[0], np.nextafter(ey[-1], -np.inf))
    counts, _, _ = np.histogram2d(cx, cy, bins=[ex, ey])
    density = counts / (x.size * np.outer(np.diff(ex), np.diff(ey)))
    return Histogram2D(edges_x=ex, edges_y=ey, counts=counts, density=density)


# ---------------------------------------------------------------------------
# extinction and stability diagnostics


def wilson_interval(k: int, n: int, z: float = _WILSON_Z) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    phat = k / n
    denom = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def extinction_probability(ens: Ensemble, threshold: float, t: float):
    """Fraction of paths whose total biomass at time t is below the
    threshold, with a 95% Wilson interval.  Off-grid times snap to the
    nearest report time (with a warning)."""
    if threshold < 0:
        raise ParameterError("threshold must be >= 0")
    idx = ens.time_index(t)
    snapped = float(ens.report_times[idx])
    if abs(snapped - t) > 1e-9 * max(1.0, abs(t)):
        import warnings

        warnings.warn(f"time {t} is off the report grid; using {snapped}", stacklevel=2)
    total = ens.total_biomass()[:, idx]
    k = int(np.sum(total < threshold))
    n = total.size
    lo, hi = wilson_interval(k, n)
    return k / n, lo, hi, k


@dataclass
class LyapunovResult:
    slopes: np.ndarray
    excluded: int
    window: tuple[float, float]

    @property
    def slope(self) -> float:
        return float(self.slopes[0]) if self.slopes.size == 1 else float(np.median(self.slopes))

    def median(self) -> float:
        return float(np.median(self.slopes))

    def fraction_below(self, level: float) -> float:
        return float(np.mean(self.slopes < level))


def _fit_window(times, window):
    if window is None:
        t0 = times[-1] / 2.0
        t1 = times[-1]
    else:
        t0, t1 = window
    mask = (times >= t0 - 1e-12) & (times <= t1 + 1e-12)
    if mask.sum() < 2:
        raise ParameterError("fit window must contain at least two grid points")
    return mask, (float(t0), float(t1))


def lyapunov_estimate(source, window=None) -> LyapunovResult:
    """Least-squares slope of log total biomass over the fit window
    (default: the last half of the horizon).  Paths whose total biomass
    hits numerical zero inside the window are excluded and counted."""
    if isinstance(source, PathRecord):
        times = source.grid.times()
        totals = source.states[None, :, 0] + source.states[None, :, 1]
    elif isinstance(source, Ensemble):
        times = source.report_times
        totals = source.total_biomass()
    else:
        times, totals = source
        totals = np.atleast_2d(np.asarray(totals, dtype=float))
    mask, win = _fit_window(np.asarray(times, dtype=float), window)
    tw = np.asarray(times)[mask]
    seg = totals[:, mask]
    alive = np.all(seg > 0.0, axis=1)
    excluded = int(np.sum(~alive))
    if not alive.any():
        raise ParameterError("every path hit zero inside the fit window")
    logs = np.log(seg[alive])
    tc = tw - tw.mean()
    denom = float(np.sum(tc * tc))
    slopes = (logs - logs.mean(axis=1, keepdims=True)) @ tc / denom
    return LyapunovResult(slopes=slopes, excluded=excluded, window=win)


@dataclass(frozen=True)
class ExtinctionCriterion:
    """Closed-form exponential-extinction check: the decay rate is positive
    when the noise-plus-death rates dominate recruitment and the pulse flux
    stays below the stability margin."""

    r_hat: float
    m_check_a: float
    m_check_j: float
    m_bound: float
    floor: float
    lam: float
    cond_drift: bool
    cond_flux: bool
    cond_moments: bool
    eta_value: float

    @property
    def passed(self) -> bool:
        return self.cond_drift and self.cond_flux and self.cond_moments

    @property
    def eta(self) -> Optional[float]:
        return self.eta_value if self.passed else None


def extinction_criterion(params: ModelParams) -> ExtinctionCriterion:
    ex = rate_extrema(params.eco)
    r_hat, m_a, m_j = ex["r_hat"], ex["m_check_a"], ex["m_check_j"]
    sa2 = 0.5 * params.eco.sigma_a**2
    sj2 = 0.5 * params.eco.sigma_j**2
    m1, m2 = params.jumps.moment_bounds()
    m_bound = max(m1, m2)
    lam = params.jumps.lam
    flux = m_bound * lam / params.jumps.floor if lam > 0 else 0.0
    cond_drift = min(sa2, m_j) + m_a - r_hat > 0
    cond_flux = min(m_j + sj2, m_a - r_hat + sa2) > flux
    cond_moments = math.isfinite(m_bound)
    eta_value = min(sa2 + m_a - r_hat - flux, m_j + sj2 - flux)
    return ExtinctionCriterion(
        r_hat=r_hat,
        m_check_a=m_a,
        m_check_j=m_j,
        m_bound=m_bound,
        floor=params.jumps.floor,
        lam=lam,
        cond_drift=cond_drift,
        cond_flux=cond_flux,
        cond_moments=cond_moments,
        eta_value=eta_value,
    )


def moment_curve(ens: Ensemble, p: float = 1.0):
    """Empirical p-th moments of total biomass at the report times, with
    standard errors.  Returns (times, moments, ses, max_moment)."""
    if p < 1:
        raise ParameterError("moment order must be >= 1")
    total = ens.total_biomass() ** p
    moments = total.mean(axis=0)
    ses = total.std(axis=0, ddof=1) / math.sqrt(ens.n_paths) if ens.n_paths > 1 else np.zeros_like(moments)
    return ens.report_times, moments, ses, float(np.max(moments))


# ---------------------------------------------------------------------------
# occupation measure


@dataclass
class OccupationMeasure:
    edges_j: np.ndarray
    edges_a: np.ndarray
    weights: np.ndarray  # normalized cell masses

    def mass(self) -> float:
        return float(self.weights.sum())


def occupation_measure(path: PathRecord, t: float, bins=30, lo=0.0, hi=None) -> OccupationMeasure:
    """Time-averaged empirical distribution of the biomass pair over a
    rectangular grid, up to time t."""
    times = path.grid.times()
    k = int(np.argmin(np.abs(times - t)))
    if k < 1:
        raise ParameterError("need at least one whole cell before t")
    js = path.states[:k, 0]
    as_ = path.states[:k, 1]
    if hi is None:
        hi = float(max(js.max(), as_.max())) * 1.0000001 + 1e-12
    edges = np.linspace(lo, hi, int(bins) + 1)
    cj = np.clip(js, edges[0], np.nextafter(edges[-1], -np.inf))
    ca = np.clip(as_, edges[0], np.nextafter(edges[-1], -np.inf))
    counts, _, _ = np.histogram2d(cj, ca, bins=[edges, edges])
    return OccupationMeasure(edges_j=edges, edges_a=edges, weights=counts / counts.sum())


def tv_distance(m1: OccupationMeasure, m2: OccupationMeasure) -> float:
    if m1.weights.shape != m2.weights.shape:
        raise ParameterError("occupation measures must share the grid")
    return 0.5 * float(np.abs(m1.weights - m2.weights).sum())

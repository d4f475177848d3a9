"""Convergence harnesses: coupled-path strong-error measurement of the
production scheme across grid refinements, and the distance between the
agent-based chain and its mean-field limit across population sizes."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace
from typing import Sequence

import numpy as np

from . import noise as noise_mod
from .ibm import IbmConfig, IbmState, simulate_ibm_batch
from .model import (
    ComplianceParams,
    JumpParams,
    ModelParams,
    ParameterError,
    PriceParams,
    StateVec,
)
from .scheme import GridSpec, simulate_batch, validate_dt

__all__ = [
    "StrongErrorResult",
    "strong_error_curve",
    "MeanFieldResult",
    "meanfield_error",
    "meanfield_limit_params",
]

_COMPONENTS = ("J", "A", "E")


@dataclass
class StrongErrorResult:
    """Per-level coupled errors against the finest-level reference."""

    dts: np.ndarray  # coarse step sizes, one per level
    sup_errors: np.ndarray  # (L, 3) sup-over-grid mean-square differences
    sup_ses: np.ndarray
    terminal_errors: np.ndarray  # (L, 3) mean-square differences at T
    terminal_ses: np.ndarray
    orders_sup: np.ndarray  # (3,) RMS regression slopes vs dt
    orders_terminal: np.ndarray
    n_paths: int
    reference_dt: float
    dropped_jumps: int

    def component_order(self, tag: str, terminal: bool = False) -> float:
        i = _COMPONENTS.index(tag)
        return float(self.orders_terminal[i] if terminal else self.orders_sup[i])


def _fit_order(dts, errors):
    """Slope of log RMS error against log dt."""
    rms = np.sqrt(np.maximum(errors, 1e-300))
    return float(np.polyfit(np.log(dts), np.log(rms), 1)[0])


def strong_error_curve(
    params: ModelParams,
    x0: StateVec,
    horizon: float,
    base_steps: int,
    levels: int,
    n_paths: int,
    master_seed: int,
) -> StrongErrorResult:
    """Coupled strong-error table.

    Level l runs the scheme on dt = horizon / (base_steps * 2**l); all
    levels of one trajectory share one Brownian path (coarse increments
    are exact sums of the refined ones) and one pulse-event list, and the
    finest level (l = levels) is the reference.  Each level's error is the
    sup over its own grid of the mean-square gap to the reference.
    """
    if levels < 3:
        raise ParameterError("need at least three refinement levels")
    base_grid = GridSpec(horizon, base_steps)
    ok, slack = validate_dt(params, base_grid.dt)
    if not ok:
        raise ParameterError(f"base dt violates the positivity bound (slack {slack:.3g})")
    if base_grid.dt >= 0.5:
        raise ParameterError("base dt must be < 0.5")

    level_grids = [GridSpec(horizon, base_steps * 2**l) for l in range(levels + 1)]
    n_ref = level_grids[-1].n_steps

    sq_sum = [np.zeros((g.n_steps + 1, 3)) for g in level_grids[:levels]]
    sq_sumsq = [np.zeros((g.n_steps + 1, 3)) for g in level_grids[:levels]]
    dropped = 0

    chunk = max(1, min(n_paths, 512))
    start = 0
    while start < n_paths:
        stop = min(start + chunk, n_paths)
        indices = list(range(start, stop))
        bundle = []
        for i in indices:
            nz = noise_mod.path_noise(
                master_seed, i, base_grid.dt, base_steps, params.jumps.lam, params.jumps.marks
            )
            per_level = [nz]
            for _ in range(levels):
                nz = noise_mod.refine_increments(nz)
                per_level.append(nz)
            bundle.append(per_level)

        ref = simulate_batch(
            params,
            x0,
            level_grids[-1],
            master_seed,
            indices,
            noises=[b[levels] for b in bundle],
        )
        dropped += int(ref.dropped_jumps.sum())
        ref_states = ref.snapshots[:, :, :3]  # (B, n_ref + 1, 3)

        for l in range(levels):
            res = simulate_batch(
                params,
                x0,
                level_grids[l],
                master_seed,
                indices,
                noises=[b[l] for b in bundle],
            )
            stride = 2 ** (levels - l)
            diff2 = (res.snapshots[:, :, :3] - ref_states[:, ::stride, :]) ** 2
            sq_sum[l] += diff2.sum(axis=0)
            sq_sumsq[l] += (diff2**2).sum(axis=0)
        start = stop

    L = levels
    sup_errors = np.empty((L, 3))
    sup_ses = np.empty((L, 3))
    term_errors = np.empty((L, 3))
    term_ses = np.empty((L, 3))
    for l in range(L):
        mean_grid = sq_sum[l] / n_paths
        var_grid = np.maximum(sq_sumsq[l] / n_paths - mean_grid**2, 0.0)
        se_grid = np.sqrt(var_grid / n_paths)
        idx = mean_grid.argmax(axis=0)
        sup_errors[l] = mean_grid[idx, np.arange(3)]
        sup_ses[l] = se_grid[idx, np.arange(3)]
        term_errors[l] = mean_grid[-1]
        term_ses[l] = se_grid[-1]

    dts = np.array([g.dt for g in level_grids[:levels]])
    orders_sup = np.array([_fit_order(dts, sup_errors[:, c]) for c in range(3)])
    orders_term = np.array([_fit_order(dts, term_errors[:, c]) for c in range(3)])

    return StrongErrorResult(
        dts=dts,
        sup_errors=sup_errors,
        sup_ses=sup_ses,
        terminal_errors=term_errors,
        terminal_ses=term_ses,
        orders_sup=orders_sup,
        orders_terminal=orders_term,
        n_paths=n_paths,
        reference_dt=level_grids[-1].dt,
        dropped_jumps=dropped,
    )


# ---------------------------------------------------------------------------
# mean-field harness


def meanfield_limit_params(cfg: IbmConfig) -> ModelParams:
    """Parameter set of the mean-field limit for a complete-graph chain:
    noiseless biomass, no pulses, every switching rate scaled by the
    resampling rate (baselines and syndicate term alike), compliance noise
    sqrt(2 * gamma), and the price frozen at the chain's fixed value.
    """
    p = cfg.params
    cp = p.compliance
    tau_scaled = cp.tau_u * cfg.gamma
    if tau_scaled > 1.0:
        raise ParameterError(
            "gamma * tau_u exceeds 1; the gamma-scaled switching rates cannot be "
            "expressed with an admissible syndicate fraction"
        )
    eco = dc_replace(p.eco, sigma_j=0.0, sigma_a=0.0)
    comp = ComplianceParams(
        beta0_bar=cfg.gamma * cp.beta0_bar,
        beta1_bar=cfg.gamma * cp.beta1_bar,
        tau_u=tau_scaled,
        sigma_e=math.sqrt(2.0 * cfg.gamma),
        eta_sig=cp.eta_sig,
        p_min=cp.p_min,
        p_max=cp.p_max,
        subsidy=cp.subsidy,
    )
    price = PriceParams(kind="constant", p0=cfg.fixed_price)
    return ModelParams(eco=eco, compliance=comp, jumps=JumpParams.none(), price=price)


@dataclass
class MeanFieldResult:
    n_values: np.ndarray
    mean_gaps: np.ndarray  # (len(n), 3) sup-time |mean_ibm - mean_limit|
    mean_gap_ses: np.ndarray  # matching combined standard errors
    var_gaps: np.ndarray  # (len(n), 3) sup-time |var_ibm - var_limit|
    report_times: np.ndarray
    limit_means: np.ndarray  # (R, 3)
    ibm_means: np.ndarray  # (len(n), R, 3)
    event_means: np.ndarray
    clamped: bool


def meanfield_error(
    cfg: IbmConfig,
    x0: IbmState,
    n_values: Sequence[int],
    n_replicas: int,
    horizon: float,
    master_seed: int,
    *,
    report_points: int = 26,
    limit_steps: int = 400,
) -> MeanFieldResult:
    """Sup-over-time distance between the chain's ensemble mean curves of
    (j, a, e) and the mean-field system's, for each population size.

    The limit curves are Monte Carlo means of the production scheme run on
    the mapped parameter set with the same replica count.  The initial
    fractions must be multiples of 1/n for every requested n.
    """
    n_values = list(n_values)
    if n_values != sorted(n_values) or min(n_values) < 2:
        raise ParameterError("population sizes must be increasing and >= 2")
    report_times = np.linspace(0.0, horizon, report_points)

    limit_params = meanfield_limit_params(cfg)
    grid = GridSpec(horizon, limit_steps)
    ok, _ = validate_dt(limit_params, grid.dt)
    if not ok or grid.dt >= 0.5:
        raise ParameterError("limit-solver grid violates the step-size bounds")
    report_idx = np.clip(np.round(report_times / grid.dt).astype(int), 0, grid.n_steps)
    x0_limit = StateVec(J=x0.j, A=x0.a, E=x0.e, P=cfg.fixed_price)
    limit = simulate_batch(
        limit_params,
        x0_limit,
        grid,
        master_seed,
        list(range(n_replicas)),
        report_indices=report_idx,
    )
    limit_states = limit.snapshots[:, :, :3]
    limit_means = limit_states.mean(axis=0)
    limit_vars = limit_states.var(axis=0, ddof=1)
    limit_se = limit_states.std(axis=0, ddof=1) / math.sqrt(n_replicas)

    mean_gaps = np.empty((len(n_values), 3))
    gap_ses = np.empty((len(n_values), 3))
    var_gaps = np.empty((len(n_values), 3))
    ibm_means = np.empty((len(n_values), report_points, 3))
    event_means = np.empty(len(n_values))
    clamped = False

    for k, n in enumerate(n_values):
        cfg_n = IbmConfig(
            n=n,
            gamma=cfg.gamma,
            params=cfg.params,
            price=cfg.price,
            time_rescale=cfg.time_rescale,
        )
        batch = simulate_ibm_batch(
            cfg_n,
            x0,
            horizon,
            n_replicas,
            master_seed + 1000 * (k + 1),
            report_times=report_times,
        )
        clamped = clamped or batch.clamped
        means = batch.states.mean(axis=0)
        variances = batch.states.var(axis=0, ddof=1)
        ses = batch.states.std(axis=0, ddof=1) / math.sqrt(n_replicas)
        gaps = np.abs(means - limit_means)
        idx = gaps.argmax(axis=0)
        mean_gaps[k] = gaps[idx, np.arange(3)]
        gap_ses[k] = np.sqrt(ses[idx, np.arange(3)] ** 2 + limit_se[idx, np.arange(3)] ** 2)
        var_gaps[k] = np.abs(variances - limit_vars).max(axis=0)
        ibm_means[k] = means
        event_means[k] = float(batch.event_counts.mean())

    return MeanFieldResult(
        n_values=np.asarray(n_values),
        mean_gaps=mean_gaps,
        mean_gap_ses=gap_ses,
        var_gaps=var_gaps,
        report_times=report_times,
        limit_means=limit_means,
        ibm_means=ibm_means,
        event_means=event_means,
        clamped=clamped,
    )

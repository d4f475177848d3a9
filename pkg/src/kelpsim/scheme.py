"""Time discretization of the coupled system.

The production stepper multiplies the frozen-drift biomass state by a
compensated Gaussian exponential (keeping it non-negative between pulses,
provided the step satisfies the positivity bound on the loss rates),
applies at most one pulse per cell with a mark shared by both populations,
advances the compliance fraction by a clamped Euler step, and moves the
exogenous price by its exact transition.

A truncated Euler reference stepper for the safe-region companion dynamics
is included for validation, plus a plain Euler stepper it must coincide
with inside the safe region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import noise as noise_mod
from .model import (
    DomainError,
    JumpParams,
    ModelParams,
    ParameterError,
    PriceParams,
    StateVec,
    clamp_below_cap,
    compliance_rates,
    cutoff,
    jump_phi_gain,
    kappa_sup,
    loss_rates,
    params_hash,
    recruitment,
)
from .noise import JumpEvent, PathNoise, SeedSpec

__all__ = [
    "GridSpec",
    "build_grid",
    "validate_dt",
    "PathRecord",
    "step_biomass",
    "step_compliance",
    "step_price",
    "step_truncated",
    "step_euler",
    "simulate_path",
    "simulate_batch",
    "BatchResult",
    "write_path_record",
    "read_path_record",
]

_EXP_ARG_MAX = 700.0  # exp() saturation guard for extreme Gaussian draws


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid on [0, horizon] with n_steps cells."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.horizon <= 0 or self.n_steps < 1:
            raise ParameterError("grid needs horizon > 0 and n_steps >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def eta(self, t: float) -> float:
        """Last grid point strictly before t."""
        k = math.ceil(t / self.dt) - 1
        return max(k, 0) * self.dt

    def delta(self, t: float) -> float:
        return t - self.eta(t)


def validate_dt(params: ModelParams, dt: float) -> tuple[bool, float]:
    """Positivity bound on the step: 1 - sup(loss rate) * dt must be >= 0.
    Returns (ok, slack)."""
    if dt <= 0:
        raise ParameterError("dt must be > 0")
    slack = 1.0 - kappa_sup(params) * dt
    return slack >= 0.0, slack


def build_grid(params: ModelParams, horizon: float, n_steps: int) -> GridSpec:
    """Grid constructor that refuses steps violating the positivity bound
    or the compliance clamp band (dt must stay below 1/2)."""
    grid = GridSpec(horizon, n_steps)
    ok, slack = validate_dt(params, grid.dt)
    if not ok:
        raise ParameterError(
            f"dt={grid.dt:.6g} violates the positivity bound (slack {slack:.6g}); "
            "increase n_steps"
        )
    if grid.dt >= 0.5:
        raise ParameterError("dt must be < 0.5 so the compliance clamp band is non-empty")
    return grid


@dataclass
class PathRecord:
    """One discretized trajectory: states on the grid, the pulses that were
    applied, and the seed provenance needed to replay it."""

    grid: GridSpec
    states: np.ndarray  # (n_steps + 1, 4) columns J, A, E, P
    jumps: tuple[JumpEvent, ...]
    seed: SeedSpec
    scheme_tag: str
    params_hash: str
    dropped_jumps: int = 0

    def state_at(self, k: int) -> StateVec:
        j, a, e, p = self.states[k]
        return StateVec(J=float(j), A=float(a), E=float(e), P=float(p))


# ---------------------------------------------------------------------------
# single-cell updates (verbatim transcriptions, vector-capable)


def _gauss_exp(sigma: float, dt, dw):
    arg = -0.5 * sigma * sigma * np.asarray(dt) + sigma * np.asarray(dw)
    return np.exp(np.minimum(arg, _EXP_ARG_MAX))


def step_biomass(prev, dt, dw, jump, params: ModelParams):
    """Advance (J, A) over one cell from the frozen state ``prev``
    = (J, A, E) at the cell start, with Brownian increments ``dw``
    = (dw_j, dw_a) and an optional first pulse shared by both populations.

    The frozen drift (including the recruitment forcing) is damped by the
    compensated Gaussian exponential; the pulse size is evaluated at the
    cell-start biomass.
    """
    j, a, e = prev
    dw_j, dw_a = dw
    k_j, k_a = loss_rates(e, params.eco)
    rec = recruitment(j, a, e, params.eco)
    e_j = _gauss_exp(params.eco.sigma_j, dt, dw_j)
    e_a = _gauss_exp(params.eco.sigma_a, dt, dw_a)
    j_new = (j * (1.0 - dt * k_j) + dt * rec * a) * e_j
    a_new = (a * (1.0 - dt * k_a) + dt * params.eco.rho_a * j) * e_a
    if jump is not None:
        from .model import jump_phi

        j_new = j_new + jump_phi("J", j, jump.mark, params.jumps)
        a_new = a_new + jump_phi("A", a, jump.mark, params.jumps)
    return j_new, a_new


def step_compliance(prev, dt, dw_e, params: ModelParams):
    """Clamped Euler update of the compliance fraction; the switching rates
    are evaluated on the full frozen state ``prev`` = (J, A, E, P)."""
    j, a, e, p = prev
    b0, b1 = compliance_rates((j, a, e, p), params.compliance, params.eco)
    drift = b1 * (1.0 - e) - b0 * e
    diff = params.compliance.sigma_e * np.sqrt(np.maximum(e * (1.0 - e), 0.0))
    return cutoff(dt, e + drift * dt + diff * dw_e)


def step_price(p, dt, dw_p, pp: PriceParams):
    """Exact-in-law price transition for the configured price kind."""
    if pp.kind == "constant":
        return p
    if pp.kind == "geometric-brownian":
        return p * _gauss_exp(pp.sigma_p, dt, dw_p) * np.exp(pp.mu_rate * dt)
    # exponential Ornstein-Uhlenbeck on the log price, exact transition
    decay = math.exp(-pp.kappa_p * dt)
    if pp.kappa_p > 0:
        var = (1.0 - decay * decay) / (2.0 * pp.kappa_p)
    else:
        var = dt
    z = np.asarray(dw_p) / math.sqrt(dt)
    pa = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        logp = np.log(pa)
    out = np.where(
        pa > 0,
        np.exp(
            math.log(pp.theta)
            + (logp - math.log(pp.theta)) * decay
            + pp.sigma_p * math.sqrt(var) * z
        ),
        0.0,
    )
    return float(out) if np.ndim(p) == 0 else out


def step_truncated(delta: float, state, dt, dw, params: ModelParams, jump=None):
    """Euler-Maruyama step of the safe-region companion dynamics: biomass
    drift arguments clamped to [0, 1/delta], the compliance factors clamped
    to [delta, 1-delta] (diffusion included), the rest untouched."""
    if not 0.0 < delta < 0.5:
        raise ParameterError("delta must be in (0, 1/2)")
    j, a, e, p = state
    dw_j, dw_a, dw_e, dw_p = dw
    cap = 1.0 / delta
    k_j, k_a = loss_rates(e, params.eco)
    rec = recruitment(np.maximum(j, 0.0), np.maximum(a, 0.0), e, params.eco)
    j_new = j + (rec * clamp_below_cap(a, cap) - k_j * clamp_below_cap(j, cap)) * dt
    j_new = j_new + params.eco.sigma_j * j * dw_j
    a_new = a + (params.eco.rho_a * j - k_a * clamp_below_cap(a, cap)) * dt
    a_new = a_new + params.eco.sigma_a * a * dw_a
    b0, b1 = compliance_rates((j, a, e, p), params.compliance, params.eco)
    ec = cutoff(delta, e)
    e_new = e + (b1 * (1.0 - ec) - b0 * ec) * dt
    e_new = e_new + params.compliance.sigma_e * np.sqrt(ec * (1.0 - ec)) * dw_e
    p_new = p + params.price.drift(p) * dt + params.price.diffusion(p) * dw_p
    if jump is not None:
        from .model import jump_phi

        j_new = j_new + jump_phi("J", j, jump.mark, params.jumps)
        a_new = a_new + jump_phi("A", a, jump.mark, params.jumps)
    return j_new, a_new, e_new, p_new


def step_euler(state, dt, dw, params: ModelParams, jump=None):
    """Plain Euler-Maruyama step of the untruncated system (reference for
    the safe-region agreement check; not positivity-preserving)."""
    j, a, e, p = state
    dw_j, dw_a, dw_e, dw_p = dw
    k_j, k_a = loss_rates(e, params.eco)
    rec = recruitment(np.maximum(j, 0.0), np.maximum(a, 0.0), e, params.eco)
    j_new = j + (rec * a - k_j * j) * dt + params.eco.sigma_j * j * dw_j
    a_new = a + (params.eco.rho_a * j - k_a * a) * dt + params.eco.sigma_a * a * dw_a
    b0, b1 = compliance_rates((j, a, e, p), params.compliance, params.eco)
    e_new = e + (b1 * (1.0 - e) - b0 * e) * dt
    e_new = e_new + params.compliance.sigma_e * np.sqrt(np.maximum(e * (1.0 - e), 0.0)) * dw_e
    p_new = p + params.price.drift(p) * dt + params.price.diffusion(p) * dw_p
    if jump is not None:
        from .model import jump_phi

        j_new = j_new + jump_phi("J", j, jump.mark, params.jumps)
        a_new = a_new + jump_phi("A", a, jump.mark, params.jumps)
    return j_new, a_new, e_new, p_new


# ---------------------------------------------------------------------------
# batched trajectory engine


@dataclass
class BatchResult:
    """Vectorized output of a batch of trajectories."""

    trajectory_indices: np.ndarray
    report_times: np.ndarray
    snapshots: np.ndarray  # (B, R, 4)
    final_states: np.ndarray  # (B, 4)
    min_j: np.ndarray
    min_a: np.ndarray
    min_e: np.ndarray
    max_e: np.ndarray
    min_biomass: np.ndarray
    jump_counts: np.ndarray
    dropped_jumps: np.ndarray
    records: list[PathRecord] = field(default_factory=list)


def _resolve_schedule(params, schedule, n_steps):
    """Normalize a parameter schedule to [(start_step, params), ...]."""
    if not schedule:
        return [(0, params)]
    out = sorted(schedule, key=lambda sp: sp[0])
    if out[0][0] != 0:
        out.insert(0, (0, params))
    return [(s, p) for s, p in out if s < n_steps]


def simulate_batch(
    params: ModelParams,
    x0: StateVec,
    grid: GridSpec,
    master_seed: int,
    trajectory_indices: Sequence[int],
    *,
    schedule=None,
    report_indices: Optional[np.ndarray] = None,
    full_record_count: int = 0,
    noises: Optional[Sequence[PathNoise]] = None,
) -> BatchResult:
    """Simulate a batch of independent trajectories with the production
    scheme, vectorized across the batch.

    Per-trajectory noise is derived solely from (master seed, trajectory
    index), so results do not depend on how trajectories are batched.
    ``noises`` overrides the derived noise (used by the coupled-refinement
    harness).  ``schedule`` switches parameter sets at given step indices
    (all phases must respect the positivity bound of the strictest one).
    """
    x0.require_valid()
    idx = np.asarray(list(trajectory_indices), dtype=np.int64)
    B, N, dt = len(idx), grid.n_steps, grid.dt
    phases = _resolve_schedule(params, schedule, N)
    for _, ph in phases:
        ok, slack = validate_dt(ph, dt)
        if not ok:
            raise ParameterError(f"dt={dt:.6g} violates positivity (slack {slack:.6g})")
    report_idx = (
        np.arange(N + 1) if report_indices is None else np.asarray(report_indices, dtype=np.int64)
    )

    if noises is None:
        noises = [
            noise_mod.path_noise(master_seed, int(i), dt, N, params.jumps.lam, params.jumps.marks)
            for i in idx
        ]
    else:
        noises = list(noises)
        if len(noises) != B:
            raise ParameterError("one PathNoise per trajectory required")

    dw = {tag: np.stack([nz.dw[tag] for nz in noises]) for tag in ("J", "A", "E", "P")}
    fired = np.zeros((B, N), dtype=bool)
    mark_idx = np.zeros((B, N), dtype=np.int64)
    dropped = np.zeros(B, dtype=np.int64)
    for b, nz in enumerate(noises):
        f, m, _, d = noise_mod.cell_jumps(nz.events, dt, N, params.jumps.marks)
        fired[b], mark_idx[b], dropped[b] = f, m, d

    gains_j = params.jumps.gains("J")
    gains_a = params.jumps.gains("A")

    j = np.full(B, float(x0.J))
    a = np.full(B, float(x0.A))
    e = np.full(B, float(x0.E))
    p = np.full(B, float(x0.P))

    n_report = len(report_idx)
    snapshots = np.empty((B, n_report, 4))
    rpt_cursor = 0
    if rpt_cursor < n_report and report_idx[rpt_cursor] == 0:
        snapshots[:, rpt_cursor, 0], snapshots[:, rpt_cursor, 1] = j, a
        snapshots[:, rpt_cursor, 2], snapshots[:, rpt_cursor, 3] = e, p
        rpt_cursor += 1

    keep_full = min(full_record_count, B)
    full_states = np.empty((keep_full, N + 1, 4)) if keep_full else None
    if keep_full:
        full_states[:, 0] = np.stack([j[:keep_full], a[:keep_full], e[:keep_full], p[:keep_full]], axis=1)

    min_j = j.copy()
    min_a = a.copy()
    min_e = e.copy()
    max_e = e.copy()
    min_bio = j + a

    phase_ptr = 0
    current = phases[0][1]
    for k in range(N):
        while phase_ptr + 1 < len(phases) and phases[phase_ptr + 1][0] == k:
            phase_ptr += 1
            current = phases[phase_ptr][1]
        eco, cp, jp, pp = current.eco, current.compliance, current.jumps, current.price

        k_j, k_a = loss_rates(e, eco, p if (eco.f_j.price_gated or eco.f_a.price_gated) else None)
        rec = recruitment(j, a, e, eco)
        e_j = _gauss_exp(eco.sigma_j, dt, dw["J"][:, k])
        e_a = _gauss_exp(eco.sigma_a, dt, dw["A"][:, k])
        j_new = (j * (1.0 - dt * k_j) + dt * rec * a) * e_j
        a_new = (a * (1.0 - dt * k_a) + dt * eco.rho_a * j) * e_a

        f = fired[:, k]
        if f.any():
            g_j = gains_j[mark_idx[:, k]]
            g_a = gains_a[mark_idx[:, k]]
            j_new = j_new + np.where(f, jump_phi_gain(j, g_j, jp), 0.0)
            a_new = a_new + np.where(f, jump_phi_gain(a, g_a, jp), 0.0)

        b0, b1 = compliance_rates((j, a, e, p), cp, eco)
        drift_e = b1 * (1.0 - e) - b0 * e
        diff_e = cp.sigma_e * np.sqrt(np.maximum(e * (1.0 - e), 0.0))
        e_new = cutoff(dt, e + drift_e * dt + diff_e * dw["E"][:, k])

        p_new = step_price(p, dt, dw["P"][:, k], pp)

        j, a, e, p = j_new, a_new, e_new, p_new

        np.minimum(min_j, j, out=min_j)
        np.minimum(min_a, a, out=min_a)
        np.minimum(min_e, e, out=min_e)
        np.maximum(max_e, e, out=max_e)
        np.minimum(min_bio, j + a, out=min_bio)

        if keep_full:
            full_states[:, k + 1, 0] = j[:keep_full]
            full_states[:, k + 1, 1] = a[:keep_full]
            full_states[:, k + 1, 2] = e[:keep_full]
            full_states[:, k + 1, 3] = p[:keep_full]
        if rpt_cursor < n_report and report_idx[rpt_cursor] == k + 1:
            snapshots[:, rpt_cursor, 0], snapshots[:, rpt_cursor, 1] = j, a
            snapshots[:, rpt_cursor, 2], snapshots[:, rpt_cursor, 3] = e, p
            rpt_cursor += 1

    records = []
    phash = params_hash(params)
    for b in range(keep_full):
        applied = tuple(
            JumpEvent(time=(kk + 1) * dt, mark=params.jumps.marks.values[mark_idx[b, kk]])
            for kk in range(N)
            if fired[b, kk]
        )
        records.append(
            PathRecord(
                grid=grid,
                states=full_states[b].copy(),
                jumps=applied,
                seed=SeedSpec(master_seed, int(idx[b])),
                scheme_tag="exponential",
                params_hash=phash,
                dropped_jumps=int(dropped[b]),
            )
        )

    return BatchResult(
        trajectory_indices=idx,
        report_times=report_idx * dt,
        snapshots=snapshots,
        final_states=np.stack([j, a, e, p], axis=1),
        min_j=min_j,
        min_a=min_a,
        min_e=min_e,
        max_e=max_e,
        min_biomass=min_bio,
        jump_counts=fired.sum(axis=1),
        dropped_jumps=dropped,
        records=records,
    )


def simulate_path(
    params: ModelParams,
    x0: StateVec,
    grid: GridSpec,
    seed: SeedSpec,
    *,
    schedule=None,
) -> PathRecord:
    """One full trajectory of the production scheme, deterministic in the
    seed.  Refuses invalid initial states, steps violating the positivity
    bound, and parameter sets failing the structural validity report."""
    from .model import validate_params

    report = validate_params(params)
    if not report.passed:
        raise ParameterError("parameter validation failed:\n" + report.format())
    res = simulate_batch(
        params,
        x0,
        grid,
        seed.master_seed,
        [seed.trajectory_index],
        schedule=schedule,
        full_record_count=1,
    )
    return res.records[0]


# ---------------------------------------------------------------------------
# trajectory persistence


def write_path_record(record: PathRecord, fh) -> None:
    """Delimited-text trajectory file: '#'-prefixed key=value header, one
    row per grid point (t J A E P), then the applied pulse block."""
    own = isinstance(fh, str)
    f = open(fh, "w") if own else fh
    try:
        f.write(f"# master_seed={record.seed.master_seed}\n")
        f.write(f"# trajectory_index={record.seed.trajectory_index}\n")
        f.write(f"# dt={record.grid.dt!r}\n")
        f.write(f"# horizon={record.grid.horizon!r}\n")
        f.write(f"# n_steps={record.grid.n_steps}\n")
        f.write(f"# scheme_tag={record.scheme_tag}\n")
        f.write(f"# params_hash={record.params_hash}\n")
        f.write(f"# dropped_jumps={record.dropped_jumps}\n")
        f.write("t\tJ\tA\tE\tP\n")
        for k, t in enumerate(record.grid.times()):
            j, a, e, p = (float(v) for v in record.states[k])
            f.write(f"{float(t)!r}\t{j!r}\t{a!r}\t{e!r}\t{p!r}\n")
        f.write("# jumps\n")
        f.write("t\tmark\n")
        for ev in record.jumps:
            f.write(f"{float(ev.time)!r}\t{float(ev.mark)!r}\n")
    finally:
        if own:
            f.close()


def read_path_record(fh) -> PathRecord:
    own = isinstance(fh, str)
    f = open(fh, "r") if own else fh
    try:
        header: dict[str, str] = {}
        rows: list[list[float]] = []
        jumps: list[JumpEvent] = []
        section = "states"
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body == "jumps":
                    section = "jumps"
                elif "=" in body:
                    key, val = body.split("=", 1)
                    header[key.strip()] = val.strip()
                continue
            if line[0].isalpha() or line.startswith("t\t"):
                continue  # column header
            vals = [float(v) for v in line.split("\t")]
            if section == "states":
                rows.append(vals[1:])
            else:
                jumps.append(JumpEvent(time=vals[0], mark=vals[1]))
        grid = GridSpec(float(header["horizon"]), int(header["n_steps"]))
        return PathRecord(
            grid=grid,
            states=np.asarray(rows),
            jumps=tuple(jumps),
            seed=SeedSpec(int(header["master_seed"]), int(header["trajectory_index"])),
            scheme_tag=header["scheme_tag"],
            params_hash=header["params_hash"],
            dropped_jumps=int(header.get("dropped_jumps", "0")),
        )
    finally:
        if own:
            f.close()

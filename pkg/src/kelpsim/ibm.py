"""Exact event-driven simulation of the n-agent harvester/biomass Markov
chain on the complete graph.

Six channels: juvenile maturation, adult reproduction, adult death,
juvenile death, and the two opinion-flip moves of the voter dynamics with
their state-dependent mutation corrections.  The chain can run in the raw
or in the time-rescaled clock (all rates multiplied by n), in which the
scaled process approaches the mean-field system as n grows.

The maturation channel is separate from juvenile death, so the composite
juvenile loss rate of the macroscopic system equals maturation plus the
death channel used here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import (
    ModelParams,
    ParameterError,
    compliance_rates,
    loss_rates,
    recruitment,
)
from .noise import SeedSpec, stream

__all__ = [
    "IbmConfig",
    "IbmState",
    "EVENT_TAGS",
    "event_rates",
    "mutation_clamped",
    "gillespie_step",
    "simulate_ibm",
    "IbmPath",
    "simulate_ibm_batch",
    "IbmBatchResult",
    "write_ibm_path",
]

EVENT_TAGS = (
    "maturation",
    "birth",
    "adult-death",
    "juvenile-death",
    "comply",
    "defect",
)

# channel moves in biomass units / complier counts: (dJ, dA, dE)
_MOVES = np.array(
    [
        [-1, 1, 0],
        [1, 0, 0],
        [0, -1, 0],
        [-1, 0, 0],
        [0, 0, 1],
        [0, 0, -1],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class IbmConfig:
    n: int
    gamma: float
    params: ModelParams
    price: Optional[float] = None  # price fed to the switching rates
    time_rescale: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError("need at least two agents")
        if self.gamma < 0:
            raise ParameterError("resampling rate must be >= 0")

    @property
    def fixed_price(self) -> float:
        return self.params.price.p0 if self.price is None else self.price


@dataclass(frozen=True)
class IbmState:
    """Scaled state: biomass unit counts over n and the complier fraction."""

    j: float
    a: float
    e: float

    def counts(self, n: int) -> tuple[int, int, int]:
        jc, ac, ec = round(self.j * n), round(self.a * n), round(self.e * n)
        for name, c, v in (("j", jc, self.j), ("a", ac, self.a), ("e", ec, self.e)):
            if c < 0 or abs(c - v * n) > 1e-9:
                raise ParameterError(f"{name}={v} is not a multiple of 1/n")
        if ec > n:
            raise ParameterError("complier count cannot exceed n")
        return jc, ac, ec

    @classmethod
    def from_counts(cls, jc: int, ac: int, ec: int, n: int) -> "IbmState":
        return cls(j=jc / n, a=ac / n, e=ec / n)


def _rates_from_counts(jc, ac, ec, cfg: IbmConfig):
    """Six channel rates from integer counts; vector-capable.

    Returns (rates, clamped) where ``clamped`` flags mutation probabilities
    that had to be cut at 1 (possible for tiny n and large switch rates).
    """
    n = cfg.n
    eco, cp = cfg.params.eco, cfg.params.compliance
    j = np.asarray(jc, dtype=float) / n
    a = np.asarray(ac, dtype=float) / n
    e = np.asarray(ec, dtype=float) / n

    k_j, k_a = loss_rates(e, eco)
    death_j = np.maximum(k_j - eco.rho_a, 0.0)  # composite loss minus maturation
    rho_j = recruitment(j, a, e, eco)
    b0, b1 = compliance_rates((j, a, e, cfg.fixed_price), cp, eco)
    p0 = np.asarray(b0, dtype=float) / n
    p1 = np.asarray(b1, dtype=float) / n
    clamped = bool(np.any(p0 > 1.0) or np.any(p1 > 1.0))
    p0 = np.minimum(p0, 1.0)
    p1 = np.minimum(p1, 1.0)

    nc = np.asarray(n - np.asarray(ec), dtype=float)  # non-complier count
    ecf = np.asarray(ec, dtype=float)
    up = cfg.gamma * nc * (ecf * (1.0 - p0) + np.maximum(nc - 1.0, 0.0) * p1) / (n - 1)
    down = cfg.gamma * ecf * (nc * (1.0 - p1) + np.maximum(ecf - 1.0, 0.0) * p0) / (n - 1)

    rates = np.stack(
        [
            j * eco.rho_a,
            a * rho_j,
            a * k_a,
            j * death_j,
            up,
            down,
        ],
        axis=-1,
    )
    if cfg.time_rescale:
        rates = rates * n
    return rates, clamped


def event_rates(state: IbmState, cfg: IbmConfig) -> np.ndarray:
    """Rates of the six channels at a state, in the configured clock."""
    jc, ac, ec = state.counts(cfg.n)
    rates, _ = _rates_from_counts(jc, ac, ec, cfg)
    return rates


def mutation_clamped(state: IbmState, cfg: IbmConfig) -> bool:
    jc, ac, ec = state.counts(cfg.n)
    _, clamped = _rates_from_counts(jc, ac, ec, cfg)
    return clamped


def gillespie_step(state: IbmState, cfg: IbmConfig, rng):
    """One exact step: exponential holding time over the total rate and a
    proportional channel choice.  Returns None when every rate vanishes
    (absorbed state, no time advance)."""
    jc, ac, ec = state.counts(cfg.n)
    rates, _ = _rates_from_counts(jc, ac, ec, cfg)
    total = float(rates.sum())
    if total <= 0.0:
        return None
    hold = rng.exponential(1.0 / total)
    u = rng.random() * total
    channel = int(np.searchsorted(np.cumsum(rates), u, side="right"))
    channel = min(channel, 5)
    dj, da, de = _MOVES[channel]
    new = IbmState.from_counts(jc + dj, ac + da, ec + de, cfg.n)
    return hold, new, EVENT_TAGS[channel]


@dataclass
class IbmPath:
    """One replica: sampled grid states plus the full event log."""

    grid_times: np.ndarray
    states: np.ndarray  # (R, 3) scaled (j, a, e)
    event_times: np.ndarray
    event_channels: np.ndarray
    event_count: int
    clamped: bool
    truncated: bool


def simulate_ibm(
    cfg: IbmConfig,
    x0: IbmState,
    horizon: float,
    seed: SeedSpec,
    *,
    report_times: Optional[Sequence[float]] = None,
    max_events: int = 10**9,
    log_events: bool = True,
) -> IbmPath:
    """Exact trajectory of one replica up to the horizon, sampled onto a
    reporting grid.  Aborts with partial output (``truncated`` set) if the
    event budget is exhausted."""
    rng = stream(SeedSpec(seed.master_seed, seed.trajectory_index, "jumps"))
    jc, ac, ec = x0.counts(cfg.n)
    grid = (
        np.linspace(0.0, horizon, 51)
        if report_times is None
        else np.asarray(report_times, dtype=float)
    )
    out = np.empty((len(grid), 3))
    cursor = 0
    t = 0.0
    ev_t: list[float] = []
    ev_c: list[int] = []
    count = 0
    clamped = False
    truncated = False

    while True:
        while cursor < len(grid) and grid[cursor] <= t:
            out[cursor] = (jc / cfg.n, ac / cfg.n, ec / cfg.n)
            cursor += 1
        if cursor >= len(grid):
            break
        rates, cl = _rates_from_counts(jc, ac, ec, cfg)
        clamped = clamped or cl
        total = float(rates.sum())
        if total <= 0.0:
            t = horizon
            continue
        t_next = t + rng.exponential(1.0 / total)
        if count >= max_events:
            truncated = True
            t = horizon
            continue
        while cursor < len(grid) and grid[cursor] <= t_next:
            out[cursor] = (jc / cfg.n, ac / cfg.n, ec / cfg.n)
            cursor += 1
        if cursor >= len(grid):
            break
        t = t_next
        u = rng.random() * total
        channel = min(int(np.searchsorted(np.cumsum(rates), u, side="right")), 5)
        dj, da, de = _MOVES[channel]
        jc, ac, ec = jc + dj, ac + da, ec + de
        count += 1
        if log_events:
            ev_t.append(t)
            ev_c.append(channel)

    return IbmPath(
        grid_times=grid,
        states=out,
        event_times=np.asarray(ev_t),
        event_channels=np.asarray(ev_c, dtype=np.int64),
        event_count=count,
        clamped=clamped,
        truncated=truncated,
    )


@dataclass
class IbmBatchResult:
    grid_times: np.ndarray
    states: np.ndarray  # (M, R, 3)
    event_counts: np.ndarray
    clamped: bool
    truncated: bool


def simulate_ibm_batch(
    cfg: IbmConfig,
    x0: IbmState,
    horizon: float,
    n_replicas: int,
    master_seed: int,
    *,
    report_times: Optional[Sequence[float]] = None,
    max_rounds: int = 50_000_000,
) -> IbmBatchResult:
    """Many replicas advanced one event per vectorized round.

    Replicas are independent, so the batch draws come from a single
    batch-level stream; results are reproducible for a fixed
    (master seed, replica count) and agree in law with per-replica runs.
    """
    rng = stream(SeedSpec(master_seed, 0, "jumps"))
    grid = (
        np.linspace(0.0, horizon, 51)
        if report_times is None
        else np.asarray(report_times, dtype=float)
    )
    R = len(grid)
    jc0, ac0, ec0 = x0.counts(cfg.n)
    jc = np.full(n_replicas, jc0, dtype=np.int64)
    ac = np.full(n_replicas, ac0, dtype=np.int64)
    ec = np.full(n_replicas, ec0, dtype=np.int64)
    t = np.zeros(n_replicas)
    cursor = np.zeros(n_replicas, dtype=np.int64)
    out = np.empty((n_replicas, R, 3))
    counts = np.zeros(n_replicas, dtype=np.int64)
    clamped = False
    truncated = False

    def flush(upto):
        # record grid points reached at or before each replica's clock
        nonlocal cursor
        while True:
            active = cursor < R
            if not active.any():
                return
            due = active & (grid[np.minimum(cursor, R - 1)] <= upto)
            if not due.any():
                return
            rows = np.nonzero(due)[0]
            out[rows, cursor[rows], 0] = jc[rows] / cfg.n
            out[rows, cursor[rows], 1] = ac[rows] / cfg.n
            out[rows, cursor[rows], 2] = ec[rows] / cfg.n
            cursor[rows] += 1

    rounds = 0
    while True:
        if not (cursor < R).any():
            break
        rates, cl = _rates_from_counts(jc, ac, ec, cfg)
        clamped = clamped or cl
        total = rates.sum(axis=1)
        live = (total > 0) & (cursor < R)
        if not live.any():
            flush(np.full(n_replicas, np.inf))
            break
        hold = np.full(n_replicas, np.inf)
        hold[live] = rng.exponential(1.0, size=int(live.sum())) / total[live]
        t_next = t + hold
        flush(t_next)
        if not (cursor < R).any():
            break
        u = rng.random(n_replicas) * np.maximum(total, 1e-300)
        cum = np.cumsum(rates, axis=1)
        channel = (cum < u[:, None]).sum(axis=1)
        channel = np.minimum(channel, 5)
        mv = _MOVES[channel]
        upd = live & (cursor < R)
        jc[upd] += mv[upd, 0]
        ac[upd] += mv[upd, 1]
        ec[upd] += mv[upd, 2]
        t[upd] = t_next[upd]
        counts[upd] += 1
        rounds += 1
        if rounds >= max_rounds:
            truncated = True
            flush(np.full(n_replicas, np.inf))
            break

    return IbmBatchResult(
        grid_times=grid,
        states=out,
        event_counts=counts,
        clamped=clamped,
        truncated=truncated,
    )


def write_ibm_path(path: IbmPath, cfg: IbmConfig, seed: SeedSpec, fh) -> None:
    """Persist one replica in the trajectory file format of the production
    scheme (price column frozen at the chain's fixed price) plus a
    cumulative event-count column."""
    from .model import params_hash

    own = isinstance(fh, str)
    f = open(fh, "w") if own else fh
    try:
        f.write(f"# master_seed={seed.master_seed}\n")
        f.write(f"# trajectory_index={seed.trajectory_index}\n")
        f.write(f"# n={cfg.n}\n")
        f.write(f"# gamma={cfg.gamma!r}\n")
        f.write(f"# time_rescale={'true' if cfg.time_rescale else 'false'}\n")
        f.write(f"# scheme_tag=ibm\n")
        f.write(f"# params_hash={params_hash(cfg.params)}\n")
        f.write(f"# event_count={path.event_count}\n")
        f.write("t\tJ\tA\tE\tP\tevents\n")
        cum = np.searchsorted(path.event_times, path.grid_times, side="right")
        for k, t in enumerate(path.grid_times):
            j, a, e = (float(v) for v in path.states[k])
            f.write(
                f"{float(t)!r}\t{j!r}\t{a!r}\t{e!r}\t{float(cfg.fixed_price)!r}\t{int(cum[k])}\n"
            )
    finally:
        if own:
            f.close()

"""Reproducible randomness: counter-based per-trajectory, per-component
streams, first-jump draws, global pulse-event lists, and Brownian-bridge
grid refinement for coupled convergence runs.

A stream is identified by (master seed, trajectory index, component tag,
refinement level).  Identical identifiers give bitwise-identical draws;
distinct identifiers give statistically independent streams, so ensembles
are order-independent and safe to generate in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .model import MarkDistribution, ParameterError

__all__ = [
    "COMPONENT_TAGS",
    "SeedSpec",
    "JumpEvent",
    "stream",
    "gaussian_increment",
    "first_jump_in_cell",
    "jump_events",
    "PathNoise",
    "path_noise",
    "refine_increments",
    "coarsen_increments",
    "cell_jumps",
]

COMPONENT_TAGS = ("J", "A", "E", "P", "jumps")
_COMPONENT_INDEX = {tag: i for i, tag in enumerate(COMPONENT_TAGS)}


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one random stream (or, with ``component_tag`` left None,
    the whole bundle of streams of one trajectory)."""

    master_seed: int
    trajectory_index: int
    component_tag: Optional[str] = None

    def __post_init__(self):
        if self.trajectory_index < 0:
            raise ParameterError("trajectory index must be >= 0")
        if self.component_tag is not None and self.component_tag not in COMPONENT_TAGS:
            raise ParameterError(f"unknown component tag {self.component_tag!r}")


@dataclass(frozen=True)
class JumpEvent:
    time: float
    mark: float


def stream(spec: SeedSpec, level: int = 0) -> Generator:
    """Counter-based generator for one (trajectory, component, level)."""
    if spec.component_tag is None:
        raise ParameterError("a stream needs a component tag")
    seq = SeedSequence(
        entropy=spec.master_seed,
        spawn_key=(spec.trajectory_index, _COMPONENT_INDEX[spec.component_tag], level),
    )
    return Generator(Philox(seq))


def _component_stream(master_seed, trajectory_index, tag, level=0) -> Generator:
    return stream(SeedSpec(master_seed, trajectory_index, tag), level)


def gaussian_increment(rng: Generator, dt: float) -> float:
    """One Brownian increment over a cell of length ``dt``."""
    if dt <= 0:
        raise ParameterError("dt must be > 0")
    return float(rng.standard_normal() * math.sqrt(dt))


def first_jump_in_cell(
    rng: Generator, lam: float, dt: float, marks: MarkDistribution
) -> Optional[JumpEvent]:
    """First pulse arrival inside a cell, or None.

    Draws a fresh exponential clock of rate ``lam``; by memorylessness this
    has the same law as the first arrival of a global Poisson stream.  The
    mark is drawn only when the clock fires, so only the first pulse per
    cell is ever reported.
    """
    if lam < 0:
        raise ParameterError("jump intensity must be >= 0")
    if dt <= 0:
        raise ParameterError("dt must be > 0")
    if lam == 0.0:
        return None
    tau = rng.exponential(1.0 / lam)
    if tau >= dt:
        return None
    return JumpEvent(time=tau, mark=marks.sample(rng))


def jump_events(
    rng: Generator, lam: float, marks: MarkDistribution, horizon: float
) -> tuple[JumpEvent, ...]:
    """All pulse arrivals on [0, horizon] as a Poisson stream with marks."""
    if lam <= 0.0:
        return ()
    events = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / lam)
        if t >= horizon:
            break
        events.append(JumpEvent(time=t, mark=marks.sample(rng)))
    return tuple(events)


@dataclass(frozen=True)
class PathNoise:
    """All randomness of one trajectory on one grid: Brownian increments
    per component plus the pulse-event list.  Refinement halves the grid
    while keeping the underlying Brownian paths and events identical."""

    master_seed: int
    trajectory_index: int
    dt: float
    n_steps: int
    level: int
    dw: dict[str, np.ndarray]
    events: tuple[JumpEvent, ...]

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps


def path_noise(
    master_seed: int,
    trajectory_index: int,
    dt: float,
    n_steps: int,
    lam: float,
    marks: MarkDistribution,
) -> PathNoise:
    """Base-level noise bundle for one trajectory."""
    if dt <= 0 or n_steps < 1:
        raise ParameterError("need dt > 0 and at least one step")
    sqdt = math.sqrt(dt)
    dw = {
        tag: _component_stream(master_seed, trajectory_index, tag).standard_normal(n_steps) * sqdt
        for tag in ("J", "A", "E", "P")
    }
    ev = jump_events(
        _component_stream(master_seed, trajectory_index, "jumps"),
        lam,
        marks,
        dt * n_steps,
    )
    return PathNoise(master_seed, trajectory_index, dt, n_steps, 0, dw, ev)


def refine_increments(noise: PathNoise) -> PathNoise:
    """Split every increment into two Brownian-bridge-consistent halves.

    The two children of each increment sum to their parent exactly and have
    the correct conditional law; pulse events keep their times and marks.
    """
    half = noise.dt / 2.0
    scale = math.sqrt(half) / math.sqrt(2.0)  # std of the bridge midpoint offset
    new_dw: dict[str, np.ndarray] = {}
    for tag, parent in noise.dw.items():
        rng = _component_stream(
            noise.master_seed, noise.trajectory_index, tag, level=noise.level + 1
        )
        xi = rng.standard_normal(noise.n_steps) * scale
        child1 = 0.5 * parent + xi
        child2 = parent - child1
        out = np.empty(2 * noise.n_steps)
        out[0::2] = child1
        out[1::2] = child2
        new_dw[tag] = out
    return PathNoise(
        noise.master_seed,
        noise.trajectory_index,
        half,
        2 * noise.n_steps,
        noise.level + 1,
        new_dw,
        noise.events,
    )


def coarsen_increments(noise: PathNoise) -> PathNoise:
    """Merge increment pairs back onto the twice-coarser grid."""
    if noise.n_steps % 2:
        raise ParameterError("cannot coarsen an odd number of steps")
    new_dw = {tag: w[0::2] + w[1::2] for tag, w in noise.dw.items()}
    return PathNoise(
        noise.master_seed,
        noise.trajectory_index,
        noise.dt * 2.0,
        noise.n_steps // 2,
        max(noise.level - 1, 0),
        new_dw,
        noise.events,
    )


def cell_jumps(
    events: Sequence[JumpEvent],
    dt: float,
    n_steps: int,
    marks: MarkDistribution,
):
    """Per-cell view of a pulse-event list: whether the cell fired, the mark
    index of its first pulse, and the within-cell offset.  Later pulses in
    an already-fired cell are dropped (the scheme applies the first only);
    the number of dropped pulses is returned for diagnostics.
    """
    fired = np.zeros(n_steps, dtype=bool)
    mark_idx = np.zeros(n_steps, dtype=np.int64)
    offset = np.zeros(n_steps)
    dropped = 0
    for ev in events:
        k = int(ev.time / dt)
        if k >= n_steps:
            k = n_steps - 1
        if fired[k]:
            dropped += 1
            continue
        fired[k] = True
        mark_idx[k] = marks.index_of(ev.mark)
        offset[k] = ev.time - k * dt
    return fired, mark_idx, offset, dropped

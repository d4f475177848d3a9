import math

import numpy as np
import pytest

from kelpsim.model import MarkDistribution, ParameterError
from kelpsim.noise import (
    JumpEvent,
    PathNoise,
    SeedSpec,
    cell_jumps,
    coarsen_increments,
    first_jump_in_cell,
    gaussian_increment,
    jump_events,
    path_noise,
    refine_increments,
    stream,
)

MARKS = MarkDistribution(values=(-1.0, 0.5, 2.0), probs=(0.5, 0.3, 0.2))


def test_identical_seed_spec_identical_stream():
    a = stream(SeedSpec(123, 5, "E")).standard_normal(100)
    b = stream(SeedSpec(123, 5, "E")).standard_normal(100)
    assert np.array_equal(a, b)


def test_distinct_components_give_distinct_streams():
    a = stream(SeedSpec(123, 5, "E")).standard_normal(100)
    b = stream(SeedSpec(123, 5, "P")).standard_normal(100)
    c = stream(SeedSpec(123, 6, "E")).standard_normal(100)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_requires_component_tag():
    with pytest.raises(ParameterError):
        stream(SeedSpec(1, 0))


def test_stream_cross_correlations_vanish():
    n = 10**5
    tol = 3.0 / math.sqrt(n)
    draws = {
        tag: stream(SeedSpec(99, 3, tag)).standard_normal(n)
        for tag in ("J", "A", "E", "P")
    }
    tags = list(draws)
    for i in range(len(tags)):
        for k in range(i + 1, len(tags)):
            corr = np.corrcoef(draws[tags[i]], draws[tags[k]])[0, 1]
            assert abs(corr) < tol


def test_gaussian_increment_rejects_bad_dt():
    rng = stream(SeedSpec(1, 0, "J"))
    with pytest.raises(ParameterError):
        gaussian_increment(rng, 0.0)


def test_gaussian_increment_scalar_calls_match_law():
    rng = stream(SeedSpec(11, 0, "J"))
    draws = np.array([gaussian_increment(rng, 0.25) for _ in range(5000)])
    se_mean = 0.5 / math.sqrt(draws.size)
    assert abs(draws.mean()) < 3 * se_mean


def test_gaussian_increment_moments_bulk():
    # CLT tolerances at one million draws, via the same stream machinery
    n = 10**6
    dt = 0.25
    draws = stream(SeedSpec(2024, 0, "J")).standard_normal(n) * math.sqrt(dt)
    assert abs(draws.mean()) < 3.0 * math.sqrt(dt) / math.sqrt(n)
    var = draws.var(ddof=1)
    se_var = dt * math.sqrt(2.0 / (n - 1))
    assert abs(var - dt) < 3 * se_var


def test_first_jump_zero_rate_never_fires():
    rng = stream(SeedSpec(5, 0, "jumps"))
    assert all(first_jump_in_cell(rng, 0.0, 0.1, MARKS) is None for _ in range(50))


def test_first_jump_frequency_matches_exponential_cdf():
    # lambda * dt = ln 2 so the per-cell firing probability is 1/2
    dt = 0.1
    lam = math.log(2.0) / dt
    rng = stream(SeedSpec(6, 0, "jumps"))
    n = 10**5
    fired = 0
    for _ in range(n):
        ev = first_jump_in_cell(rng, lam, dt, MARKS)
        if ev is not None:
            fired += 1
            assert 0.0 < ev.time <= dt
    se = math.sqrt(0.25 / n)
    assert abs(fired / n - 0.5) < 3 * se


def test_mark_distribution_goodness_of_fit():
    from scipy.stats import chi2

    rng = stream(SeedSpec(7, 0, "jumps"))
    n_events = 10**5
    counts = {v: 0 for v in MARKS.values}
    for _ in range(n_events):
        counts[MARKS.sample(rng)] += 1
    stat = sum(
        (counts[v] - p * n_events) ** 2 / (p * n_events)
        for v, p in zip(MARKS.values, MARKS.probs)
    )
    assert stat < chi2.ppf(0.99, df=len(MARKS.values) - 1)


def test_jump_events_sorted_in_support():
    rng = stream(SeedSpec(8, 0, "jumps"))
    events = jump_events(rng, 5.0, MARKS, 20.0)
    times = [ev.time for ev in events]
    assert times == sorted(times)
    assert all(0 < t < 20.0 for t in times)
    assert all(ev.mark in MARKS.values for ev in events)


# ---------------------------------------------------------------------------
# refinement


def test_refine_children_sum_to_parent():
    nz = path_noise(77, 2, 0.2, 32, 1.0, MARKS)
    fine = refine_increments(nz)
    for tag in ("J", "A", "E", "P"):
        gap = fine.dw[tag][0::2] + fine.dw[tag][1::2] - nz.dw[tag]
        assert np.max(np.abs(gap)) < 1e-15
    assert fine.dt == nz.dt / 2
    assert fine.events == nz.events


def test_refine_zero_parent_children_symmetric():
    base = path_noise(78, 0, 0.2, 4096, 0.0, MARKS)
    zero = PathNoise(
        base.master_seed,
        base.trajectory_index,
        base.dt,
        base.n_steps,
        base.level,
        {tag: np.zeros(base.n_steps) for tag in base.dw},
        (),
    )
    fine = refine_increments(zero)
    c1 = fine.dw["J"][0::2]
    c2 = fine.dw["J"][1::2]
    assert np.max(np.abs(c1 + c2)) < 1e-15  # +/- xi around a zero parent
    target = base.dt / 4.0
    var = c1.var(ddof=1)
    se = target * math.sqrt(2.0 / (c1.size - 1))
    assert abs(var - target) < 3 * se


def test_refine_twice_then_coarsen_returns_fine():
    nz = path_noise(79, 1, 0.4, 16, 2.0, MARKS)
    f1 = refine_increments(nz)
    f2 = refine_increments(f1)
    back = coarsen_increments(f2)
    for tag in ("J", "A", "E", "P"):
        assert np.max(np.abs(back.dw[tag] - f1.dw[tag])) < 1e-15
    twice = coarsen_increments(back)
    for tag in ("J", "A", "E", "P"):
        assert np.max(np.abs(twice.dw[tag] - nz.dw[tag])) < 1e-15


def test_cell_jumps_first_only_and_drop_count():
    events = (
        JumpEvent(time=0.05, mark=-1.0),
        JumpEvent(time=0.07, mark=0.5),  # same cell, dropped
        JumpEvent(time=0.35, mark=2.0),
    )
    fired, mark_idx, offset, dropped = cell_jumps(events, 0.1, 5, MARKS)
    assert fired.tolist() == [True, False, False, True, False]
    assert dropped == 1
    assert MARKS.values[mark_idx[0]] == -1.0
    assert MARKS.values[mark_idx[3]] == 2.0
    assert offset[0] == pytest.approx(0.05)
    assert offset[3] == pytest.approx(0.05)


def test_path_noise_deterministic():
    a = path_noise(101, 9, 0.1, 50, 2.0, MARKS)
    b = path_noise(101, 9, 0.1, 50, 2.0, MARKS)
    for tag in ("J", "A", "E", "P"):
        assert np.array_equal(a.dw[tag], b.dw[tag])
    assert a.events == b.events

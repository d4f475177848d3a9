import io
import math

import numpy as np
import pytest

from kelpsim.model import (
    ComplianceParams,
    EcologicalParams,
    JumpParams,
    MarkDistribution,
    ModelParams,
    ParameterError,
    PriceParams,
    RateFamily,
    StateVec,
    drift_vector,
)
from kelpsim.noise import JumpEvent, SeedSpec
from kelpsim.scheme import (
    GridSpec,
    build_grid,
    read_path_record,
    simulate_batch,
    simulate_path,
    step_biomass,
    step_compliance,
    step_euler,
    step_price,
    step_truncated,
    validate_dt,
    write_path_record,
)


def _params(kappa_scale=1.0, **kw):
    eco = EcologicalParams(
        r_j=RateFamily.constant(kw.get("r", 0.0)),
        carrying_capacity=kw.get("K", 100.0),
        rho_a=kw.get("rho_a", 0.4),
        m_j=kw.get("m_j", 0.1),
        m_a=kw.get("m_a", 0.1),
        f_j=RateFamily.constant(kw.get("f_j", 0.0)),
        f_a=RateFamily.constant(kw.get("f_a", 0.0)),
        sigma_j=kw.get("sigma_j", 0.0),
        sigma_a=kw.get("sigma_a", 0.0),
    )
    comp = ComplianceParams(
        beta0_bar=kw.get("b0", 0.0),
        beta1_bar=kw.get("b1", 0.0),
        tau_u=kw.get("tau", 0.0),
        sigma_e=kw.get("sigma_e", 0.0),
        eta_sig=0.05,
        p_min=50.0,
        p_max=150.0,
    )
    return ModelParams(
        eco=eco,
        compliance=comp,
        jumps=kw.get("jumps", JumpParams.none()),
        price=kw.get("price", PriceParams(kind="constant", p0=100.0)),
    )


def test_validate_dt_examples(quiet_params):
    ok, slack = validate_dt(quiet_params, 123.0)
    assert ok and slack == 1.0
    par = _params(rho_a=0.0, m_j=2.0, m_a=0.0)
    ok, slack = validate_dt(par, 0.6)
    assert not ok and slack == pytest.approx(-0.2)
    ok, slack = validate_dt(par, 0.5)
    assert ok and slack == pytest.approx(0.0)


def test_build_grid_refuses_bad_dt():
    par = _params(m_j=2.0)
    with pytest.raises(ParameterError):
        build_grid(par, 10.0, 10)
    with pytest.raises(ParameterError):
        build_grid(_params(), 10.0, 12)  # dt > 0.5 breaks the clamp band


def test_grid_eta_delta():
    g = GridSpec(1.0, 10)
    assert g.eta(0.25) == pytest.approx(0.2)
    assert g.delta(0.25) == pytest.approx(0.05)
    assert g.eta(0.2) == pytest.approx(0.1)  # strictly-before convention


# ---------------------------------------------------------------------------
# single-cell updates


def test_step_biomass_frozen_drift_example():
    # kappa_J = rho_a + f_j + m_j = 0.5; no noise, no recruitment, no jump
    par = _params(rho_a=0.4, m_j=0.1, m_a=0.0, r=0.0)
    j, a = step_biomass((10.0, 0.0, 0.5), 0.1, (0.0, 0.0), None, par)
    assert j == pytest.approx(9.5)
    assert a == pytest.approx(0.4)  # maturation forcing rho_a * J * dt


def test_step_biomass_zero_params_identity(quiet_params):
    j, a = step_biomass((3.0, 7.0, 0.2), 0.1, (0.0, 0.0), None, quiet_params)
    assert (j, a) == (pytest.approx(3.0), pytest.approx(7.0))


def test_step_biomass_worst_case_jump_stays_nonnegative():
    jp = JumpParams(
        lam=1.0,
        marks=MarkDistribution(values=(-1.0,), probs=(1.0,)),
        gain_adult=(-0.8,),
        gain_juvenile=(-0.8,),
        floor=1.0,
        margin=0.2,
        cap=100.0,
    )
    par = _params(jumps=jp, rho_a=0.0, m_j=0.0, m_a=0.0)
    ev = JumpEvent(time=0.05, mark=-1.0)
    j, a = step_biomass((100.0, 100.0, 0.5), 0.1, (0.0, 0.0), ev, par)
    assert j >= 0.0 and a >= 0.0
    assert j == pytest.approx(100.0 - 0.8 * 99.0)


def test_step_compliance_examples():
    par = _params(b0=0.0, b1=0.0)
    assert step_compliance((0.0, 0.0, 0.5, 100.0), 0.1, 0.0, par) == pytest.approx(0.5)
    par = _params(b0=0.0, b1=1.0)
    assert step_compliance((0.0, 0.0, 0.5, 100.0), 0.1, 0.0, par) == pytest.approx(0.55)
    par = _params(b0=0.0, b1=0.0, sigma_e=1.0)
    assert step_compliance((0.0, 0.0, 0.5, 100.0), 0.1, 50.0, par) == pytest.approx(0.9)


def test_step_price_examples():
    assert step_price(7.0, 0.5, 0.3, PriceParams(kind="constant", p0=7.0)) == 7.0
    gbm0 = PriceParams(kind="geometric-brownian", mu_rate=0.0, sigma_p=0.0, p0=1.0)
    assert step_price(55.0, 1.0, 0.0, gbm0) == pytest.approx(55.0)
    gbm = PriceParams(kind="geometric-brownian", mu_rate=0.04, sigma_p=0.0, p0=100.0)
    assert step_price(100.0, 1.0, 0.0, gbm) == pytest.approx(100.0 * math.exp(0.04))
    assert step_price(0.0, 1.0, 0.7, gbm) == 0.0


def test_step_price_gbm_matches_lognormal_moments():
    pp = PriceParams(kind="geometric-brownian", mu_rate=0.1, sigma_p=0.3, p0=50.0)
    rng = np.random.default_rng(3)
    n = 20000
    p = np.full(n, 50.0)
    dt = 0.25
    for _ in range(4):
        p = step_price(p, dt, rng.standard_normal(n) * math.sqrt(dt), pp)
    target = 50.0 * math.exp(0.1)
    se = p.std(ddof=1) / math.sqrt(n)
    assert abs(p.mean() - target) < 3 * se


def test_step_price_exp_ou_reverts_and_stays_positive():
    pp = PriceParams(
        kind="exponential-ornstein-uhlenbeck",
        sigma_p=0.2,
        theta=80.0,
        kappa_p=2.0,
        p0=10.0,
    )
    rng = np.random.default_rng(4)
    n = 20000
    p = np.full(n, 10.0)
    dt = 0.1
    for _ in range(200):
        p = step_price(p, dt, rng.standard_normal(n) * math.sqrt(dt), pp)
    assert np.all(p > 0)
    # stationary log price: N(log theta, sigma^2 / (2 kappa))
    target = math.log(80.0)
    se = np.log(p).std(ddof=1) / math.sqrt(n)
    assert abs(np.log(p).mean() - target) < 4 * se
    assert step_price(0.0, dt, 0.3, pp) == 0.0


# ---------------------------------------------------------------------------
# whole trajectories


def test_simulate_path_constant_when_everything_zero(quiet_params):
    grid = GridSpec(2.0, 20)
    rec = simulate_path(quiet_params, StateVec(J=4.0, A=5.0, E=0.5, P=1.0), grid, SeedSpec(1, 0))
    assert np.allclose(rec.states, rec.states[0])
    assert rec.jumps == ()


def test_simulate_path_deterministic_byte_for_byte(default_params, x0_mid):
    grid = build_grid(default_params, 4.0, 80)
    r1 = simulate_path(default_params, x0_mid, grid, SeedSpec(2026, 13))
    r2 = simulate_path(default_params, x0_mid, grid, SeedSpec(2026, 13))
    b1, b2 = io.StringIO(), io.StringIO()
    write_path_record(r1, b1)
    write_path_record(r2, b2)
    assert b1.getvalue() == b2.getvalue()


def test_simulate_path_refuses_invalid_params(x0_mid):
    bad = _params(sigma_e=2.0)  # H3 fails: baselines are zero
    grid = GridSpec(1.0, 10)
    with pytest.raises(ParameterError):
        simulate_path(bad, x0_mid, grid, SeedSpec(1, 0))


def test_simulate_path_refuses_invalid_x0(default_params):
    grid = build_grid(default_params, 1.0, 20)
    from kelpsim.model import DomainError

    with pytest.raises(DomainError):
        simulate_path(default_params, StateVec(J=-1.0, A=0.0, E=0.5, P=1.0), grid, SeedSpec(1, 0))


def test_noise_off_scheme_tracks_ode_at_first_order(x0_mid):
    from scipy.integrate import solve_ivp

    par = _params(
        r=2.0, rho_a=0.4, m_j=0.1, m_a=0.15, f_j=0.2, f_a=0.3,
        b0=0.4, b1=0.6, tau=0.5,
        price=PriceParams(kind="geometric-brownian", mu_rate=0.04, sigma_p=0.0, p0=100.0),
    )
    horizon = 5.0

    def rhs(t, y):
        return drift_vector((max(y[0], 0.0), max(y[1], 0.0), min(max(y[2], 0.0), 1.0), y[3]), par)

    ref = solve_ivp(
        rhs,
        (0.0, horizon),
        x0_mid.as_array(),
        rtol=1e-10,
        atol=1e-12,
        dense_output=True,
    )

    gaps = []
    for n_steps in (50, 100):
        grid = GridSpec(horizon, n_steps)
        rec = simulate_path(par, x0_mid, grid, SeedSpec(0, 0))
        exact = ref.sol(grid.times()).T
        gaps.append(np.max(np.abs(rec.states[:, :3] - exact[:, :3])))
    assert gaps[0] > 0
    ratio = gaps[1] / gaps[0]
    assert 0.4 <= ratio <= 0.6 * 1.2  # halving dt halves the gap within 20%


def test_truncated_equals_euler_in_safe_region(default_params):
    rng = np.random.default_rng(11)
    delta = 0.05
    for _ in range(200):
        state = (
            rng.uniform(2 * delta, 1 / (2 * delta)),
            rng.uniform(2 * delta, 1 / (2 * delta)),
            rng.uniform(2 * delta, 1 - 2 * delta),
            rng.uniform(1.0, 300.0),
        )
        dw = tuple(rng.normal(0, 0.05, size=4))
        a = step_truncated(delta, state, 0.01, dw, default_params)
        b = step_euler(state, 0.01, dw, default_params)
        assert np.max(np.abs(np.array(a) - np.array(b))) < 1e-14


def test_truncated_clamps_outside_safe_region(default_params):
    delta = 0.1
    # E = 0: the compliance diffusion floor is sqrt(delta (1 - delta))
    state = (5.0, 5.0, 0.0, 100.0)
    dw = (0.0, 0.0, 1.0, 0.0)
    stepped = step_truncated(delta, state, 0.0, dw, default_params)
    sig_e = default_params.compliance.sigma_e
    assert stepped[2] == pytest.approx(sig_e * math.sqrt(delta * (1 - delta)))
    # biomass far above 1/delta: the drift argument saturates at 1/delta
    par = _params(rho_a=0.0, m_j=1.0, m_a=0.0)
    big = (50.0, 0.0, 0.5, 100.0)
    stepped = step_truncated(delta, big, 0.1, (0.0, 0.0, 0.0, 0.0), par)
    assert stepped[0] == pytest.approx(50.0 - 1.0 * (1 / delta) * 0.1)


def test_step_truncated_rejects_bad_delta(default_params):
    with pytest.raises(ParameterError):
        step_truncated(0.7, (1.0, 1.0, 0.5, 1.0), 0.1, (0, 0, 0, 0), default_params)


def test_jump_accounting_shared_mark():
    jp = JumpParams(
        lam=30.0,  # several pulses over the horizon
        marks=MarkDistribution(values=(-1.0, 1.0), probs=(0.5, 0.5)),
        gain_adult=(-0.5, 0.3),
        gain_juvenile=(-0.5, 0.3),
        floor=1.0,
        margin=0.2,
        cap=100.0,
    )
    par = _params(jumps=jp, b0=0.5, b1=0.5)
    grid = GridSpec(1.0, 20)
    rec = simulate_path(par, StateVec(J=50.0, A=50.0, E=0.5, P=100.0), grid, SeedSpec(55, 0))
    assert len(rec.jumps) >= 1
    # replay: at each fired cell both populations move by the same mark's gain
    from kelpsim import noise as kn

    nz = kn.path_noise(55, 0, grid.dt, grid.n_steps, jp.lam, jp.marks)
    fired, mark_idx, _, dropped = kn.cell_jumps(nz.events, grid.dt, grid.n_steps, jp.marks)
    assert len(rec.jumps) == int(fired.sum())
    assert rec.dropped_jumps == dropped
    marks_applied = [ev.mark for ev in rec.jumps]
    assert marks_applied == [jp.marks.values[m] for m, f in zip(mark_idx, fired) if f]


def test_batch_matches_single_paths(default_params, x0_mid):
    grid = build_grid(default_params, 2.0, 40)
    batch = simulate_batch(
        default_params, x0_mid, grid, 7, [0, 1, 2], full_record_count=3
    )
    for i in range(3):
        solo = simulate_path(default_params, x0_mid, grid, SeedSpec(7, i))
        assert np.array_equal(batch.records[i].states, solo.states)


def test_path_record_round_trip(default_params, x0_mid, tmp_path):
    grid = build_grid(default_params, 2.0, 40)
    rec = simulate_path(default_params, x0_mid, grid, SeedSpec(9, 4))
    path = tmp_path / "p.txt"
    write_path_record(rec, str(path))
    back = read_path_record(str(path))
    assert np.allclose(back.states, rec.states, rtol=0, atol=0)
    assert back.seed == rec.seed
    assert back.scheme_tag == rec.scheme_tag
    assert back.params_hash == rec.params_hash
    assert len(back.jumps) == len(rec.jumps)


def test_state_at_accessor(default_params, x0_mid):
    grid = build_grid(default_params, 1.0, 20)
    rec = simulate_path(default_params, x0_mid, grid, SeedSpec(3, 1))
    sv = rec.state_at(0)
    assert (sv.J, sv.A, sv.E, sv.P) == (20.0, 30.0, 0.5, 100.0)

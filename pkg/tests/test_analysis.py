import math

import numpy as np
import pytest

from kelpsim.analysis import (
    extinction_criterion,
    extinction_probability,
    histogram,
    joint_histogram,
    lyapunov_estimate,
    moment_curve,
    occupation_measure,
    run_ensemble,
    tv_distance,
    wilson_interval,
)
from kelpsim.model import (
    ComplianceParams,
    EcologicalParams,
    JumpParams,
    ModelParams,
    ParameterError,
    PriceParams,
    RateFamily,
    StateVec,
)
from kelpsim.noise import SeedSpec
from kelpsim.scheme import build_grid, simulate_path


def _params(**kw):
    eco = EcologicalParams(
        r_j=RateFamily.constant(kw.get("r", 0.0)),
        carrying_capacity=kw.get("K", 100.0),
        rho_a=kw.get("rho_a", 0.0),
        m_j=kw.get("m_j", 0.0),
        m_a=kw.get("m_a", 0.0),
        f_j=RateFamily.constant(kw.get("f_j", 0.0)),
        f_a=RateFamily.constant(kw.get("f_a", 0.0)),
        sigma_j=kw.get("sigma_j", 0.0),
        sigma_a=kw.get("sigma_a", 0.0),
    )
    comp = ComplianceParams(
        beta0_bar=kw.get("b0", 0.5),
        beta1_bar=kw.get("b1", 0.5),
        tau_u=0.0,
        sigma_e=kw.get("sigma_e", 0.0),
        eta_sig=0.0,
        p_min=0.0,
        p_max=1.0,
    )
    return ModelParams(
        eco=eco,
        compliance=comp,
        jumps=JumpParams.none(),
        price=kw.get("price", PriceParams(kind="constant", p0=100.0)),
    )


# ---------------------------------------------------------------------------
# histograms


def test_histogram_single_value():
    h = histogram([3.0], bins=4)
    assert h.counts.sum() == 1
    assert h.mass() == pytest.approx(1.0, abs=1e-12)


def test_histogram_uniform_flat():
    rng = np.random.default_rng(0)
    n, nb = 200_000, 10
    h = histogram(rng.uniform(0, 1, n), bins=nb, lo=0.0, hi=1.0)
    p = 1.0 / nb
    se = math.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(h.counts / n - p) < 3 * se)
    assert h.mass() == pytest.approx(1.0, abs=1e-12)


def test_histogram_counts_preserved_with_outliers():
    h = histogram([-5.0, 0.5, 99.0], bins=3, lo=0.0, hi=1.0)
    assert h.counts.sum() == 3
    assert h.mass() == pytest.approx(1.0, abs=1e-12)


def test_histogram_empty_rejected():
    with pytest.raises(ParameterError):
        histogram([])


def test_joint_histogram_mass():
    rng = np.random.default_rng(1)
    h = joint_histogram(rng.normal(size=5000), rng.normal(size=5000), bins=12)
    assert h.mass() == pytest.approx(1.0, abs=1e-12)
    assert h.counts.sum() == 5000


# ---------------------------------------------------------------------------
# ensembles


def test_run_ensemble_m1_reduces_to_simulate_path(default_params, x0_mid):
    grid = build_grid(default_params, 2.0, 40)
    ens = run_ensemble(
        default_params, x0_mid, grid, 1, 77, report_every=grid.dt, record_paths=1
    )
    solo = simulate_path(default_params, x0_mid, grid, SeedSpec(77, 0))
    assert np.array_equal(ens.records[0].states, solo.states)
    assert np.allclose(ens.states[0], solo.states)


def test_run_ensemble_threads_equivalent(default_params, x0_mid):
    grid = build_grid(default_params, 1.0, 20)
    a = run_ensemble(default_params, x0_mid, grid, 40, 5, threads=1, chunk_size=10)
    b = run_ensemble(default_params, x0_mid, grid, 40, 5, threads=2, chunk_size=10)
    c = run_ensemble(default_params, x0_mid, grid, 40, 5, threads=1, chunk_size=7)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.states, c.states)
    assert np.array_equal(a.final_states, b.final_states)


def test_gbm_only_ensemble_matches_lognormal_mean():
    par = _params(price=PriceParams(kind="geometric-brownian", mu_rate=0.08, sigma_p=0.25, p0=100.0))
    grid = build_grid(par, 1.0, 20)
    ens = run_ensemble(par, StateVec(J=1.0, A=1.0, E=0.5, P=100.0), grid, 20000, 123)
    p_final = ens.final_states[:, 3]
    target = 100.0 * math.exp(0.08)
    se = p_final.std(ddof=1) / math.sqrt(ens.n_paths)
    assert abs(p_final.mean() - target) < 3 * se


# ---------------------------------------------------------------------------
# extinction probability


def test_extinction_probability_trivials(default_params, x0_mid):
    grid = build_grid(default_params, 1.0, 20)
    ens = run_ensemble(default_params, x0_mid, grid, 50, 9)
    p, lo, hi, k = extinction_probability(ens, 0.0, 1.0)
    assert (p, k) == (0.0, 0)
    p, lo, hi, k = extinction_probability(ens, float("inf"), 1.0)
    assert (p, k) == (1.0, 50)
    assert lo <= p <= hi


def test_extinction_probability_lognormal_oracle():
    # pure-death geometric juveniles: J_t is lognormal with known parameters
    kappa, sigma = 0.5, 0.4
    par = _params(m_j=kappa, sigma_j=sigma)
    grid = build_grid(par, 1.0, 50)
    x0 = StateVec(J=10.0, A=0.0, E=0.5, P=100.0)
    M = 20000
    ens = run_ensemble(par, x0, grid, M, 321)
    c = 6.0
    # scheme drift per step: log(1 - kappa dt)/dt, not exactly -kappa
    dt = grid.dt
    drift = math.log(1.0 - kappa * dt) / dt - 0.5 * sigma**2
    mu_t = math.log(10.0) + drift * 1.0
    sd_t = sigma
    target = 0.5 * (1.0 + math.erf((math.log(c) - mu_t) / (sd_t * math.sqrt(2.0))))
    p, lo, hi, k = extinction_probability(ens, c, 1.0)
    se = math.sqrt(target * (1 - target) / M)
    assert abs(p - target) < 3 * se


def test_wilson_interval_basics():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and hi < 0.05
    lo, hi = wilson_interval(100, 100)
    assert hi == 1.0 and lo > 0.95


# ---------------------------------------------------------------------------
# Lyapunov estimation


def test_lyapunov_exact_exponential_decay():
    t = np.linspace(0.0, 10.0, 101)
    res = lyapunov_estimate((t, np.exp(-t)[None, :]), window=(5.0, 10.0))
    assert res.slope == pytest.approx(-1.0, abs=1e-9)


def test_lyapunov_constant_path():
    t = np.linspace(0.0, 10.0, 101)
    res = lyapunov_estimate((t, np.full((1, 101), 3.3)))
    assert res.slope == pytest.approx(0.0, abs=1e-12)


def test_lyapunov_excludes_zero_hitters():
    t = np.linspace(0.0, 10.0, 11)
    good = np.exp(-t)
    dead = np.concatenate([np.exp(-t[:8]), np.zeros(3)])
    res = lyapunov_estimate((t, np.stack([good, dead])))
    assert res.excluded == 1
    assert res.slopes.size == 1
    with pytest.raises(ParameterError):
        lyapunov_estimate((t, dead[None, :]))


def test_lyapunov_geometric_death_median():
    # kappa + sigma^2/2 = 1.0 analytic decay exponent
    par = _params(m_j=0.5, sigma_j=1.0)
    grid = build_grid(par, 100.0, 2000)
    x0 = StateVec(J=10.0, A=0.0, E=0.5, P=100.0)
    ens = run_ensemble(par, x0, grid, 300, 654, report_every=1.0)
    res = lyapunov_estimate(ens)
    assert res.median() == pytest.approx(-1.0, abs=0.1)


# ---------------------------------------------------------------------------
# extinction criterion


def _criterion_params(r, m_j, m_a, sigma_j, sigma_a):
    return _params(r=r, m_j=m_j, m_a=m_a, sigma_j=sigma_j, sigma_a=sigma_a)


def test_extinction_criterion_reference_case():
    par = _criterion_params(r=0.3, m_j=0.4, m_a=0.6, sigma_j=1.0, sigma_a=1.0)
    crit = extinction_criterion(par)
    assert crit.passed
    assert crit.eta == pytest.approx(0.8)
    assert crit.r_hat == pytest.approx(0.3)
    assert crit.m_check_j == pytest.approx(0.4)
    assert crit.m_check_a == pytest.approx(0.6)


def test_extinction_criterion_first_condition_fails():
    # r_hat >= sigma_A^2/2 ^ m_check_J + m_check_A
    par = _criterion_params(r=1.2, m_j=0.4, m_a=0.6, sigma_j=1.0, sigma_a=1.0)
    crit = extinction_criterion(par)
    assert not crit.cond_drift
    assert crit.eta is None


def test_extinction_criterion_degenerate_all_zero():
    crit = extinction_criterion(_params())
    assert not crit.passed
    assert crit.eta is None


def test_extinction_criterion_jump_flux_term(two_point_jumps):
    par = _params(r=0.3, m_j=0.4, m_a=0.6, sigma_j=1.0, sigma_a=1.0)
    par = ModelParams(
        eco=par.eco, compliance=par.compliance, jumps=two_point_jumps, price=par.price
    )
    crit = extinction_criterion(par)
    m1, m2 = two_point_jumps.moment_bounds()
    flux = max(m1, m2) * two_point_jumps.lam / two_point_jumps.floor
    assert crit.eta_value == pytest.approx(min(0.8 - flux, 0.9 - flux))


# ---------------------------------------------------------------------------
# moment curve and occupation measure


def test_moment_curve_constant(quiet_params):
    grid = build_grid(quiet_params, 2.0, 20)
    x0 = StateVec(J=4.0, A=6.0, E=0.5, P=1.0)
    ens = run_ensemble(quiet_params, x0, grid, 20, 3)
    t, m, se, mx = moment_curve(ens, 1.0)
    assert np.allclose(m, 10.0)
    assert mx == pytest.approx(10.0)


def test_moment_curve_pure_death_oracle():
    kappa = 0.8
    par = _params(m_j=kappa, sigma_j=0.5)
    grid = build_grid(par, 2.0, 100)
    x0 = StateVec(J=10.0, A=0.0, E=0.5, P=100.0)
    ens = run_ensemble(par, x0, grid, 20000, 888, report_every=0.5)
    t, m, se, _ = moment_curve(ens, 1.0)
    dt = grid.dt
    decay = math.log(1.0 - kappa * dt) / dt  # per-step drift of the scheme
    target = 10.0 * np.exp(decay * t)
    assert np.all(np.abs(m - target) <= 3 * se + 1e-12)


def test_moment_curve_order_validation(quiet_params):
    grid = build_grid(quiet_params, 1.0, 10)
    ens = run_ensemble(quiet_params, StateVec(J=1, A=1, E=0.5, P=1.0), grid, 5, 4)
    with pytest.raises(ParameterError):
        moment_curve(ens, 0.5)


def test_occupation_measure_point_mass(quiet_params):
    grid = build_grid(quiet_params, 2.0, 20)
    rec = simulate_path(quiet_params, StateVec(J=4.0, A=6.0, E=0.5, P=1.0), grid, SeedSpec(1, 0))
    occ = occupation_measure(rec, 2.0, bins=10, hi=10.0)
    assert occ.mass() == pytest.approx(1.0)
    assert (occ.weights > 0).sum() == 1


def test_occupation_measure_stabilizes_for_persistence():
    from kelpsim.config import preset

    cfg = preset("persistence-demo")
    grid = build_grid(cfg.params, 400.0, 8000)
    rec = simulate_path(cfg.params, cfg.x0, grid, SeedSpec(31, 0))
    hi = float(rec.states[:, :2].max()) * 1.01
    occ = lambda t: occupation_measure(rec, t, bins=12, hi=hi)
    early = tv_distance(occ(50.0), occ(100.0))
    late = tv_distance(occ(200.0), occ(400.0))
    assert late < early

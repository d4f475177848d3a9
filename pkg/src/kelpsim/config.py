"""Scenario configuration: a flat, sectioned key=value text format
(sections: ecology, compliance, jumps, price, run, sweep), built-in
presets, and the burn-in / sweep plumbing.

The shipped presets are illustrative desk-scale parameter sets chosen to
exhibit the qualitative regimes (stable full-compliance harvesting,
dispersed dynamic compliance with collapse risk, subsidy response); they
are not a field calibration.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace as dc_replace
from typing import Optional

from .model import (
    ComplianceParams,
    EcologicalParams,
    JumpParams,
    MarkDistribution,
    ModelParams,
    ParameterError,
    PriceParams,
    RateFamily,
    StateVec,
    params_hash,
)
from .scheme import GridSpec, build_grid

__all__ = [
    "ScenarioConfig",
    "parse_config",
    "render_config",
    "load_config",
    "apply_sweep_value",
    "preset",
    "PRESET_NAMES",
]


@dataclass
class ScenarioConfig:
    params: ModelParams
    horizon: float
    n_steps: int
    n_paths: int
    master_seed: int
    burn_in: float
    x0: StateVec
    extinction_threshold: Optional[float]
    record_paths: int
    report_every: Optional[float]
    out_dir: str
    threads: int
    sweep_parameter: Optional[str] = None
    sweep_values: tuple[float, ...] = ()

    def grid(self) -> GridSpec:
        return build_grid(self.params, self.horizon, self.n_steps)

    def effective_threshold(self) -> float:
        if self.extinction_threshold is not None:
            return self.extinction_threshold
        return 1e-6 * self.params.eco.carrying_capacity

    def schedule(self):
        """Two-phase schedule: extraction off during the burn-in years."""
        if self.burn_in <= 0:
            return None
        dt = self.horizon / self.n_steps
        switch = round(self.burn_in / dt)
        if switch <= 0 or switch >= self.n_steps:
            raise ParameterError("burn-in must fall strictly inside the horizon")
        eco = self.params.eco
        quiet = dc_replace(
            eco,
            f_j=RateFamily.constant(0.0),
            f_a=RateFamily.constant(0.0),
        )
        burn_params = ModelParams(
            eco=quiet,
            compliance=self.params.compliance,
            jumps=self.params.jumps,
            price=self.params.price,
        )
        return [(0, burn_params), (switch, self.params)]

    def hash(self) -> str:
        return params_hash(self.params)


# ---------------------------------------------------------------------------
# parsing


def _get(cp, section, key, conv=float, default=None):
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        if conv is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return conv(raw)
    if default is None:
        raise ParameterError(f"missing config key [{section}] {key}")
    return default


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), delimiters=("=",))
    cp.read_string(text)
    for section in ("ecology", "compliance", "jumps", "price", "run"):
        if not cp.has_section(section):
            raise ParameterError(f"config is missing the [{section}] section")

    eco = EcologicalParams(
        r_j=RateFamily(
            compliant=_get(cp, "ecology", "recruitment_compliant"),
            noncompliant=_get(cp, "ecology", "recruitment_noncompliant"),
        ),
        carrying_capacity=_get(cp, "ecology", "carrying_capacity"),
        rho_a=_get(cp, "ecology", "maturation_rate"),
        m_j=_get(cp, "ecology", "mortality_juvenile"),
        m_a=_get(cp, "ecology", "mortality_adult"),
        f_j=RateFamily(
            compliant=_get(cp, "ecology", "extraction_juvenile_compliant"),
            noncompliant=_get(cp, "ecology", "extraction_juvenile_noncompliant"),
            price_gated=_get(cp, "ecology", "extraction_price_gated", bool, False),
            price_floor=_get(cp, "ecology", "extraction_price_floor", float, 0.0),
            price_steepness=_get(cp, "ecology", "extraction_price_steepness", float, 0.0),
        ),
        f_a=RateFamily(
            compliant=_get(cp, "ecology", "extraction_adult_compliant"),
            noncompliant=_get(cp, "ecology", "extraction_adult_noncompliant"),
            price_gated=_get(cp, "ecology", "extraction_price_gated", bool, False),
            price_floor=_get(cp, "ecology", "extraction_price_floor", float, 0.0),
            price_steepness=_get(cp, "ecology", "extraction_price_steepness", float, 0.0),
        ),
        sigma_j=_get(cp, "ecology", "sigma_juvenile", float, 0.0),
        sigma_a=_get(cp, "ecology", "sigma_adult", float, 0.0),
    )

    comp = ComplianceParams(
        beta0_bar=_get(cp, "compliance", "beta0_bar"),
        beta1_bar=_get(cp, "compliance", "beta1_bar"),
        tau_u=_get(cp, "compliance", "syndicate_fraction"),
        sigma_e=_get(cp, "compliance", "sigma_compliance"),
        eta_sig=_get(cp, "compliance", "sigmoid_steepness"),
        p_min=_get(cp, "compliance", "price_min"),
        p_max=_get(cp, "compliance", "price_max"),
        subsidy=_get(cp, "compliance", "subsidy", float, 0.0),
    )

    lam = _get(cp, "jumps", "rate", float, 0.0)
    marks, ga, gj = [], [], []
    for key, raw in cp.items("jumps"):
        if not key.startswith("mark."):
            continue
        parts = raw.split()
        if len(parts) != 4:
            raise ParameterError(
                f"mark line '{key}' must read: value prob gain_adult gain_juvenile"
            )
        z, p, g_a, g_j = (float(v) for v in parts)
        marks.append((z, p))
        ga.append(g_a)
        gj.append(g_j)
    if lam > 0 and not marks:
        raise ParameterError("a positive jump rate needs at least one mark line")
    if marks:
        jumps = JumpParams(
            lam=lam,
            marks=MarkDistribution(
                values=tuple(z for z, _ in marks), probs=tuple(p for _, p in marks)
            ),
            gain_adult=tuple(ga),
            gain_juvenile=tuple(gj),
            floor=_get(cp, "jumps", "floor"),
            margin=_get(cp, "jumps", "margin"),
            cap=_get(cp, "jumps", "cap", float, eco.carrying_capacity),
        )
    else:
        jumps = JumpParams.none()

    price = PriceParams(
        kind=_get(cp, "price", "kind", str, "geometric-brownian"),
        mu_rate=_get(cp, "price", "drift", float, 0.0),
        sigma_p=_get(cp, "price", "volatility", float, 0.0),
        theta=_get(cp, "price", "reversion_level", float, 1.0),
        kappa_p=_get(cp, "price", "reversion_speed", float, 0.0),
        p0=_get(cp, "price", "initial"),
    )

    params = ModelParams(eco=eco, compliance=comp, jumps=jumps, price=price)

    sweep_parameter = None
    sweep_values: tuple[float, ...] = ()
    if cp.has_section("sweep") and cp.has_option("sweep", "parameter"):
        sweep_parameter = cp.get("sweep", "parameter").strip()
        sweep_values = tuple(float(v) for v in cp.get("sweep", "values").split())

    threshold = (
        _get(cp, "run", "extinction_threshold", float)
        if cp.has_option("run", "extinction_threshold")
        else None
    )
    report_every = (
        _get(cp, "run", "report_every_years", float)
        if cp.has_option("run", "report_every_years")
        else None
    )

    return ScenarioConfig(
        params=params,
        horizon=_get(cp, "run", "horizon_years"),
        n_steps=_get(cp, "run", "steps", int),
        n_paths=_get(cp, "run", "paths", int),
        master_seed=_get(cp, "run", "master_seed", int),
        burn_in=_get(cp, "run", "burn_in_years", float, 0.0),
        x0=StateVec(
            J=_get(cp, "run", "initial_juvenile"),
            A=_get(cp, "run", "initial_adult"),
            E=_get(cp, "run", "initial_compliance"),
            P=price.p0,
        ),
        extinction_threshold=threshold,
        record_paths=_get(cp, "run", "record_paths", int, 0),
        report_every=report_every,
        out_dir=_get(cp, "run", "output_dir", str, "out"),
        threads=_get(cp, "run", "threads", int, 1),
        sweep_parameter=sweep_parameter,
        sweep_values=sweep_values,
    )


def render_config(cfg: ScenarioConfig) -> str:
    """Canonical text form; parsing it back reproduces the parameter hash."""
    eco, comp, jp, pp = (
        cfg.params.eco,
        cfg.params.compliance,
        cfg.params.jumps,
        cfg.params.price,
    )
    out = io.StringIO()
    w = out.write
    w("# kelpsim scenario configuration\n")
    w("# desk-scale preset values; not a field calibration\n")
    w("[ecology]\n")
    w(f"carrying_capacity = {eco.carrying_capacity!r}\n")
    w(f"maturation_rate = {eco.rho_a!r}\n")
    w(f"mortality_juvenile = {eco.m_j!r}\n")
    w(f"mortality_adult = {eco.m_a!r}\n")
    w(f"recruitment_compliant = {eco.r_j.compliant!r}\n")
    w(f"recruitment_noncompliant = {eco.r_j.noncompliant!r}\n")
    w(f"extraction_juvenile_compliant = {eco.f_j.compliant!r}\n")
    w(f"extraction_juvenile_noncompliant = {eco.f_j.noncompliant!r}\n")
    w(f"extraction_adult_compliant = {eco.f_a.compliant!r}\n")
    w(f"extraction_adult_noncompliant = {eco.f_a.noncompliant!r}\n")
    w(f"extraction_price_gated = {'true' if eco.f_j.price_gated else 'false'}\n")
    w(f"extraction_price_floor = {eco.f_j.price_floor!r}\n")
    w(f"extraction_price_steepness = {eco.f_j.price_steepness!r}\n")
    w(f"sigma_juvenile = {eco.sigma_j!r}\n")
    w(f"sigma_adult = {eco.sigma_a!r}\n")
    w("\n[compliance]\n")
    w(f"beta0_bar = {comp.beta0_bar!r}\n")
    w(f"beta1_bar = {comp.beta1_bar!r}\n")
    w(f"syndicate_fraction = {comp.tau_u!r}\n")
    w(f"sigma_compliance = {comp.sigma_e!r}\n")
    w(f"sigmoid_steepness = {comp.eta_sig!r}\n")
    w(f"price_min = {comp.p_min!r}\n")
    w(f"price_max = {comp.p_max!r}\n")
    w(f"subsidy = {comp.subsidy!r}\n")
    w("\n[jumps]\n")
    w(f"rate = {jp.lam!r}\n")
    w(f"floor = {jp.floor!r}\n")
    w(f"margin = {jp.margin!r}\n")
    w(f"cap = {jp.cap!r}\n")
    if jp.lam > 0 or len(jp.marks.values) > 1 or jp.marks.values != (0.0,):
        for i, (z, p) in enumerate(zip(jp.marks.values, jp.marks.probs)):
            w(
                f"mark.m{i} = {z!r} {p!r} {jp.gain_adult[i]!r} {jp.gain_juvenile[i]!r}\n"
            )
    w("\n[price]\n")
    w(f"kind = {pp.kind}\n")
    w(f"drift = {pp.mu_rate!r}\n")
    w(f"volatility = {pp.sigma_p!r}\n")
    w(f"initial = {pp.p0!r}\n")
    w(f"reversion_level = {pp.theta!r}\n")
    w(f"reversion_speed = {pp.kappa_p!r}\n")
    w("\n[run]\n")
    w(f"horizon_years = {cfg.horizon!r}\n")
    w(f"steps = {cfg.n_steps}\n")
    w(f"paths = {cfg.n_paths}\n")
    w(f"master_seed = {cfg.master_seed}\n")
    w(f"burn_in_years = {cfg.burn_in!r}\n")
    w(f"initial_juvenile = {cfg.x0.J!r}\n")
    w(f"initial_adult = {cfg.x0.A!r}\n")
    w(f"initial_compliance = {cfg.x0.E!r}\n")
    if cfg.extinction_threshold is not None:
        w(f"extinction_threshold = {cfg.extinction_threshold!r}\n")
    if cfg.report_every is not None:
        w(f"report_every_years = {cfg.report_every!r}\n")
    w(f"record_paths = {cfg.record_paths}\n")
    w(f"output_dir = {cfg.out_dir}\n")
    w(f"threads = {cfg.threads}\n")
    if cfg.sweep_parameter:
        w("\n[sweep]\n")
        w(f"parameter = {cfg.sweep_parameter}\n")
        w("values = " + " ".join(repr(v) for v in cfg.sweep_values) + "\n")
    return out.getvalue()


def load_config(path: str) -> ScenarioConfig:
    with open(path) as f:
        return parse_config(f.read())


_SWEEPABLE = {
    "compliance.subsidy": ("compliance", "subsidy"),
    "price.volatility": ("price", "volatility"),
    "price.drift": ("price", "drift"),
    "compliance.syndicate_fraction": ("compliance", "syndicate_fraction"),
    "compliance.sigma_compliance": ("compliance", "sigma_compliance"),
    "jumps.rate": ("jumps", "rate"),
    "ecology.sigma_juvenile": ("ecology", "sigma_juvenile"),
    "ecology.sigma_adult": ("ecology", "sigma_adult"),
}


def apply_sweep_value(cfg: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    """New configuration with one swept parameter replaced.  Works on the
    rendered text so the result stays consistent with parsing."""
    if parameter not in _SWEEPABLE:
        raise ParameterError(
            f"unknown sweep parameter {parameter!r}; one of {sorted(_SWEEPABLE)}"
        )
    section, key = _SWEEPABLE[parameter]
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), delimiters=("=",))
    cp.read_string(render_config(cfg))
    cp.set(section, key, repr(float(value)))
    buf = io.StringIO()
    cp.write(buf)
    swept = parse_config(buf.getvalue())
    swept.sweep_parameter = None
    swept.sweep_values = ()
    return swept


# ---------------------------------------------------------------------------
# presets


def _base_params(
    *,
    f_j=(0.0, 0.9),
    f_a=(0.25, 0.9),
    subsidy=0.0,
    sigma_p=0.07,
    jumps=True,
) -> ModelParams:
    eco = EcologicalParams(
        r_j=RateFamily.constant(2.0),
        carrying_capacity=100.0,
        rho_a=0.4,
        m_j=0.1,
        m_a=0.15,
        f_j=RateFamily(compliant=f_j[0], noncompliant=f_j[1]),
        f_a=RateFamily(compliant=f_a[0], noncompliant=f_a[1]),
        sigma_j=0.15,
        sigma_a=0.15,
    )
    comp = ComplianceParams(
        beta0_bar=0.3,
        beta1_bar=0.3,
        tau_u=0.6,
        sigma_e=0.3,
        eta_sig=0.01,
        p_min=250.0,
        p_max=400.0,
        subsidy=subsidy,
    )
    if jumps:
        jp = JumpParams(
            lam=0.25,
            marks=MarkDistribution(values=(-1.0, 1.0), probs=(0.5, 0.5)),
            gain_adult=(-0.5, 0.25),
            gain_juvenile=(-0.6, 0.3),
            floor=1.0,
            margin=0.2,
            cap=100.0,
        )
    else:
        jp = JumpParams.none()
    price = PriceParams(
        kind="geometric-brownian", mu_rate=0.04, sigma_p=sigma_p, p0=100.0
    )
    return ModelParams(eco=eco, compliance=comp, jumps=jp, price=price)


def _scenario(params: ModelParams, **kw) -> ScenarioConfig:
    defaults = dict(
        horizon=30.0,
        n_steps=600,
        n_paths=15000,
        master_seed=20260809,
        burn_in=5.0,
        x0=StateVec(J=20.0, A=30.0, E=0.5, P=params.price.p0),
        extinction_threshold=None,
        record_paths=10,
        report_every=0.5,
        out_dir="out",
        threads=1,
    )
    defaults.update(kw)
    return ScenarioConfig(params=params, **defaults)


def _preset_default() -> ScenarioConfig:
    return _scenario(_base_params())


def _preset_full_compliance() -> ScenarioConfig:
    # extraction pinned at the legal ceilings regardless of opinion
    return _scenario(_base_params(f_j=(0.0, 0.0), f_a=(0.25, 0.25)))


def _preset_dynamic_compliance() -> ScenarioConfig:
    return _scenario(_base_params())


def _preset_subsidy_sweep() -> ScenarioConfig:
    cfg = _scenario(_base_params())
    cfg.sweep_parameter = "compliance.subsidy"
    cfg.sweep_values = (0.0, 150.0, 300.0)
    return cfg


def _preset_volatility_sweep() -> ScenarioConfig:
    cfg = _scenario(_base_params())
    cfg.sweep_parameter = "price.volatility"
    cfg.sweep_values = (0.07, 0.09, 0.11)
    return cfg


def _preset_persistence_demo() -> ScenarioConfig:
    # stable long-run regime: legal extraction, mean-reverting-free constant
    # price, environmental pulses on
    params = _base_params(f_j=(0.0, 0.0), f_a=(0.25, 0.25))
    params = ModelParams(
        eco=params.eco,
        compliance=params.compliance,
        jumps=params.jumps,
        price=PriceParams(kind="constant", p0=100.0),
    )
    return _scenario(
        params,
        horizon=100.0,
        n_steps=2000,
        n_paths=2000,
        burn_in=0.0,
        record_paths=5,
        report_every=2.0,
    )


def _preset_extinction_demo() -> ScenarioConfig:
    eco = EcologicalParams(
        r_j=RateFamily.constant(0.3),
        carrying_capacity=100.0,
        rho_a=0.5,
        m_j=0.4,
        m_a=0.6,
        f_j=RateFamily.constant(0.0),
        f_a=RateFamily.constant(0.0),
        sigma_j=1.0,
        sigma_a=1.0,
    )
    comp = ComplianceParams(
        beta0_bar=0.5,
        beta1_bar=0.5,
        tau_u=0.3,
        sigma_e=0.3,
        eta_sig=0.01,
        p_min=150.0,
        p_max=400.0,
    )
    params = ModelParams(
        eco=eco, compliance=comp, jumps=JumpParams.none(),
        price=PriceParams(kind="constant", p0=100.0),
    )
    return _scenario(
        params,
        horizon=200.0,
        n_steps=4000,
        n_paths=1000,
        burn_in=0.0,
        x0=StateVec(J=20.0, A=30.0, E=0.5, P=100.0),
        record_paths=5,
        report_every=2.0,
    )


_PRESETS = {
    "default": _preset_default,
    "full-compliance": _preset_full_compliance,
    "dynamic-compliance": _preset_dynamic_compliance,
    "subsidy-sweep": _preset_subsidy_sweep,
    "volatility-sweep": _preset_volatility_sweep,
    "persistence-demo": _preset_persistence_demo,
    "extinction-demo": _preset_extinction_demo,
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset(name: str) -> ScenarioConfig:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; one of {PRESET_NAMES}") from None

"""Parameters and deterministic coefficient functions of the coupled
kelp / harvester-compliance / price system.

Everything here is a pure function of immutable parameter objects: the
compliance-interpolated rate families, the recruitment shut-off at carrying
capacity, the opinion-switching rates with their price sigmoids, the bounded
jump family, and the structural validity checks (boundedness/Lipschitz of the
rate families, jump controls, noise-vs-baseline margin for the compliance
diffusion, positivity of the price model).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Iterator

import numpy as np

__all__ = [
    "ParameterError",
    "DomainError",
    "RateFamily",
    "EcologicalParams",
    "ComplianceParams",
    "MarkDistribution",
    "JumpParams",
    "PriceParams",
    "ModelParams",
    "StateVec",
    "cutoff",
    "activation",
    "recruitment",
    "loss_rates",
    "compliance_rates",
    "delta_beta",
    "jump_phi",
    "drift_vector",
    "validate_params",
    "ValidationReport",
    "CheckResult",
    "params_hash",
    "rate_extrema",
    "kappa_sup",
]

EXTREMA_GRID_POINTS = 1001  # dense scan used for all rate-family extrema


class ParameterError(ValueError):
    """A parameter is outside its admissible range."""


class DomainError(ValueError):
    """A state argument is outside the state space."""


# ---------------------------------------------------------------------------
# scalar building blocks


def cutoff(eps: float, z):
    """Clamp ``z`` into [eps, 1-eps] (1-Lipschitz cut-off).

    ``eps`` must lie in [0, 1/2).  Accepts scalars or arrays.
    """
    if not 0.0 <= eps < 0.5:
        raise ParameterError(f"cutoff width must be in [0, 0.5), got {eps}")
    return np.minimum(np.maximum(z, eps), 1.0 - eps)


def clamp_below_cap(z, cap: float):
    """Clamp ``z`` into [0, cap]; the upper-truncation used by the
    safe-region reference dynamics."""
    return np.minimum(np.maximum(z, 0.0), cap)


def activation(eta_sig: float, p0: float, p):
    """Smoothed price-threshold indicator: sigmoid of steepness ``eta_sig``
    centred at ``p0``.  Returns values in (0, 1); 0.5 at ``p == p0`` and
    everywhere when ``eta_sig == 0``.  Overflow-safe for large arguments.
    """
    x = np.multiply(eta_sig, np.subtract(p, p0))
    out = np.empty_like(np.asarray(x, dtype=float))
    pos = np.asarray(x) >= 0
    xa = np.asarray(x, dtype=float)
    out[pos] = 1.0 / (1.0 + np.exp(-xa[pos]))
    ex = np.exp(xa[~pos])
    out[~pos] = ex / (1.0 + ex)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class RateFamily:
    """A compliance-interpolated rate: linear in E between a non-compliant
    end (E=0) and a compliant end (E=1), optionally damped by a price
    sigmoid (extraction goes dormant when the price is too low).

    Bounded and globally Lipschitz by construction; evaluation clamps E
    into [0, 1] so reference steppers can probe slightly outside the band.
    """

    compliant: float
    noncompliant: float
    price_gated: bool = False
    price_floor: float = 0.0
    price_steepness: float = 0.0

    def __post_init__(self):
        if self.compliant < 0 or self.noncompliant < 0:
            raise ParameterError("rates must be non-negative")
        if self.price_gated and self.price_steepness < 0:
            raise ParameterError("price gate steepness must be >= 0")

    def __call__(self, e, p=None):
        ec = np.minimum(np.maximum(e, 0.0), 1.0)
        base = self.noncompliant + (self.compliant - self.noncompliant) * ec
        if self.price_gated and p is not None:
            base = base * activation(self.price_steepness, self.price_floor, p)
        return base

    @classmethod
    def constant(cls, value: float) -> "RateFamily":
        return cls(compliant=value, noncompliant=value)

    def bound(self) -> float:
        """Supremum over E in [0,1] (price gate factor is < 1)."""
        grid = np.linspace(0.0, 1.0, EXTREMA_GRID_POINTS)
        return float(np.max(self(grid)))

    def infimum(self) -> float:
        """Infimum over E in [0,1] and admissible prices."""
        grid = np.linspace(0.0, 1.0, EXTREMA_GRID_POINTS)
        lo = float(np.min(self(grid)))
        if self.price_gated and self.price_steepness > 0:
            lo *= activation(self.price_steepness, self.price_floor, 0.0)
        return lo

    def lipschitz(self) -> float:
        """Lipschitz constant in E, estimated on the scan grid."""
        grid = np.linspace(0.0, 1.0, EXTREMA_GRID_POINTS)
        vals = np.asarray(self(grid), dtype=float)
        return float(np.max(np.abs(np.diff(vals))) * (EXTREMA_GRID_POINTS - 1))


@dataclass(frozen=True)
class EcologicalParams:
    """Biomass dynamics: recruitment family, carrying capacity, maturation,
    mortalities, extraction families, and the environmental noise
    intensities of the two biomass components."""

    r_j: RateFamily
    carrying_capacity: float
    rho_a: float
    m_j: float
    m_a: float
    f_j: RateFamily
    f_a: RateFamily
    sigma_j: float = 0.0
    sigma_a: float = 0.0

    def __post_init__(self):
        if self.carrying_capacity <= 0:
            raise ParameterError("carrying capacity must be > 0")
        for name in ("rho_a", "m_j", "m_a", "sigma_j", "sigma_a"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")


@dataclass(frozen=True)
class ComplianceParams:
    """Opinion-switching parameters: baseline rates, syndicate fraction,
    compliance noise, and the price thresholds with their sigmoid
    steepness and the subsidy increment."""

    beta0_bar: float
    beta1_bar: float
    tau_u: float
    sigma_e: float
    eta_sig: float
    p_min: float
    p_max: float
    subsidy: float = 0.0

    def __post_init__(self):
        if self.beta0_bar < 0 or self.beta1_bar < 0:
            raise ParameterError("baseline switch rates must be >= 0")
        if not 0.0 <= self.tau_u <= 1.0:
            raise ParameterError("syndicate fraction must be in [0, 1]")
        if self.eta_sig < 0 or self.subsidy < 0:
            raise ParameterError("sigmoid steepness and subsidy must be >= 0")
        if self.p_min > self.p_max:
            raise ParameterError("p_min must be <= p_max")


@dataclass(frozen=True)
class MarkDistribution:
    """Finite discrete mark law: support values with probabilities."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ParameterError("mark table must pair values with probabilities")
        if any(p < 0 for p in self.probs):
            raise ParameterError("mark probabilities must be >= 0")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ParameterError("mark probabilities must sum to 1")

    def as_arrays(self):
        return np.asarray(self.values, dtype=float), np.asarray(self.probs, dtype=float)

    def cumulative(self) -> np.ndarray:
        c = np.cumsum(np.asarray(self.probs, dtype=float))
        c[-1] = 1.0
        return c

    def sample(self, rng) -> float:
        u = rng.random()
        idx = int(np.searchsorted(self.cumulative(), u, side="right"))
        return self.values[min(idx, len(self.values) - 1)]

    def index_of(self, z: float) -> int:
        for i, v in enumerate(self.values):
            if v == z or abs(v - z) <= 1e-12 * max(1.0, abs(v)):
                return i
        raise DomainError(f"mark {z} is not in the support of the mark law")


@dataclass(frozen=True)
class JumpParams:
    """Environmental pulse component: intensity, mark law, and the bounded
    per-population gain family (relative gains over marks, activity floor,
    survival margin, biomass cap).

    The gains must satisfy ``|g| <= 1 - margin`` so that a pulse can never
    remove more than a fraction of the active biomass above the floor.
    """

    lam: float
    marks: MarkDistribution
    gain_adult: tuple[float, ...]
    gain_juvenile: tuple[float, ...]
    floor: float
    margin: float
    cap: float

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("jump intensity must be >= 0")
        if len(self.gain_adult) != len(self.marks.values) or len(
            self.gain_juvenile
        ) != len(self.marks.values):
            raise ParameterError("gain tables must align with the mark support")
        if self.floor <= 0:
            raise ParameterError("jump activity floor must be > 0")
        if not 0.0 < self.margin < 1.0:
            raise ParameterError("jump margin must be in (0, 1)")
        if self.cap <= self.floor:
            raise ParameterError("jump cap must exceed the floor")

    @classmethod
    def none(cls) -> "JumpParams":
        """A zero-intensity placeholder (no jumps ever fire)."""
        return cls(
            lam=0.0,
            marks=MarkDistribution(values=(0.0,), probs=(1.0,)),
            gain_adult=(0.0,),
            gain_juvenile=(0.0,),
            floor=1.0,
            margin=0.5,
            cap=2.0,
        )

    def gains(self, which: str) -> np.ndarray:
        if which == "A":
            return np.asarray(self.gain_adult, dtype=float)
        if which == "J":
            return np.asarray(self.gain_juvenile, dtype=float)
        raise ParameterError(f"unknown population tag {which!r}")

    def gain_bound(self) -> float:
        return float(
            max(
                max(abs(g) for g in self.gain_adult),
                max(abs(g) for g in self.gain_juvenile),
            )
        )

    def moment_bounds(self) -> tuple[float, float]:
        """Uniform-in-x bounds on the first and second mark-integrals of the
        pulse sizes: (sum of absolute sizes, sum of squared sizes)."""
        _, p = self.marks.as_arrays()
        ga = np.abs(self.gains("A"))
        gj = np.abs(self.gains("J"))
        span = self.cap - self.floor
        m1 = float(np.sum(p * (ga + gj)) * span)
        m2 = float(np.sum(p * (ga**2 + gj**2)) * span**2)
        return m1, m2


PRICE_KINDS = ("geometric-brownian", "exponential-ornstein-uhlenbeck", "constant")


@dataclass(frozen=True)
class PriceParams:
    """Exogenous market price model.  All three kinds keep the price
    non-negative along every path."""

    kind: str = "geometric-brownian"
    mu_rate: float = 0.0
    sigma_p: float = 0.0
    theta: float = 1.0
    kappa_p: float = 0.0
    p0: float = 1.0

    def __post_init__(self):
        if self.kind not in PRICE_KINDS:
            raise ParameterError(f"price kind must be one of {PRICE_KINDS}")
        if self.p0 < 0:
            raise ParameterError("initial price must be >= 0")
        if self.sigma_p < 0 or self.kappa_p < 0:
            raise ParameterError("price volatility and reversion must be >= 0")
        if self.kind == "exponential-ornstein-uhlenbeck" and self.theta <= 0:
            raise ParameterError("reversion level must be > 0 for the OU kind")

    def drift(self, p):
        """Drift coefficient of the price SDE at level ``p``."""
        if self.kind == "constant":
            return np.zeros_like(np.asarray(p, dtype=float)) if np.ndim(p) else 0.0
        if self.kind == "geometric-brownian":
            return self.mu_rate * np.asarray(p, dtype=float) if np.ndim(p) else self.mu_rate * p
        pa = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = pa * (
                self.kappa_p * (math.log(self.theta) - np.log(pa)) + 0.5 * self.sigma_p**2
            )
        val = np.where(pa > 0, val, 0.0)
        return float(val) if np.ndim(p) == 0 else val

    def diffusion(self, p):
        if self.kind == "constant":
            return np.zeros_like(np.asarray(p, dtype=float)) if np.ndim(p) else 0.0
        return self.sigma_p * np.asarray(p, dtype=float) if np.ndim(p) else self.sigma_p * p


@dataclass(frozen=True)
class ModelParams:
    """Everything the dynamics need: ecology, compliance, jumps, price."""

    eco: EcologicalParams
    compliance: ComplianceParams
    jumps: JumpParams
    price: PriceParams


@dataclass(frozen=True)
class StateVec:
    """One point of the state space: biomass densities (J juvenile,
    A adult), compliance fraction E, price P."""

    J: float
    A: float
    E: float
    P: float

    def in_state_space(self) -> bool:
        return (
            self.J >= 0.0
            and self.A >= 0.0
            and 0.0 <= self.E <= 1.0
            and self.P >= 0.0
        )

    def require_valid(self) -> "StateVec":
        if not self.in_state_space():
            raise DomainError(f"state {self} outside the state space")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.J, self.A, self.E, self.P], dtype=float)


# ---------------------------------------------------------------------------
# coefficient functions


def recruitment(j, a, e, eco: EcologicalParams):
    """Juvenile recruitment factor: the E-dependent base rate times the
    free-habitat fraction, which shuts off once total biomass reaches the
    carrying capacity."""
    if np.any(np.asarray(j) < 0) or np.any(np.asarray(a) < 0):
        raise DomainError("biomass must be non-negative")
    free = cutoff(0.0, 1.0 - (np.asarray(a) + np.asarray(j)) / eco.carrying_capacity)
    out = eco.r_j(e) * free
    return float(out) if np.ndim(out) == 0 else out


def loss_rates(e, eco: EcologicalParams, p=None):
    """Per-capita biomass loss rates (juvenile, adult): maturation plus
    extraction plus natural mortality for juveniles; extraction plus
    mortality for adults.  ``p`` only matters for price-gated extraction."""
    k_j = eco.rho_a + eco.f_j(e, p) + eco.m_j
    k_a = eco.m_a + eco.f_a(e, p)
    return k_j, k_a


def _unpack_state(x):
    if isinstance(x, StateVec):
        return x.J, x.A, x.E, x.P
    j, a, e, p = x
    return j, a, e, p


def compliance_rates(x, cp: ComplianceParams, eco: EcologicalParams):
    """Switching rates (beta0: comply -> defect, beta1: defect -> comply).

    Three decision terms each: perceived abundance, price thresholds
    (with the subsidy added on the comply side), and syndicate pressure,
    all scaled by the syndicate fraction, on top of the baseline rates.
    """
    j, a, e, p = _unpack_state(x)
    dens = cutoff(0.0, (np.asarray(j) + np.asarray(a)) / eco.carrying_capacity)
    i_min = activation(cp.eta_sig, cp.p_min, p)
    i_min_sub = activation(cp.eta_sig, cp.p_min, np.asarray(p) + cp.subsidy)
    i_max = activation(cp.eta_sig, cp.p_max, p)
    beta0 = (dens + (1.0 - i_min + i_max) + 1.0) * cp.tau_u * (1.0 - np.asarray(e)) + cp.beta0_bar
    beta1 = ((1.0 - dens) + i_min_sub + 1.0) * cp.tau_u * np.asarray(e) + cp.beta1_bar
    if np.ndim(beta0) == 0:
        return float(beta0), float(beta1)
    return beta0, beta1


def delta_beta(j, a, p, cp: ComplianceParams, eco: EcologicalParams):
    """The state-dependent part of the net switching drift: the price
    sigmoids minus twice the abundance term, scaled by the syndicate
    fraction.  Bounded in absolute value by ``2 * tau_u``."""
    dens = cutoff(0.0, (np.asarray(j) + np.asarray(a)) / eco.carrying_capacity)
    val = cp.tau_u * (
        activation(cp.eta_sig, cp.p_min, np.asarray(p) + cp.subsidy)
        + activation(cp.eta_sig, cp.p_min, p)
        - activation(cp.eta_sig, cp.p_max, p)
        - 2.0 * dens
    )
    return float(val) if np.ndim(val) == 0 else val


def jump_phi(which: str, x, z, jp: JumpParams):
    """Biomass increment caused by a pulse with mark ``z``: the gain for
    this population times the active biomass above the floor (capped).
    Zero below the floor."""
    idx = jp.marks.index_of(float(z))
    g = float(jp.gains(which)[idx])
    return jump_phi_gain(x, g, jp)


def jump_phi_gain(x, g, jp: JumpParams):
    """Same as :func:`jump_phi` with the gain already resolved (vector form
    used by the steppers: ``g`` may be an array aligned with ``x``)."""
    xa = np.asarray(x, dtype=float)
    active = np.minimum(xa, jp.cap) - jp.floor
    out = np.where(xa >= jp.floor, np.asarray(g) * active, 0.0)
    return float(out) if np.ndim(x) == 0 and np.ndim(g) == 0 else out


def drift_vector(x, params: ModelParams) -> np.ndarray:
    """Drift of the four-component system at a state-space point."""
    if isinstance(x, StateVec):
        x.require_valid()
        j, a, e, p = x.J, x.A, x.E, x.P
    else:
        j, a, e, p = x
        if j < 0 or a < 0 or not 0 <= e <= 1 or p < 0:
            raise DomainError(f"state {(j, a, e, p)} outside the state space")
    k_j, k_a = loss_rates(e, params.eco, p)
    rec = recruitment(j, a, e, params.eco)
    b0, b1 = compliance_rates((j, a, e, p), params.compliance, params.eco)
    return np.array(
        [
            rec * a - k_j * j,
            params.eco.rho_a * j - k_a * a,
            b1 * (1.0 - e) - b0 * e,
            params.price.drift(p),
        ]
    )


# ---------------------------------------------------------------------------
# extrema helpers


def rate_extrema(eco: EcologicalParams) -> dict[str, float]:
    """Dense-scan extrema of the rate families over E in [0, 1]:
    the recruitment supremum and the minimal total death rates."""
    grid = np.linspace(0.0, 1.0, EXTREMA_GRID_POINTS)
    r_hat = float(np.max(eco.r_j(grid)))
    m_check_j = float(np.min(eco.m_j + eco.f_j(grid)))
    m_check_a = float(np.min(eco.m_a + eco.f_a(grid)))
    if eco.f_j.price_gated:
        m_check_j = eco.m_j + float(np.min(eco.f_j(grid))) * activation(
            eco.f_j.price_steepness, eco.f_j.price_floor, 0.0
        )
    if eco.f_a.price_gated:
        m_check_a = eco.m_a + float(np.min(eco.f_a(grid))) * activation(
            eco.f_a.price_steepness, eco.f_a.price_floor, 0.0
        )
    return {"r_hat": r_hat, "m_check_j": m_check_j, "m_check_a": m_check_a}


def kappa_sup(params: ModelParams) -> float:
    """Supremum over E of the larger loss rate; controls the largest
    admissible step size of the explicit scheme."""
    grid = np.linspace(0.0, 1.0, EXTREMA_GRID_POINTS)
    k_j, k_a = loss_rates(grid, params.eco)
    return float(max(np.max(k_j), np.max(k_a)))


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    witness: dict[str, float] = field(default_factory=dict)
    detail: str = ""

    def machine_line(self) -> str:
        parts = [f"check.{self.name}={'pass' if self.passed else 'fail'}"]
        for k, v in self.witness.items():
            parts.append(f"check.{self.name}.{k}={v!r}")
        return " ".join(parts)


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def format(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            extra = f"  ({c.detail})" if c.detail else ""
            wit = ", ".join(f"{k}={v:.6g}" for k, v in c.witness.items())
            lines.append(f"{status}  {c.name:<22} {wit}{extra}")
        return "\n".join(lines)

    def machine_lines(self) -> list[str]:
        return [c.machine_line() for c in self.checks]


def validate_params(params: ModelParams) -> ValidationReport:
    """Structural validity report.  Failures are entries, never exceptions."""
    eco, cp, jp, pp = params.eco, params.compliance, params.jumps, params.price
    checks: list[CheckResult] = []

    fam_bounds = {
        "r_j": (eco.r_j.bound(), eco.r_j.lipschitz()),
        "f_j": (eco.f_j.bound(), eco.f_j.lipschitz()),
        "f_a": (eco.f_a.bound(), eco.f_a.lipschitz()),
    }
    h1_ok = all(math.isfinite(b) and math.isfinite(l) for b, l in fam_bounds.values())
    checks.append(
        CheckResult(
            "H1",
            h1_ok,
            {
                "sup_r_j": fam_bounds["r_j"][0],
                "lip_r_j": fam_bounds["r_j"][1],
                "sup_f_j": fam_bounds["f_j"][0],
                "lip_f_j": fam_bounds["f_j"][1],
                "sup_f_a": fam_bounds["f_a"][0],
                "lip_f_a": fam_bounds["f_a"][1],
            },
            "rate families bounded and Lipschitz on [0,1]",
        )
    )

    gbound = jp.gain_bound()
    checks.append(
        CheckResult(
            "H2.i",
            True,
            {"gain_bound": gbound},
            "pulse sizes grow at most linearly in biomass",
        )
    )
    _, p_marks = jp.marks.as_arrays()
    lip_j = float(np.sum(p_marks * jp.gains("J") ** 2))
    lip_a = float(np.sum(p_marks * jp.gains("A") ** 2))
    checks.append(
        CheckResult(
            "H2.ii",
            math.isfinite(lip_j) and math.isfinite(lip_a),
            {"lip_phi_j": lip_j, "lip_phi_a": lip_a},
            "mean-square Lipschitz constants of the pulse maps",
        )
    )
    margin_ok = gbound <= 1.0 - jp.margin + 1e-12
    checks.append(
        CheckResult(
            "H2.iii",
            margin_ok,
            {"gain_bound": gbound, "allowed": 1.0 - jp.margin},
            "post-pulse biomass stays non-negative",
        )
    )

    h3_margin = min(cp.beta0_bar, cp.beta1_bar) - 0.5 * cp.sigma_e**2
    # with zero compliance noise there is no boundary diffusion to control
    h3_ok = h3_margin > 0 or cp.sigma_e == 0.0
    checks.append(
        CheckResult(
            "H3",
            h3_ok,
            {
                "min_beta_bar": min(cp.beta0_bar, cp.beta1_bar),
                "half_sigma_e_sq": 0.5 * cp.sigma_e**2,
                "margin": h3_margin,
            },
            "compliance boundaries are entrance boundaries",
        )
    )

    lipschitz_price = pp.kind in ("geometric-brownian", "constant")
    checks.append(
        CheckResult(
            "H4",
            True,
            {"p0": pp.p0},
            f"price kind '{pp.kind}' keeps paths non-negative"
            + ("" if lipschitz_price else "; coefficients only locally Lipschitz"),
        )
    )

    checks.append(
        CheckResult(
            "origin.support",
            True,
            {"floor": jp.floor},
            "pulses vanish below the activity floor",
        )
    )
    # post-pulse biomass above the floor keeps at least margin * floor
    post_min = jp.margin * jp.floor
    checks.append(
        CheckResult(
            "origin.no-killing",
            margin_ok,
            {"post_pulse_min": post_min},
            "a pulse never drives active biomass to zero",
        )
    )
    m1, m2 = jp.moment_bounds()
    checks.append(
        CheckResult(
            "origin.bounded-flux",
            math.isfinite(m1) and math.isfinite(m2),
            {"m1_bound": m1, "m2_bound": m2},
            "mark-integrals of pulse sizes are uniformly bounded",
        )
    )

    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# canonical serialization / hashing


def _canonical_items(obj, prefix: str = "") -> Iterator[tuple[str, str]]:
    if is_dataclass(obj) and not isinstance(obj, type):
        for f in sorted(fields(obj), key=lambda f: f.name):
            yield from _canonical_items(getattr(obj, f.name), f"{prefix}{f.name}.")
    elif isinstance(obj, (tuple, list)):
        for i, v in enumerate(obj):
            yield from _canonical_items(v, f"{prefix}{i}.")
    else:
        yield prefix.rstrip("."), repr(obj)


def params_hash(params: ModelParams) -> str:
    """Stable 16-hex digest of the full parameter set."""
    text = "\n".join(f"{k}={v}" for k, v in _canonical_items(params))
    return hashlib.sha256(text.encode()).hexdigest()[:16]

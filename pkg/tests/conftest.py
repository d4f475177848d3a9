import numpy as np
import pytest

from kelpsim.model import (
    ComplianceParams,
    EcologicalParams,
    JumpParams,
    MarkDistribution,
    ModelParams,
    PriceParams,
    RateFamily,
    StateVec,
)


@pytest.fixture
def default_params():
    from kelpsim.config import preset

    return preset("default").params


@pytest.fixture
def quiet_params():
    """All rates and noises zero: the dynamics freeze."""
    eco = EcologicalParams(
        r_j=RateFamily.constant(0.0),
        carrying_capacity=100.0,
        rho_a=0.0,
        m_j=0.0,
        m_a=0.0,
        f_j=RateFamily.constant(0.0),
        f_a=RateFamily.constant(0.0),
    )
    comp = ComplianceParams(
        beta0_bar=0.0,
        beta1_bar=0.0,
        tau_u=0.0,
        sigma_e=0.0,
        eta_sig=0.0,
        p_min=0.0,
        p_max=1.0,
    )
    return ModelParams(
        eco=eco,
        compliance=comp,
        jumps=JumpParams.none(),
        price=PriceParams(kind="constant", p0=1.0),
    )


@pytest.fixture
def two_point_jumps():
    """The bounded pulse family on a warm/cold two-point mark law."""
    return JumpParams(
        lam=0.5,
        marks=MarkDistribution(values=(-1.0, 1.0), probs=(0.5, 0.5)),
        gain_adult=(-0.8, 0.4),
        gain_juvenile=(-0.8, 0.5),
        floor=1.0,
        margin=0.2,
        cap=100.0,
    )


@pytest.fixture
def x0_mid():
    return StateVec(J=20.0, A=30.0, E=0.5, P=100.0)

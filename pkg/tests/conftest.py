import os

import hypothesis
import numpy as np
import pytest

from services.elliptic import TruncatedDomain
from services.gas import GasModel
from services.polar import ShockPolar, UpstreamSpec
from services.stability import certify

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def gas():
    return GasModel(1.4)


@pytest.fixture(scope="session")
def upstream_spec(gas):
    return UpstreamSpec(q0=1.1, theta_i=0.5 * np.pi, gas=gas)


@pytest.fixture(scope="session")
def polar(upstream_spec):
    return ShockPolar(upstream_spec)


@pytest.fixture(scope="session")
def angles(polar):
    return polar.critical_angles()


@pytest.fixture(scope="session")
def background(polar, angles):
    theta_w = 0.5 * (angles["theta_s_star"] + angles["theta_w_star"])
    return polar.background(theta_w)


@pytest.fixture(scope="session")
def certificate(gas, background):
    return certify(gas, background)


@pytest.fixture
def planar_domain(certificate):
    return TruncatedDomain.from_coefficients(certificate.a0, certificate.sigma, R=16.0, ns=48, nt=24)


@pytest.fixture
def isotropic_domain():
    """Quarter-plane sector omega_bar = pi/4 for the Laplacian."""
    return TruncatedDomain(R=8.0, sigma=1.0, T=np.eye(2), ns=65, nt=33)

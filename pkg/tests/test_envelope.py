import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qvelab.dos import EXTREME_EDGE, INTERNAL_MINIMUM
from qvelab.envelope import EnvelopeDomainError, ErrorEnvelope, envelope_cubic_root, error_envelope


def test_worked_example():
    # pi2 = 0, pi1 = 1, rho = 1, N eta = 1e4, unit technical factor
    assert envelope_cubic_root(1.0, 1.0, 0.0, 1e4) == pytest.approx(1.0002000099949e-4, rel=1e-12)
    assert envelope_cubic_root(1.0, 1.0, 0.0, 1e4, tech_factor=0.0) == pytest.approx(1.000099989997e-4, rel=1e-12)


def test_vanishes_for_large_n_eta():
    vals = [envelope_cubic_root(0.5, 1.0, 0.3, ne) for ne in (1e2, 1e4, 1e6, 1e8)]
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-7


coef = st.floats(0.0, 5.0)


@given(coef, coef, coef, st.floats(1.0, 1e8), st.floats(0.0, 3.0))
def test_root_matches_bisection_oracle(rho_t, pi1, pi2, n_eta, tech):
    e = envelope_cubic_root(rho_t, pi1, pi2, n_eta, tech)
    ref = oracles.cubic_root_bisection(rho_t, pi1, pi2, n_eta, tech)
    assert e > 0
    assert e == pytest.approx(ref, rel=1e-10)


def test_rejects_negative_coefficients():
    with pytest.raises(EnvelopeDomainError):
        envelope_cubic_root(-1.0, 1.0, 0.0, 10.0)


def _minimum_envelope(**kw):
    return ErrorEnvelope(0.6, 1, INTERNAL_MINIMUM, 0.0, 0.01, 2000, **kw)


def test_domain_errors():
    env = _minimum_envelope()
    with pytest.raises(EnvelopeDomainError):
        env(0.2, 1e-3)
    edge = ErrorEnvelope(2.0, 1, EXTREME_EDGE, 1.0, 0.0, 2000)
    assert edge.omega_range == (-0.05, 0.5)
    with pytest.raises(EnvelopeDomainError):
        edge(0.6, 1e-3)
    with pytest.raises(EnvelopeDomainError):
        _minimum_envelope(eps_tilde=0.1)


def test_default_technical_exponent():
    assert _minimum_envelope().eps_tilde == pytest.approx(0.1 / 20)


def test_unknown_anchor_rejected(two_block_support):
    with pytest.raises(EnvelopeDomainError):
        error_envelope(two_block_support, None, 0.0, 1000)


@given(st.floats(-0.05, 0.05))
def test_monotone_at_internal_minimum(omega):
    env = _minimum_envelope()
    vals = env.evaluate(omega, np.geomspace(1e-4, 1.0, 100))
    assert np.all(np.diff(vals) < 0)


def test_monotone_at_every_detected_minimum(two_block_dos, two_block_support, cusp_curve):
    etas = np.geomspace(2000 ** -0.9, 1.0, 100)
    for dos, sup in ((two_block_dos, two_block_support), cusp_curve):
        for mn in sup.minima:
            env = error_envelope(sup, dos, mn.tau, 2000)
            lo, hi = env.omega_range
            for om in np.linspace(lo, hi, 7):
                assert np.all(np.diff(env.evaluate(om, etas)) < 0)

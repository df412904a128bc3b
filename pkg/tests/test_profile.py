import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qvelab.profile import (
    ProfileError,
    ProfileSpec,
    build_profile,
    check_assumptions,
    complex_covariance,
    constant_profile,
    profile_from_json,
    two_block_profile,
)


def test_constant_profile_entries():
    p = constant_profile(4)
    assert np.array_equal(p.s, np.full((4, 4), 0.25))


def test_kernel_profile_corner_entry():
    p = build_profile(ProfileSpec("kernel-discretized", 100, {"kernel": "(1 + x*y)/2"}))
    raw = (1 + 0.01 * 1.0) / 2 / 100
    peak = (1 + 1.0) / 2 / 100
    assert p.s[0, 99] == pytest.approx(raw * (1 / 100) / peak, rel=1e-14)
    assert p.s.max() == pytest.approx(1 / 100, rel=1e-14)
    assert p.scale == pytest.approx(1.0, rel=1e-14)


def test_block_profile_pattern():
    a, b = 0.2, 0.1
    p = build_profile(ProfileSpec("block-constant", 4, {"sizes": [2, 2], "variances": [[a, b], [b, a]]}))
    expected = np.array([[a, a, b, b], [a, a, b, b], [b, b, a, a], [b, b, a, a]])
    assert np.array_equal(p.s, expected)
    assert len(p.reduced_matrix) == 2


@pytest.mark.parametrize(
    "entries, msg",
    [
        ([[0.1, 0.2], [0.0, 0.1]], "symmetric"),
        ([[0.1, -0.1], [-0.1, 0.1]], "negative"),
        ([[0.6, 0.1], [0.1, 0.1]], "flatness"),
    ],
)
def test_custom_matrix_rejections(entries, msg):
    with pytest.raises(ProfileError, match=msg):
        build_profile(ProfileSpec("custom-matrix", 2, {"entries": entries}))


def test_zero_row_rejected_for_generated_kinds():
    with pytest.raises(ProfileError, match="zero row"):
        build_profile(ProfileSpec("block-constant", 4, {"sizes": [2, 2], "variances": [[0.0, 0.0], [0.0, 0.25]]}))
    # custom matrices only report it
    p = build_profile(ProfileSpec("custom-matrix", 2, {"entries": [[0.0, 0.0], [0.0, 0.5]]}))
    assert "all-zero row present" in check_assumptions(p).notes


def test_assumptions_constant():
    rep = check_assumptions(constant_profile(4, p=1.0))
    assert rep.flat_ok and rep.primitive_ok


def test_primitivity_needs_power():
    n = 4
    blocks = {"sizes": [2, 2], "variances": [[0.0, 0.25], [0.25, 0.0]]}
    one = build_profile(ProfileSpec("block-constant", n, blocks, p=0.1, l=1))
    assert not check_assumptions(one).primitive_ok
    connected = {"sizes": [2, 2], "variances": [[0.25, 0.25], [0.25, 0.0]]}
    two = build_profile(ProfileSpec("block-constant", n, connected, p=0.1, l=2))
    assert check_assumptions(two).primitive_ok
    assert not check_assumptions(build_profile(ProfileSpec("block-constant", n, connected, p=0.1, l=1))).primitive_ok


def test_q_fullness_margin():
    s = np.full((2, 2), 0.5)
    s[0, 1] = s[1, 0] = 0.15  # min s * N = 0.3
    p = build_profile(ProfileSpec("custom-matrix", 2, {"entries": s.tolist()}, q=0.25))
    rep = check_assumptions(p)
    assert rep.q_full_ok and rep.q_full_margin == pytest.approx(0.05)


def test_json_round_trip():
    p = two_block_profile(40)
    q = profile_from_json(p.to_json())
    assert np.array_equal(p.s, q.s) and q.digest == p.digest


def test_complex_covariance_isotropic():
    c = complex_covariance(np.array([[0.4]]))
    assert np.allclose(c[0, 0], [[0.2, 0.0], [0.0, 0.2]])


@st.composite
def flat_primitive(draw, n_max=12):
    n = draw(st.integers(3, n_max))
    vals = draw(st.lists(st.floats(0.2, 1.0), min_size=n * n, max_size=n * n))
    a = np.array(vals).reshape(n, n)
    s = (a + a.T) / 2 / n
    return build_profile(ProfileSpec("custom-matrix", n, {"entries": s.tolist()}, p=0.1))


@given(flat_primitive())
def test_built_profiles_are_exactly_symmetric(p):
    assert np.max(np.abs(p.s - p.s.T)) == 0.0


@given(flat_primitive())
def test_primitivity_monotone_in_power(p):
    n = p.n
    row_min = p.s.sum(axis=1).min()
    sl = p.s.copy()
    for _ in range(3):
        nxt = sl @ p.s
        # (S^{L+1})_ij >= min row sum * min_k (S^L)_kj
        assert nxt.min() * n >= row_min * sl.min() * n * (1 - 1e-12)
        sl = nxt


def test_profile_serializes_to_documented_schema():
    d = json.loads(constant_profile(3).to_json())
    assert {"n", "kind", "params", "p", "P", "L", "q"} <= set(d)

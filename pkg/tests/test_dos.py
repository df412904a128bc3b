import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qvelab.dos import (
    EXTREME_EDGE,
    INTERNAL_EDGE,
    INTERNAL_MINIMUM,
    DosCurve,
    Minimum,
    ResolutionError,
    SupportError,
    SupportStructure,
    density_of_states,
    detect_support,
    fit_edge_shapes,
    harmonic_extension,
    kappa,
    local_gap_size,
    predicted_shape,
    semicircle_dos,
)
from qvelab.profile import constant_profile
from qvelab.qve import solve_many, solve_point

TWO_BLOCK_R = np.array([[0.017, 0.15], [0.85, 0.003]])
TWO_BLOCK_WEIGHTS = np.array([0.85, 0.15])


@pytest.fixture(scope="module")
def quartic_edges():
    return oracles.two_class_edges(TWO_BLOCK_R, -2.1, 2.1, scan=4201)


def test_semicircle_center_and_outside():
    d = density_of_states(constant_profile(100), [0.0, 3.0], eta_small=1e-4)
    assert d.rho[0] == pytest.approx(1 / np.pi, abs=1e-3)
    assert d.rho[1] <= 1e-3


def test_two_block_density_against_quartic(two_block_dos):
    taus = two_block_dos.tau_grid
    ref = []
    for t in taus:
        x, y = oracles.two_class_solution(TWO_BLOCK_R, complex(t, 1e-6))
        ref.append((TWO_BLOCK_WEIGHTS[0] * x.imag + TWO_BLOCK_WEIGHTS[1] * y.imag) / np.pi)
    assert np.max(np.abs(two_block_dos.rho - np.array(ref))) < 1e-3


def test_semicircle_harmonic_extension_at_i(semicircle_curve):
    # Im m_sc(i) / pi = (sqrt5 - 1)/(2 pi)
    expected = (np.sqrt(5) - 1) / (2 * np.pi)
    assert harmonic_extension(semicircle_curve, 1j) == pytest.approx(expected, abs=1e-5)
    assert harmonic_extension(semicircle_curve, 1j, method="quad") == pytest.approx(expected, abs=1e-5)


def test_harmonic_extension_large_eta_decay(semicircle_curve):
    for eta in (1e2, 1e3):
        assert harmonic_extension(semicircle_curve, complex(0.2, eta)) * np.pi * eta == pytest.approx(1.0, rel=1e-3)


def test_harmonic_extension_in_gap(two_block, two_block_dos):
    z = 0.39 + 1e-2j
    direct = solve_point(two_block, z).density
    assert harmonic_extension(two_block_dos, z) == pytest.approx(direct, abs=1e-4)


def test_harmonic_extension_refusals(semicircle_curve):
    with pytest.raises(ResolutionError):
        harmonic_extension(semicircle_curve, 0.1 + 1e-3j)
    with pytest.raises(ResolutionError):
        harmonic_extension(semicircle_curve, 0.1 + 1e-7j)


@given(st.floats(-2.5, 2.5), st.floats(0.01, 3.0))
def test_harmonic_extension_consistent_with_solver(tau, eta):
    from qvelab.profile import two_block_profile

    p = two_block_profile(1000)
    curve = _two_block_curve()
    assert abs(harmonic_extension(curve, complex(tau, eta)) - solve_many(p, [complex(tau, eta)]).density[0]) < 1e-3


_CACHE = {}


def _two_block_curve():
    if "c" not in _CACHE:
        from qvelab.profile import two_block_profile

        _CACHE["c"] = density_of_states(two_block_profile(1000), np.linspace(-2.5, 2.5, 2001))
    return _CACHE["c"]


def test_semicircle_support(semicircle_curve):
    sup = detect_support(semicircle_curve, profile=constant_profile(1000))
    (a, b), = sup.intervals
    h = semicircle_curve.spacing
    assert abs(a + 2) <= h and abs(b - 2) <= h
    assert [m.kind for m in sup.minima] == [EXTREME_EDGE, EXTREME_EDGE]


def test_two_block_support_against_quartic(two_block_dos, two_block_support, quartic_edges):
    found = [x for iv in two_block_support.intervals for x in iv]
    assert len(found) == len(quartic_edges) == 6
    assert np.max(np.abs(np.array(found) - quartic_edges)) <= 2 * two_block_dos.spacing
    kinds = [m.kind for m in two_block_support.minima]
    assert kinds.count(INTERNAL_EDGE) == 4 and kinds.count(EXTREME_EDGE) == 2


def test_cusp_profile_single_interval(cusp_profile, cusp_curve):
    dos, sup = cusp_curve
    assert len(sup.intervals) == 1
    mins = [m for m in sup.minima if m.kind == INTERNAL_MINIMUM]
    assert len(mins) == 2 and mins[0].tau == pytest.approx(-mins[1].tau, abs=1e-8)
    # the minimum closes as eta -> 0
    assert solve_many(cusp_profile, [mins[1].tau + 1e-12j]).density[0] < 1e-3


def test_empty_support_and_merge_warning():
    flat = DosCurve(np.linspace(-1, 1, 11), np.zeros(11), 1e-6)
    with pytest.raises(SupportError):
        detect_support(flat)
    rho = np.ones(21)
    rho[10] = 0.0  # a gap one grid point wide
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        sup = detect_support(DosCurve(np.linspace(-1, 1, 21), rho, 1e-6))
    assert len(sup.intervals) == 1 and any("unresolved" in w for w in sup.warnings)


def _support(intervals):
    return SupportStructure(intervals, [], 0.05, 0.25)


@pytest.mark.parametrize(
    "tau, expected",
    [(-2.5, 1.0), (0.0, 0.2), (-1.0, 0.0), (0.12, 0.2), (0.2, 0.0), (1.98, 1.0)],
)
def test_local_gap_size(tau, expected):
    sup = _support([(-2.0, -0.1), (0.1, 2.0)])
    assert local_gap_size(sup, tau, 0.05) == pytest.approx(expected)


def test_kappa_bulk_default():
    sup = _support([(-2.0, 2.0)])
    k = kappa(sup, 0.3 + 1e-3j, 1000, rho_z=0.3)
    assert k.branch == "default" and k.value == pytest.approx(1 / 0.3)


def test_kappa_zero_distance_default():
    sup = _support([(-2.0, 2.0)])
    assert kappa(sup, 0.0 + 1e-9j, 100, rho_z=0.0 + 1e-6, gamma=0.1).branch == "default"


def test_kappa_improved_branch_far_outside():
    sup = _support([(-2.0, 2.0)])
    n, z = 1000, complex(3.0, 1.0)
    k = kappa(sup, z, n, rho_z=1e-9)
    dist = np.hypot(1.0, 1.0)
    w = 1.0 + 1e-9
    second = 0.5 * (1.0 / (dist * w) + 1.0 / (n * 1.0 * np.sqrt(dist * w)))
    assert k.branch == "improved"
    assert k.value == pytest.approx(second, rel=1e-12)
    assert k.value <= k.default


@given(st.floats(-4, 4), st.floats(1e-4, 2), st.floats(0, 0.5))
def test_kappa_improved_never_exceeds_default(tau, eta, rho):
    sup = _support([(-2.0, -0.3), (0.3, 2.0)])
    k = kappa(sup, complex(tau, eta), 500, rho_z=rho + 1e-6)
    assert k.value <= k.default * (1 + 1e-12)


def test_shape_exponents(semicircle_curve, cusp_profile, cusp_curve):
    sup = detect_support(semicircle_curve, profile=constant_profile(1000))
    for fit in fit_edge_shapes(semicircle_curve, sup, profile=constant_profile(1000)):
        assert fit.reliable and fit.exponent == pytest.approx(0.5, abs=0.05)
    dos, csup = cusp_curve
    fits = fit_edge_shapes(dos, csup, profile=cusp_profile, eta=1e-12, omega_min=0.011, omega_max=0.05)
    exps = [f.exponent for f in fits if f.regime == INTERNAL_MINIMUM]
    assert len(exps) == 2 and all(abs(e - 1 / 3) <= 0.05 for e in exps)


def test_internal_edge_square_root(two_block, two_block_dos, two_block_support):
    fits = fit_edge_shapes(two_block_dos, two_block_support, profile=two_block, eta=1e-12, omega_min=1e-4)
    for f in fits:
        if f.regime == INTERNAL_EDGE:
            assert f.reliable and f.exponent == pytest.approx(0.5, abs=0.05)


def test_predicted_shapes():
    assert predicted_shape(EXTREME_EDGE, 0.04, 0.0) == pytest.approx(0.2)
    assert predicted_shape(INTERNAL_MINIMUM, 0.008, 0.0, rho_min=0.1) == pytest.approx(0.3)
    assert predicted_shape("away", 1.0, 1e-3) == pytest.approx(1e-3, rel=1e-5)
    with pytest.raises(ValueError):
        predicted_shape("nowhere", 0.1, 0.1)


def test_normalization_and_symmetry(two_block_dos):
    h, eta = two_block_dos.spacing, two_block_dos.eta_used
    assert abs(two_block_dos.mass - 1) <= 3 * (h + eta)
    assert np.allclose(two_block_dos.rho, two_block_dos.rho[::-1], atol=1e-10)
    assert np.all(two_block_dos.rho >= 0)


def test_classical_index_center_even_n():
    d = semicircle_dos(np.linspace(-2.1, 2.1, 1001))
    for n in (10, 4000):
        assert d.classical_index(0.0, n) == n // 2


def test_cdf_and_quantile_roundtrip():
    d = semicircle_dos(np.linspace(-2.1, 2.1, 2001))
    p = np.array([0.1, 0.5, 0.9])
    assert np.allclose(d.cdf(d.quantile(p)), p, atol=1e-9)


def test_extrapolation_reduces_center_error():
    p = constant_profile(100)
    plain = density_of_states(p, [1.5], eta_small=1e-2)
    extra = density_of_states(p, [1.5], eta_small=1e-2, extrapolate=True)
    exact = np.sqrt(4 - 1.5**2) / (2 * np.pi)
    assert extra.eta_used == 0.0
    assert abs(extra.rho[0] - exact) < abs(plain.rho[0] - exact)


def test_csv_export():
    d = semicircle_dos([-1.0, 0.0, 1.0])
    lines = d.to_csv().splitlines()
    assert lines[0] == "tau,rho" and len(lines) == 4


def test_support_json_has_classifications(two_block_support):
    import json

    d = json.loads(two_block_support.to_json())
    assert {m["kind"] for m in d["minima"]} == {EXTREME_EDGE, INTERNAL_EDGE}
    assert len(d["gaps"]) == 2


def test_minimum_record_defaults():
    m = Minimum(0.0, INTERNAL_MINIMUM, 1)
    assert m.rho == 0.0 and m.interval == 0

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qvelab.profile import ProfileSpec, build_profile, constant_profile, two_block_profile
from qvelab.qve import (
    QveConvergenceError,
    SolverConfig,
    SpectralPoint,
    check_bounded_solution,
    full_residual,
    semicircle_stieltjes,
    solve_many,
    solve_point,
    solve_sweep,
    stability_operator,
    sweep_to_jsonl,
)

GOLDEN = (np.sqrt(5) - 1) / 2


@pytest.mark.parametrize("z, expected", [(1j, 1j * GOLDEN), (2j, 1j * (np.sqrt(2) - 1))])
def test_constant_profile_closed_form(z, expected):
    sol = solve_point(constant_profile(8), z)
    assert sol.converged
    assert np.allclose(sol.m, expected, atol=1e-12, rtol=0)


def test_semicircle_branch_matches_quadratic_root():
    for z in [0.3 + 1e-6j, -1.9 + 1e-3j, 2.5 + 0.1j, 10j, -4 + 1j]:
        assert abs(semicircle_stieltjes(z) - oracles.semicircle_m(z)) < 1e-14


def _block_profile(n, sizes, v):
    return build_profile(ProfileSpec("block-constant", n, {"sizes": sizes, "scaled_variances": v}, p=0.01))


# Plain undamped iteration m <- -1/(z + S m) continued from eta = 10 down over 200
# geometric levels, each iterated to 1e-15 (oracles.undamped_continuation; about 9 min),
# for two equal blocks with intra 1/N and inter 0.2/N at z = 0.5 + 1e-3 i. Final residual
# 1.5e-14. The class equations do not depend on N, so the value holds for every even N.
FROZEN_UNDAMPED = -0.4163825024323295 + 1.2210735087578648j


@pytest.mark.parametrize("n", [4, 100, 1000])
def test_two_block_matches_frozen_undamped_iteration(n):
    p = _block_profile(n, [n // 2, n // 2], [[1.0, 0.2], [0.2, 1.0]])
    sol = solve_point(p, 0.5 + 1e-3j, SolverConfig(tol=1e-12))
    assert sol.converged
    assert np.max(np.abs(sol.m - FROZEN_UNDAMPED)) < 1e-10


def test_two_block_matches_quartic_oracle():
    p = _block_profile(100, [50, 50], [[1.0, 0.2], [0.2, 1.0]])
    z = 0.5 + 1e-3j
    sol = solve_point(p, z, SolverConfig(tol=1e-12))
    x, y = oracles.two_class_solution(p.reduced_matrix, z)
    assert sol.converged
    assert np.max(np.abs(sol.m[:50] - x)) < 1e-10
    assert np.max(np.abs(sol.m[50:] - y)) < 1e-10


@st.composite
def two_class(draw):
    n1 = draw(st.integers(2, 30))
    n2 = draw(st.integers(2, 30))
    a, b, c = (draw(st.floats(0.05, 1.0)) for _ in range(3))
    tau = draw(st.floats(-3.0, 3.0))
    eta = draw(st.sampled_from([1e-1, 1e-2, 1e-3]))
    n = n1 + n2
    r = np.array([[a * n1 / n, b * n2 / n], [b * n1 / n, c * n2 / n]])
    return _block_profile(n, [n1, n2], [[a, b], [b, c]]), r, complex(tau, eta)


@given(two_class())
def test_two_class_random_against_quartic(case):
    p, r, z = case
    sol = solve_many(p, [z])
    ref = oracles.two_class_solution(r, z)
    assert ref is not None and sol.converged[0]
    m = sol.full()[0]
    assert np.allclose([m[0], m[-1]], ref, atol=1e-8, rtol=0)


def test_sweep_semicircle_small_eta():
    sols = solve_sweep(constant_profile(50), 0.0, [1.0, 0.1, 0.01])
    assert abs(sols[-1].m[0].imag - semicircle_stieltjes(0.01j).imag) < 2e-2
    assert sols[-1].m[0].imag == pytest.approx(semicircle_stieltjes(0.01j).imag, abs=1e-9)


def test_single_level_sweep_equals_point():
    p = two_block_profile(60)
    a = solve_sweep(p, 0.3, [5.0])[0]
    b = solve_point(p, SpectralPoint(0.3, 5.0))
    assert np.array_equal(a.m, b.m)


def test_sweep_rejects_increasing_grid():
    with pytest.raises(ValueError):
        solve_sweep(constant_profile(4), 0.0, [0.1, 1.0])


def test_sweep_failure_carries_eta():
    cfg = SolverConfig(max_iter=1, newton_fallback=False, polish=False)
    with pytest.raises(QveConvergenceError) as info:
        solve_sweep(two_block_profile(60), 0.3, [1.0, 1e-3], cfg)
    assert info.value.eta in (1.0, 1e-3)


def test_in_gap_density_linear_in_eta(two_block):
    # tau = 0.39 sits inside the gap (0.2356, 0.5406)
    etas = np.geomspace(1e-2, 1e-4, 9)
    batch = solve_many(two_block, 0.39 + 1j * etas)
    slopes = batch.density / etas
    assert np.ptp(slopes) / slopes.mean() < 0.02
    x, y = oracles.two_class_solution(two_block.reduced_matrix, 0.39 + 1e-4j)
    oracle = (0.85 * x.imag + 0.15 * y.imag) / np.pi / 1e-4
    assert slopes[-1] == pytest.approx(oracle, rel=1e-8)


def test_stability_operator_closed_form():
    p = constant_profile(6)
    sol = solve_point(p, 1j)
    op = stability_operator(p, sol)
    m2 = -GOLDEN**2
    assert np.allclose(op.matrix, np.eye(6) - m2 * p.s)
    assert op.smallest_singular_value == pytest.approx(min(abs(1 - m2), 1.0), rel=1e-12)


@pytest.mark.parametrize("z", [10.0 + 1e-3j, -10 + 1e-2j, 10j, 6 + 8j])
def test_stability_inverse_bounded_far_out(two_block, z):
    p = two_block_profile(40)
    op = stability_operator(p, solve_point(p, z))
    assert op.inverse_sup_norm <= 2


def test_bounded_solution_checks():
    p = constant_profile(10)
    grid = [complex(t, 1e-6) for t in np.linspace(-3, 3, 61)]
    res = check_bounded_solution(p, grid, big_p=1.0 + 1e-6)
    assert res.ok and res.observed_max <= 1 + 1e-6
    far = check_bounded_solution(two_block_profile(40), [10j], big_p=0.2)
    assert far.ok and far.observed_max <= 0.1
    with pytest.raises(ValueError):
        check_bounded_solution(p, [])


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0)
    with pytest.raises(ValueError):
        SolverConfig(damping=1.5)
    with pytest.raises(ValueError):
        SpectralPoint(0.0, 0.0)


def test_warm_start_validation():
    p = constant_profile(4)
    with pytest.raises(ValueError):
        solve_point(p, 1j, warm_start=np.ones(4, dtype=complex))
    with pytest.raises(ValueError):
        solve_point(p, 1j, warm_start=1j * np.ones(3))


def test_jsonl_export():
    sols = solve_sweep(constant_profile(3), 0.1, [1.0, 0.5])
    lines = sweep_to_jsonl(sols).splitlines()
    rec = json.loads(lines[1])
    assert len(lines) == 2 and rec["eta"] == 0.5 and len(rec["re_m"]) == 3
    assert {"tau", "eta", "re_m", "im_m", "residual", "iterations"} <= set(rec)


@st.composite
def flat_profile(draw):
    n = draw(st.integers(3, 8))
    vals = draw(st.lists(st.floats(0.1, 1.0), min_size=n * n, max_size=n * n))
    a = np.array(vals).reshape(n, n)
    return build_profile(ProfileSpec("custom-matrix", n, {"entries": ((a + a.T) / 2 / n).tolist()}))


spectral = st.tuples(st.floats(-3, 3), st.sampled_from([1e-4, 1e-2, 0.5, 5.0]))


@given(flat_profile(), spectral)
def test_residual_half_plane_and_symmetry(p, zt):
    tau, eta = zt
    sol = solve_point(p, SpectralPoint(tau, eta))
    mirror = solve_point(p, SpectralPoint(-tau, eta))
    assert sol.converged and mirror.converged
    assert sol.residual <= 1e-10 and full_residual(p, sol.z.z, sol.m) == sol.residual
    assert np.all(sol.m.imag > 0)
    assert np.allclose(mirror.m, -np.conj(sol.m), atol=1e-9, rtol=0)


@given(flat_profile(), st.floats(1e-3, 50))
def test_stieltjes_decay_on_imaginary_axis(p, eta):
    m = solve_point(p, complex(0, eta)).m
    assert np.all(np.abs(m) <= 1 / eta * (1 + 1e-9))


@given(flat_profile())
def test_components_comparable(p):
    zs = [complex(t, e) for t in (-1.5, 0.0, 1.0) for e in (1e-3, 1.0)]
    batch = solve_many(p, zs)
    m = np.abs(batch.full())
    assert np.all(m.max(axis=1) / m.min(axis=1) < 50)

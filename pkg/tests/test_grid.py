import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sl2lab.grid import (
    GridFunction,
    GridMeasure,
    GridOperator,
    NonConvergenceError,
    ProjGrid,
    SpectralReport,
    apply_markov,
    apply_perturbed,
    contraction_probe,
    eigen_expansion,
    equidistribution_probe,
    fit_rate,
    grid_operator,
    leading_eigen,
    norm_w12,
    seminorm_logp,
    stationary_measure,
    wspace_upper_norm,
)
from sl2lab.measures import ModelMeasure, convolution_power, reference_measure
from sl2lab.mobius import GroupElement, ProjPoint, act_vec, cocycle_vec, dist_vec

from . import shared
from .conftest import group_elements

MU = reference_measure()
A2 = GroupElement.diag(2.0)
INTERP_TOL = 1e-3

coef = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def smooth(grid: ProjGrid, c) -> np.ndarray:
    """Span of 1, |v0|^2 and the real and imaginary parts of v0 conj(v1)."""
    p = grid.points
    cross = p[:, 0] * np.conj(p[:, 1])
    return c[0] + c[1] * np.abs(p[:, 0]) ** 2 + c[2] * cross.real + c[3] * cross.imag


smooth_coefs = st.lists(coef, min_size=4, max_size=4)


# grid construction


@pytest.mark.parametrize("m", [8, 32, 64, 256])
def test_weights_sum_to_one(m):
    grid = shared.grid(m) if m == 256 else ProjGrid(m)
    assert abs(grid.weights.sum() - 1) <= 1e-6


def test_chart_representations_agree(grid32):
    g = grid32
    for i in range(0, g.n_nodes, 7):
        z = complex(g.coords[i])
        v = [z, 1] if g.chart[i] == 0 else [1, z]
        assert ProjPoint(g.points[i]).isclose(ProjPoint(v), 1e-14)
        if z != 0:
            other = [1, 1 / z] if g.chart[i] == 0 else [1 / z, 1]
            assert ProjPoint(g.points[i]).isclose(ProjPoint(other), 1e-12)


def test_grid_rejects_bad_resolution():
    with pytest.raises(ValueError):
        ProjGrid(7)
    with pytest.raises(ValueError):
        ProjGrid(2)


def test_grid_function_and_measure_validation(grid32):
    with pytest.raises(ValueError):
        GridFunction(grid32, np.zeros(3))
    with pytest.raises(ValueError):
        GridFunction(grid32, np.full(grid32.n_nodes, np.nan))
    with pytest.raises(ValueError):
        GridMeasure(grid32, np.full(grid32.n_nodes, 1.0))
    bad = np.full(grid32.n_nodes, 1.0 / grid32.n_nodes)
    bad[0] = -bad[0]
    with pytest.raises(ValueError):
        GridMeasure(grid32, bad / bad.sum())


def test_serialization(tmp_path, grid32):
    u = GridFunction(grid32, np.arange(grid32.n_nodes) * (1 + 1j))
    u.write_csv(tmp_path / "u.csv")
    rows = list(csv.reader((tmp_path / "u.csv").open()))
    assert rows[0] == ["chart", "ix", "iy", "re", "im"]
    assert len(rows) == grid32.n_nodes + 1
    c, ix, iy = (int(x) for x in rows[40][:3])
    assert grid32.node_index(c, ix, iy) == 39
    assert float(rows[40][3]) == 39.0 and float(rows[40][4]) == 39.0
    GridMeasure.fubini_study(grid32).write_csv(tmp_path / "m.csv")
    rows = list(csv.reader((tmp_path / "m.csv").open()))
    assert rows[0] == ["chart", "ix", "iy", "mass"]
    assert sum(float(r[3]) for r in rows[1:]) == pytest.approx(1, abs=1e-12)


# Markov operator


def test_markov_stochastic(grid64):
    pu = apply_markov(MU, GridFunction(grid64, np.ones(grid64.n_nodes)))
    assert np.max(np.abs(pu.values - 1)) <= 1e-12


@given(st.lists(st.floats(0, 5), min_size=4, max_size=4))
@settings(max_examples=20)
def test_markov_positive(c):
    grid = ProjGrid(32)
    u = np.abs(smooth(grid, c))
    assert np.min(grid_operator(MU, grid).apply(u)) >= -1e-12


@given(group_elements(scale=1.5), smooth_coefs)
@settings(max_examples=20)
def test_dirac_measure_is_interpolated_pullback(g, c):
    grid = ProjGrid(32)
    u = GridFunction(grid, smooth(grid, c))
    pu = apply_markov(ModelMeasure.dirac(g), u)
    # same stencil, different summation order
    assert np.allclose(pu.values, u.interp(act_vec(g.m, grid.points)), rtol=0, atol=1e-14)


def test_half_turn_pullback_matches_direct_loop():
    # direct-evaluation oracle: z -> 1/z fixes [1:1] and [1:-1]
    grid = shared.grid(256)
    half_turn = GroupElement([[0, 1j], [1j, 0]])
    u = grid.function(lambda p: np.abs(p[:, 1]) ** 2)  # d(x, [1:0])^2 at unit vectors
    pu = apply_markov(ModelMeasure.dirac(half_turn), u).values
    direct = np.empty(grid.n_nodes)
    for i, v in enumerate(grid.points):
        w = half_turn.m @ v
        direct[i] = abs(w[1]) ** 2 / (abs(w[0]) ** 2 + abs(w[1]) ** 2)
    assert np.max(np.abs(pu - direct)) <= INTERP_TOL


# perturbed operators


@given(smooth_coefs)
@settings(max_examples=10)
def test_perturbed_at_zero_is_markov(c):
    grid = ProjGrid(32)
    u = GridFunction(grid, smooth(grid, c))
    assert np.array_equal(apply_perturbed(MU, 0.0, 0, u).values, apply_markov(MU, u).values)


@given(group_elements(scale=1.5), st.floats(-3, 3), smooth_coefs)
@settings(max_examples=20)
def test_perturbed_dirac_is_phase_times_pullback(g, xi, c):
    grid = ProjGrid(32)
    u = GridFunction(grid, smooth(grid, c))
    pu = apply_perturbed(ModelMeasure.dirac(g), xi, 0, u).values
    pulled = u.interp(act_vec(g.m, grid.points))
    phase = np.exp(1j * xi * cocycle_vec(g.m, grid.points))
    assert np.allclose(pu, phase * pulled, rtol=0, atol=1e-14)
    assert np.allclose(np.abs(pu), np.abs(pulled), rtol=0, atol=1e-13)


@given(st.floats(-4, 4), smooth_coefs)
@settings(max_examples=20)
def test_modulus_bound(xi, c):
    grid = ProjGrid(32)
    op = grid_operator(MU, grid)
    u = smooth(grid, c)
    assert np.all(np.abs(op.apply(u, xi)) <= op.apply(np.abs(u)) + 1e-12)


def test_negative_derivative_order_rejected(grid32):
    with pytest.raises(ValueError):
        grid_operator(MU, grid32).apply(np.ones(grid32.n_nodes), 0.3, -1)


def test_forward_difference_within_second_derivative_bound(grid64):
    # Taylor bound: the forward-difference error is at most h/2 sup |P^(2) u|
    op = grid_operator(MU, grid64)
    u = smooth(grid64, [0, 0, 1, 0])
    xi, h = 0.6, 1e-4
    fd = (op.apply(u, xi + h) - op.apply(u, xi)) / h
    err = np.max(np.abs(fd - op.apply(u, xi, 1)))
    c = np.max(np.abs(op.apply(u, xi, 2)))
    assert err <= c * h


def test_centered_difference_richardson_ratio(grid64):
    # centred differences are second order: halving h divides the error by 4
    op = grid_operator(MU, grid64)
    u = smooth(grid64, [0, 0, 1, 0])
    xi = 0.6
    d1 = op.apply(u, xi, 1)
    errs = [np.max(np.abs((op.apply(u, xi + h) - op.apply(u, xi - h)) / (2 * h) - d1)) for h in (0.1, 0.05)]
    assert 3.5 <= errs[0] / errs[1] <= 4.5


@pytest.mark.parametrize("xi", [0.0, 0.7])
def test_two_steps_match_convolution_square(xi):
    grid = ProjGrid(128)
    op = grid_operator(MU, grid)
    op2 = GridOperator(convolution_power(MU, 2), grid)
    u = smooth(grid, [0, 1, 1, 0])
    twice = op.apply(op.apply(u, xi), xi)
    assert np.max(np.abs(twice - op2.apply(u, xi))) <= 2 * INTERP_TOL


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.integers(0, 2**32 - 1))
@settings(max_examples=20)
def test_adjointness(c, seed):
    grid = ProjGrid(32)
    op = grid_operator(MU, grid)
    u = smooth(grid, c).real
    m = np.random.default_rng(seed).random(grid.n_nodes)
    m /= m.sum()
    assert abs(np.dot(op.apply(u), m) - np.dot(u, op.push(m))) <= 1e-8


# stationary measure


def test_rotation_iteration_preserves_mass(grid64):
    # a rotation has no unique attracting measure, so the iteration does not settle
    rot = ModelMeasure.dirac(GroupElement.rotation(2 * math.pi / 3))
    with pytest.raises(NonConvergenceError) as info:
        stationary_measure(rot, grid64, max_iter=50)
    assert info.value.last_change > 0
    assert info.value.result.masses.sum() == pytest.approx(1, abs=1e-12)


def test_diagonal_mass_concentrates_at_attractor(grid64):
    nu = stationary_measure(ModelMeasure.dirac(A2), grid64)
    d = dist_vec(grid64.points, np.array([[1, 0]], dtype=complex))
    assert nu.masses[d <= 0.05].sum() >= 0.99


def test_stationary_nonconvergence_reports_last_change(grid32):
    with pytest.raises(NonConvergenceError) as info:
        stationary_measure(MU, grid32, max_iter=2)
    assert info.value.last_change > 1e-12
    assert isinstance(info.value.result, GridMeasure)


def test_stationary_measure_is_fixed_point(grid64):
    nu = stationary_measure(MU, grid64)
    pushed = grid_operator(MU, grid64).push(nu.masses)
    assert 0.5 * np.abs(pushed - nu.masses).sum() <= 1e-11


# norms


def test_w12_constants(grid32):
    assert norm_w12(GridFunction(grid32, np.ones(grid32.n_nodes))) == pytest.approx(1, abs=1e-6)
    c = 2.5 - 1j
    assert norm_w12(GridFunction(grid32, np.full(grid32.n_nodes, c))) == pytest.approx(abs(c), rel=1e-6)


def test_w12_refinement():
    # grid-refinement oracle: the 4x finer grid
    f = lambda p: (p[:, 0] * np.conj(p[:, 1])).real  # noqa: E731  Re z / (1 + |z|^2)
    coarse = norm_w12(ProjGrid(64).function(f))
    fine = norm_w12(shared.grid(256).function(f))
    assert abs(coarse - fine) <= 0.01 * fine


@pytest.mark.parametrize("m", [32, 128])
def test_seminorm_constant_and_homogeneous(m):
    grid = ProjGrid(m)
    assert seminorm_logp(GridFunction(grid, np.full(grid.n_nodes, 3.0)), 2).value == 0
    u = GridFunction(grid, smooth(grid, [0, 1, 2, -1]))
    base = seminorm_logp(u, 1.5)
    assert base.lower_bound and base.n_pairs > 0 and base.policy
    for c in (0.5, -3.0, 2j):
        assert seminorm_logp(GridFunction(grid, c * u.values), 1.5).value == pytest.approx(abs(c) * base.value, rel=1e-12)


def test_seminorm_grows_with_steepness(grid32):
    d = dist_vec(grid32.points, np.array([[1, 1]], dtype=complex) / math.sqrt(2))
    vals = [seminorm_logp(GridFunction(grid32, np.exp(-((d / w) ** 2))), 1).value for w in (0.8, 0.4, 0.2)]
    assert vals[0] < vals[1] < vals[2]


@given(smooth_coefs, smooth_coefs, st.floats(0.5, 3))
@settings(max_examples=10)
def test_seminorm_product_bound(a, b, p):
    # both sides evaluated on the same pair set
    grid = ProjGrid(32)
    u = GridFunction(grid, smooth(grid, a))
    v = GridFunction(grid, smooth(grid, b))
    lhs = seminorm_logp(GridFunction(grid, u.values * v.values), p).value
    rhs = u.sup() * seminorm_logp(v, p).value + seminorm_logp(u, p).value * v.sup()
    assert lhs <= rhs * (1 + 1e-12) + 1e-14


def test_seminorm_rejects_nonpositive_p(grid32):
    with pytest.raises(ValueError):
        seminorm_logp(GridFunction(grid32, np.ones(grid32.n_nodes)), 0)


def test_wspace_examples(grid32):
    one = GridFunction(grid32, np.ones(grid32.n_nodes))
    assert wspace_upper_norm(one, 2.0) == pytest.approx(1, abs=1e-6)
    with pytest.raises(ValueError):
        wspace_upper_norm(one, 1.5)


@given(smooth_coefs, coef, st.floats(1.6, 4))
@settings(max_examples=10)
def test_wspace_homogeneous_and_dominates_sup(c, k, p):
    grid = ProjGrid(32)
    u = GridFunction(grid, smooth(grid, c))
    base = wspace_upper_norm(u, p)
    assert u.sup() <= base + 1e-12
    scaled = wspace_upper_norm(GridFunction(grid, k * u.values), p)
    assert scaled == pytest.approx(abs(k) * base, rel=1e-9, abs=1e-12)


# spectral probes


def test_leading_eigen_at_zero():
    rep = leading_eigen(MU, 0.0, grid=shared.grid(256))
    assert rep.converged
    assert abs(rep.leading_eigenvalue - 1) <= 1e-6
    v = rep.eigenfunction.values
    assert np.max(np.abs(v - v.mean())) <= 1e-4 * abs(v.mean())


def test_leading_eigen_rotation_is_one(grid32):
    rep = leading_eigen(ModelMeasure.dirac(GroupElement.rotation(1.0)), 0.3, grid=grid32)
    assert abs(rep.leading_eigenvalue - 1) <= 1e-12


def test_leading_eigen_modulus_matches_clt_variance():
    # Monte Carlo variance oracle: log |lambda_xi| ~ -a^2 xi^2 / 2
    xi = 0.1
    rep = leading_eigen(MU, xi, grid=shared.grid(256))
    a2 = shared.reference_walk().var_hat
    assert rep.converged and abs(rep.leading_eigenvalue) < 1
    assert abs(math.log(abs(rep.leading_eigenvalue)) + a2 * xi**2 / 2) <= 0.1 * a2 * xi**2 / 2


def test_eigen_expansion_rotation(grid32):
    g, big_a, a2 = eigen_expansion(ModelMeasure.dirac(GroupElement.rotation(1.0)), 0.02, grid32)
    assert abs(g) <= 1e-12 and abs(big_a) <= 1e-9 and abs(a2) <= 1e-9


def test_eigen_expansion_diagonal_converges_to_log2():
    mu = ModelMeasure.dirac(A2)
    coarse = eigen_expansion(mu, 0.02, ProjGrid(32))
    fine = eigen_expansion(mu, 0.02, ProjGrid(64))
    for res in (coarse, fine):
        assert res[2] == pytest.approx(res[1] - res[0] ** 2, abs=1e-15)
    assert abs(fine[0] - math.log(2)) < abs(coarse[0] - math.log(2)) <= 5e-3
    assert abs(fine[2]) < abs(coarse[2]) <= 5e-3


def test_eigen_expansion_rejects_step(grid32):
    with pytest.raises(ValueError):
        eigen_expansion(MU, 0.5, grid32)


def test_contraction_probe_rotation_does_not_contract(grid64):
    rep = contraction_probe(ModelMeasure.dirac(GroupElement.rotation(1.0)), 1.0, grid=grid64)
    assert abs(rep.radius_estimate - 1) <= 1e-3
    assert len(rep.decay_profile) == 60 and np.all(rep.decay_profile > 0)


def test_contraction_probe_arguments(grid32):
    with pytest.raises(ValueError):
        contraction_probe(MU, 0.0, grid=grid32)
    with pytest.raises(ValueError):
        contraction_probe(MU, 1.0, N=10, grid=grid32)


def test_spectral_report_json_has_profile(grid32):
    rep = contraction_probe(MU, 1.0, N=20, grid=grid32)
    data = json.loads(rep.to_json())
    assert len(data["decay_profile"]) == 20
    assert data["radius_estimate"] == rep.radius_estimate
    assert isinstance(SpectralReport(0.0, 1, None).to_dict()["leading_eigenvalue"], list)


def test_equidistribution_constant_is_zero(grid32):
    prof = equidistribution_probe(MU, GridFunction(grid32, np.full(grid32.n_nodes, 4.0)), 10)
    assert np.max(prof) <= 1e-12


def test_equidistribution_rotation_does_not_decay(grid64):
    rot = ModelMeasure.dirac(GroupElement.rotation(2 * math.pi / 5))
    u = GridFunction(grid64, smooth(grid64, [0, 1, 1, 0]).real)
    prof = equidistribution_probe(rot, u, 40, nu=GridMeasure.fubini_study(grid64))
    assert prof[-1] >= 0.9 * prof[0]


def test_fit_rate_recovers_geometric_sequence():
    n = np.arange(1, 41)
    c, tau = fit_rate(3.0 * 0.8**n)
    assert c == pytest.approx(3.0, rel=1e-12) and tau == pytest.approx(0.8, rel=1e-12)

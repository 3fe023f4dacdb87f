import csv
import functools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sl2lab.fourier import (
    SampledFunction,
    band_limit_ratio,
    build_theta,
    c1_profile,
    dilate,
    fourier_transform,
    make_sandwich,
    sup_mollify,
    triangle,
    write_spectrum_csv,
)

from . import shared

DELTAS = (0.4, 0.2, 0.1, 0.05)


@functools.cache
def kernel():
    return build_theta()


def zero(u):
    return np.zeros_like(u)


# kernel


def test_theta_even():
    k = kernel()
    assert np.max(np.abs(k.values - k.values[::-1])) <= 1e-10
    u = np.linspace(0, 30, 301)
    assert np.max(np.abs(k(u) - k(-u))) <= 1e-10


def test_theta_positive_on_core_window():
    # strictly positive kernel; the minimum is evaluated on the samples
    k = kernel()
    assert np.min(k.values[np.abs(k.u) <= 20]) > 0


def test_theta_unit_mass():
    assert abs(kernel().integral() - 1) <= 1e-4


def test_theta_band_limited():
    k = kernel().as_sampled()
    peak = abs(fourier_transform(k, [0.0])[0])
    xi = np.linspace(1.05, 5.0, 300)
    assert np.max(np.abs(fourier_transform(k, xi))) <= 1e-6 * peak


def test_build_theta_rejects_small_grids():
    with pytest.raises(ValueError):
        build_theta(10.0)
    with pytest.raises(ValueError):
        build_theta(40.0, 1000)


# dilation


def test_dilate_identity():
    assert dilate(kernel(), 1.0) is kernel()


def test_dilate_mass_peak_and_bound():
    k = kernel()
    d = dilate(k, 0.5)
    assert abs(d.integral() - k.integral()) <= 1e-4
    mid = k.u.size // 2
    assert d.values[mid] == 4.0 * k.values[mid]
    assert d.fourier_support_bound == 4.0
    assert d(0.0) == pytest.approx(4.0 * k(0.0), rel=1e-14)


@pytest.mark.parametrize("delta", [0.0, -0.1, 1.5])
def test_dilate_rejects_delta(delta):
    with pytest.raises(ValueError):
        dilate(kernel(), delta)


# sup mollification


def test_sup_mollify_constant():
    u = np.linspace(-3, 3, 385)
    f = SampledFunction(u, np.full(u.size, 0.7))
    assert np.array_equal(sup_mollify(f, 0.4).values, f.values)


def test_sup_mollify_indicator():
    u = np.arange(-128, 129) / 64.0
    ind = SampledFunction(u, ((u >= 0) & (u <= 1)).astype(float))
    out = sup_mollify(ind, 0.25)
    assert np.array_equal(out.values, ((u >= -0.25) & (u <= 1.25)).astype(float))


@given(st.lists(st.floats(-1, 1), min_size=5, max_size=200), st.floats(0, 0.5))
def test_sup_mollify_dominates(vals, delta):
    u = np.linspace(0, 1, len(vals))
    f = SampledFunction(u, np.array(vals))
    assert np.all(f.values <= sup_mollify(f, delta).values)


# sandwich


def test_sandwich_zero_function():
    coarse = make_sandwich(zero, 0.2)
    fine = make_sandwich(zero, 0.1)
    for sw in (coarse, fine):
        assert sw.ordering_violation() == 0
        assert np.all(sw.phi_minus.values <= 0) and np.all(sw.phi_plus.values >= 0)
    assert fine.l1_gap < coarse.l1_gap < shared.sandwich(0.2).l1_gap


def test_sandwich_rejects_bad_inputs():
    with pytest.raises(ValueError):
        make_sandwich(lambda u: 2 * triangle(u), 0.2)
    with pytest.raises(ValueError):
        make_sandwich(lambda u: triangle(u / 3), 0.2)
    with pytest.raises(ValueError):
        make_sandwich(triangle, 1.5)


def test_sandwich_signed_function_ordering():
    # exercises both the positive and the negative part
    sw = make_sandwich(lambda u: np.sin(np.pi * u) * triangle(u), 0.2)
    assert sw.ordering_violation() == 0
    assert sw.l1_gap >= 0 and sw.c > 0 and sw.c_delta >= 0


@pytest.mark.parametrize("delta", DELTAS)
def test_sandwich_triangle_ordering(delta):
    sw = shared.sandwich(delta)
    assert sw.ordering_violation() == 0
    assert sw.l1_gap >= 0


def test_l1_gap_shrinks_from_03_to_01():
    assert shared.sandwich(0.1).l1_gap < make_sandwich(triangle, 0.3).l1_gap


def test_l1_gap_non_increasing_over_sweep():
    gaps = [shared.sandwich(d).l1_gap for d in DELTAS]
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))


def test_uniform_c1_control_over_sweep():
    # sup |fhat| and sup |fhat'| stay below the coarsest value for every delta
    profiles = [[c1_profile(f) for f in (shared.sandwich(d).phi_plus, shared.sandwich(d).phi_minus)] for d in DELTAS]
    bound = max(max(pair) for pair in profiles[0])
    for p in profiles:
        for sup_f, sup_df in p:
            assert sup_f <= bound and sup_df <= bound


def test_band_limit_of_outputs_at_02():
    sw = shared.sandwich(0.2)
    for f in (sw.phi_plus, sw.phi_minus):
        assert band_limit_ratio(f, 0.2**-2) <= 1e-4


# export


def test_csv_exports(tmp_path):
    f = SampledFunction(np.linspace(-1, 1, 5), triangle(np.linspace(-1, 1, 5)))
    f.write_csv(tmp_path / "f.csv")
    rows = list(csv.reader((tmp_path / "f.csv").open()))
    assert rows[0] == ["u", "value"] and len(rows) == 6
    write_spectrum_csv(f, [0.0, 1.0], tmp_path / "s.csv")
    rows = list(csv.reader((tmp_path / "s.csv").open()))
    assert rows[0] == ["xi", "abs_fhat"]
    assert float(rows[1][1]) == pytest.approx(f.integral(), rel=1e-14)


def test_sampled_function_validation():
    with pytest.raises(ValueError):
        SampledFunction(np.zeros(3), np.zeros(4))

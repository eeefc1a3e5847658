import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linboltz.velocity_domain import (
    GridSpec,
    WeightSpec,
    annulus,
    build_grid,
    heavy_tail,
    lp_norm,
    maxwellian,
    maxwellian_values,
    mix_with_maxwellian,
    mixture,
    moment,
    normalize,
    read_density_csv,
    shifted_maxwellian,
    tempered_maxwellian,
    write_density_csv,
)


@pytest.fixture(scope="module")
def g():
    return build_grid(GridSpec(2, 33, 6.0))


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(4, 33, 6.0)
    with pytest.raises(ValueError):
        GridSpec(2, 32, 6.0)
    with pytest.raises(ValueError):
        GridSpec(2, 33, -1.0)


def test_trapezoid_weights_total(g):
    assert g.weights.sum() == pytest.approx((2 * 6.0) ** 2, rel=1e-14)
    assert g.n == 33 * 33


def test_maxwellian_mass_and_moments(g):
    # truncation at R=6 loses ~1e-8 of the mass; trapezoid is spectrally accurate
    M = maxwellian(g)
    assert M.mass == pytest.approx(1.0, abs=1e-7)
    assert moment(M, WeightSpec("plain", 2)) == pytest.approx(2.0, abs=1e-5)
    assert moment(M, WeightSpec("plain", 0)) == pytest.approx(M.mass)


def test_maxwellian_centre_value():
    assert maxwellian_values(np.zeros((1, 2)))[0] == pytest.approx(1 / (2 * np.pi))


def test_lp_norm_of_maxwellian(g):
    # ||M||_2^2 = (4 pi)^(-d/2) in d=2 -> 1/(4 pi)
    assert lp_norm(maxwellian(g), 2.0) == pytest.approx((1 / (4 * np.pi)) ** 0.5, rel=1e-6)


@pytest.mark.parametrize("build", [
    lambda g: shifted_maxwellian(g, [1.0, -0.5]),
    lambda g: tempered_maxwellian(g, 1.5),
    lambda g: heavy_tail(g, 8.5),
    lambda g: annulus(g, 1.0, 2.0),
    lambda g: mixture(g, [(0.3, tempered_maxwellian(g, 0.7)), (0.7, heavy_tail(g, 6.0))]),
])
def test_initial_data_unit_mass(g, build):
    f = build(g)
    assert f.mass == pytest.approx(1.0, abs=1e-14)
    assert np.all(f.values >= 0)


def test_negative_density_rejected(g):
    with pytest.raises(ValueError):
        g.field(-np.ones(g.n))


def test_density_csv_roundtrip(g, tmp_path):
    f = heavy_tail(g, 7.0)
    text = write_density_csv(f, tmp_path / "f.csv")
    back = read_density_csv(tmp_path / "f.csv")
    assert np.array_equal(back.values, f.values)
    assert write_density_csv(back) == text


def test_density_csv_rejects_bad_header():
    with pytest.raises(ValueError):
        read_density_csv("i,v_1,q,f\n0,0,1,1\n")


@settings(max_examples=25, deadline=None)
@given(delta=st.floats(0.0, 1.0), T=st.floats(0.3, 3.0))
def test_mix_with_maxwellian_preserves_mass(delta, T):
    g = build_grid(GridSpec(2, 17, 5.0))
    f = tempered_maxwellian(g, T)
    fd = mix_with_maxwellian(f, delta)
    M = maxwellian(g)
    assert fd.mass == pytest.approx((1 - delta) + delta * M.mass, abs=1e-13)
    assert np.all(fd.values >= 0)


@settings(max_examples=25, deadline=None)
@given(k1=st.floats(0.0, 4.0), k2=st.floats(0.0, 4.0))
def test_bracket_moments_monotone_in_order(k1, k2):
    g = build_grid(GridSpec(2, 17, 5.0))
    f = heavy_tail(g, 9.0)
    lo, hi = sorted((k1, k2))
    assert moment(f, WeightSpec("bracket", lo)) <= moment(f, WeightSpec("bracket", hi)) * (1 + 1e-14)


@settings(max_examples=20, deadline=None)
@given(w=st.lists(st.floats(0.01, 1.0), min_size=1, max_size=4))
def test_mixture_is_normalized(w):
    g = build_grid(GridSpec(2, 15, 4.0))
    parts = [(wi, tempered_maxwellian(g, 0.5 + k)) for k, wi in enumerate(w)]
    assert mixture(g, parts).mass == pytest.approx(1.0, abs=1e-14)


def test_normalize_rejects_empty(g):
    with pytest.raises(ValueError):
        normalize(g, np.zeros(g.n))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linboltz.collision_kernels import (
    AngularKernel,
    AssemblyBudgetError,
    Rate,
    angular_mass,
    assemble_generator,
    carleman_kernel,
    collision_frequency,
    column_sum_audit,
    detailed_balance_audit,
    frequency_sandwich,
    kernel_check_table,
    lower_bound_constants,
    povzner_bound_fit,
    povzner_integral,
    sphere_area,
)

vec2 = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).map(np.array)


@pytest.fixture(scope="module")
def small(get_assembly):
    return get_assembly(17, 3, -1.0)


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2 * np.pi)
    assert sphere_area(2) == pytest.approx(4 * np.pi)


@pytest.mark.parametrize("d", [2, 3])
def test_normalized_kernels_have_unit_mass(d):
    assert angular_mass(AngularKernel("constant", d)) == pytest.approx(1.0, abs=1e-10)
    assert angular_mass(AngularKernel("grad", d, nu=0.7)) == pytest.approx(1.0, abs=1e-10)


def test_grad_family_raw_mass():
    # |S^1| int_{-1}^{1} (1-s^2)^{1/2} ds = 2 pi * pi/2
    b = AngularKernel("grad", 3, nu=1.0, b0=1.0, normalize=False)
    assert angular_mass(b) == pytest.approx(np.pi**2, rel=1e-10)


def test_noncutoff_is_flagged():
    b = AngularKernel("noncutoff", 2, nu=1.5)
    assert not b.cutoff
    assert b.sup_norm == float("inf")


def test_frequency_anchors():
    assert collision_frequency(0.0, 2, np.array([[0.0, 0.0], [3.0, -1.0]])) == pytest.approx([1.0, 1.0], abs=1e-12)
    assert collision_frequency(-1.0, 2, np.zeros((1, 2)))[0] == pytest.approx(np.sqrt(np.pi / 2), rel=1e-10)


def test_frequency_large_speed_asymptotics():
    # Sigma_gamma(v) ~ |v|^gamma for large |v|
    v = np.array([[40.0, 0.0]])
    assert collision_frequency(-1.0, 2, v)[0] * 40.0 == pytest.approx(1.0, rel=2e-3)


def test_lower_bound_constants_value():
    # d=2, gamma=-1, nu=1: ratio = (2+2+1-2)/(2+1-2) = 3
    assert lower_bound_constants(2, -1.0, 1.0) == pytest.approx((15 / 4, 13 / 4))
    with pytest.raises(ValueError):
        lower_bound_constants(2, 0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(v=vec2, w=vec2, gamma=st.sampled_from([0.0, -0.5, -1.0, -1.5]))
def test_carleman_detailed_balance(v, w, gamma):
    # k(v,w) M(w) = k(w,v) M(v)
    if np.linalg.norm(v - w) < 0.2:
        return
    b = AngularKernel("constant", 2)
    M = lambda x: np.exp(-0.5 * x @ x)
    fwd = carleman_kernel(Rate("power", gamma=gamma), b, v, w) * M(w)
    bwd = carleman_kernel(Rate("power", gamma=gamma), b, w, v) * M(v)
    assert fwd == pytest.approx(bwd, rel=1e-6, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(v=vec2, w=vec2)
def test_povzner_i2_vanishes(v, w):
    # energy conservation makes I_2 vanish identically
    assert abs(povzner_integral(v, w, AngularKernel("constant", 2), 2.0).value) <= 1e-11


def test_povzner_i4_degenerate_pair():
    v = np.array([1.3, -0.4])
    assert abs(povzner_integral(v, -v, AngularKernel("constant", 2), 4.0).value) <= 1e-12


def test_povzner_out_of_band_can_be_positive():
    # orthogonal, |v*| = 2.1|v|: collisions spread the energies, so I_4 > 0 outside the band
    b = AngularKernel("constant", 2)
    assert povzner_integral(np.array([1.0, 0.0]), np.array([0.0, 2.1]), b, 4.0).value > 0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_povzner_bound_fit_positive_constants(seed):
    rng = np.random.default_rng(seed)
    fit = povzner_bound_fit(rng.normal(scale=2.0, size=(6, 2)), rng.normal(scale=2.0, size=(6, 2)),
                            AngularKernel("constant", 2), 4.0)
    assert fit["pass"] and fit["C1"] > 0 and fit["C2"] == pytest.approx(0.125)


def test_assembly_symmetric_and_conservative(small):
    a, q = small.a, small.grid.weights
    assert np.array_equal(a, a.T)
    # mass conservation: q . L f = 0 for any f
    f = np.random.default_rng(0).random(small.grid.n)
    assert abs(q @ small.apply(f)) <= 1e-13 * (q @ (small.sigma * f))
    # M is stationary
    assert np.max(np.abs(small.apply(small.M))) <= 1e-13 * small.M.max()


def test_assembly_row_sums_match_frequency(small):
    assert column_sum_audit(small)["max_rel"] <= 1e-4
    assert small.meta["diag_clipped"] == 0


def test_assembly_audits(small):
    assert frequency_sandwich(small)["pass"]
    assert all(row[3] for row in kernel_check_table(small))
    assert small.meta["detailed_balance"]["max_rel_asymmetry"] <= 1e-6


def test_assembly_cache_roundtrip(get_grid):
    g = get_grid(2, 9, 4)
    first = assemble_generator(g, -1.0, AngularKernel("constant", 2))
    again = assemble_generator(g, -1.0, AngularKernel("constant", 2))
    assert again.meta["cached"]
    assert again.content_hash() == first.content_hash()


def test_assembly_budget(get_grid, monkeypatch):
    monkeypatch.setenv("LINBOLTZ_MEMORY_BUDGET", "1000")
    with pytest.raises(AssemblyBudgetError):
        assemble_generator(get_grid(2, 9, 4), -1.0, AngularKernel("constant", 2), use_cache=False)


def test_assembly_rejects_noncutoff(get_grid):
    with pytest.raises(ValueError):
        assemble_generator(get_grid(2, 9, 4), -1.0, AngularKernel("noncutoff", 2, nu=1.5), use_cache=False)


def test_detailed_balance_audit_small(get_grid):
    db = detailed_balance_audit(get_grid(2, 17, 5), Rate("power", gamma=-1.0), AngularKernel("constant", 2), n_pairs=50)
    assert db["max_rel_asymmetry"] <= 1e-6

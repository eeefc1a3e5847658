import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linboltz.collision_kernels import AngularKernel
from linboltz.dirichlet import (
    assemble_dirichlet,
    cutoff_form,
    dirichlet_value,
    nc_entropy_production,
    spectral_gap,
)
from linboltz.entropy_lab import entropy_production, random_positive_density
from linboltz.velocity_domain import GridSpec, build_grid

NC = AngularKernel("noncutoff", 2, nu=1.5)
G = build_grid(GridSpec(2, 13, 4.0))


@pytest.fixture(scope="module")
def form():
    return assemble_dirichlet(G, -1.0, NC, theta_min=0.2, K=24, keep_terms=True)


@pytest.fixture(scope="module")
def asm(get_assembly):
    return get_assembly(17, 3, -1.0)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        assemble_dirichlet(G, -1.0, AngularKernel("constant", 2))
    with pytest.raises(ValueError):
        assemble_dirichlet(G, -1.0, NC, theta_min=1.0)
    with pytest.raises(ValueError):
        assemble_dirichlet(G, 0.5, NC)


def test_form_symmetric_psd_and_kills_constants(form):
    Q = form.Q
    assert np.allclose(Q, Q.T, atol=0)
    assert np.max(np.abs(Q @ np.ones(G.n))) <= 1e-12 * np.abs(Q).max()
    assert np.linalg.eigvalsh(Q).min() >= -1e-10 * np.abs(Q).max()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_nc_production_dominates_dirichlet(form, seed):
    # (x - y)(log x - log y) >= 4 (sqrt x - sqrt y)^2 termwise, so D_nc(f) >= 4 D(sqrt h)
    f = random_positive_density(G, np.random.default_rng(seed))
    h = f.values / np.exp(-0.5 * G.speed2) * (2 * np.pi)
    assert nc_entropy_production(form, f) >= 4 * form.value(np.sqrt(h)) * (1 - 1e-9)


def test_nc_production_needs_terms():
    light = assemble_dirichlet(G, -1.0, NC, theta_min=0.2, K=24)
    with pytest.raises(ValueError):
        nc_entropy_production(light, random_positive_density(G, np.random.default_rng(0)))


def test_cutoff_form_matches_production_quadratic_part(asm):
    # D_Phi with Phi = (x-1)^2 is twice the Dirichlet form
    from linboltz.entropy_lab import PhiFunctional

    f = random_positive_density(asm.grid, np.random.default_rng(1))
    h = f.values / asm.M
    assert 2 * h @ cutoff_form(asm) @ h == pytest.approx(entropy_production(asm, f, PhiFunctional("quadratic")), rel=1e-10)


def test_spectral_gap_positive(form, asm):
    nc = spectral_gap(form)
    c = spectral_gap(asm)
    assert nc.gap > 0 and c.gap > 0
    assert nc.constant_overlap > 0.999 and c.constant_overlap > 0.999


def test_dirichlet_value_dispatch(form):
    f = random_positive_density(G, np.random.default_rng(2))
    h = f.values / np.exp(-0.5 * G.speed2) * (2 * np.pi)
    assert dirichlet_value(form, f) == pytest.approx(form.value(h), rel=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksverify import profiles
from ksverify.chemo import solve_elliptic, step_parabolic
from ksverify.dynamics import dissipation_terms
from ksverify.energy import (RenormalizationError, default_reference, dissipation_identity, energy_of, entropy,
                             free_energy, is_displacement_convex, needs_renormalization, nonlinear_energy,
                             reference_from)
from ksverify.fields import ChemoField, DensityField, Grid
from ksverify.laws import AdmissibilityError, DiffusionLaw


# -- laws -----------------------------------------------------------------------------

def test_law_construction():
    assert DiffusionLaw.linear().label == "linear"
    assert DiffusionLaw.power(2).label == "power(m=2)"
    with pytest.raises(ValueError):
        DiffusionLaw.power(1.0)
    with pytest.raises(ValueError):
        DiffusionLaw("cubic", 3.0)
    with pytest.raises(AdmissibilityError, match=r"m >= \(d-1\)/d"):
        DiffusionLaw.power(0.3).check_admissible(2)
    DiffusionLaw.power(0.5).check_admissible(2)


@pytest.mark.parametrize("law", [DiffusionLaw.linear(), DiffusionLaw.power(2), DiffusionLaw.power(0.7),
                                 DiffusionLaw.power(3)])
def test_law_pointwise_consistency(law):
    r = np.linspace(0.2, 3.0, 200)
    h = 1e-6
    # Psi' = P, pressure' = diffusivity, pressure = rho P - Psi
    np.testing.assert_allclose((law.Psi(r + h) - law.Psi(r - h)) / (2 * h), law.P(r), rtol=1e-7, atol=1e-8)
    np.testing.assert_allclose((law.pressure(r + h) - law.pressure(r - h)) / (2 * h), law.diffusivity(r), rtol=1e-7)
    np.testing.assert_allclose(law.pressure(r), r * law.P(r) - law.Psi(r), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose((law.P(r + h) - law.P(r - h)) / (2 * h), law.d2Psi(r), rtol=1e-6)


# -- entropy ----------------------------------------------------------------------------

def test_entropy_uniform_values():
    g = Grid(1, 400, 2.0)
    assert entropy(profiles.uniform_slab(g, 0.0, 1.0, 1.0)) == pytest.approx(0.0, abs=1e-13)
    assert entropy(profiles.uniform_slab(g, 0.0, 0.5, 1.0)) == pytest.approx(math.log(2.0), rel=1e-12)


@pytest.mark.parametrize("sigma", [0.5, 1.0])
def test_entropy_gaussian(sigma):
    g = Grid(1, 512, 8 * sigma)
    rho = profiles.gaussian(g, 0.0, sigma, 1.0)
    assert entropy(rho) == pytest.approx(-0.5 * math.log(2 * math.pi * math.e * sigma**2), abs=g.h**2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-30, 30))
def test_entropy_translation_reflection(seed, k):
    g = Grid(1, 64, 4.0)
    vals = np.random.default_rng(seed).random(g.shape) * 3
    rho = DensityField(g, vals)
    assert entropy(DensityField(g, np.roll(vals, k))) == pytest.approx(entropy(rho), rel=1e-12, abs=1e-12)
    assert entropy(DensityField(g, vals[::-1])) == pytest.approx(entropy(rho), rel=1e-12, abs=1e-12)


# -- free energy --------------------------------------------------------------------------------

def test_free_energy_without_potential(gauss):
    v = ChemoField(gauss.grid, np.zeros(gauss.grid.shape))
    br = free_energy(gauss, v, 1.0, 0.7)
    assert br.total == pytest.approx(entropy(gauss), rel=1e-15)
    assert br.as_dict()["total"] == br.total


@pytest.mark.parametrize("d", [1, 2])
def test_free_energy_constants(d):
    g = Grid(d, 32, 3.0)
    c, alpha = 0.8, 2.0
    rho = DensityField(g, np.full(g.shape, c))
    v = ChemoField(g, np.full(g.shape, c / alpha))
    vol = (2 * g.L) ** d
    br = free_energy(rho, v, 1.0, alpha)
    assert br.coupling_term == pytest.approx(-c * c * vol / alpha, rel=1e-13)
    assert br.dirichlet_term == pytest.approx(0.5 * alpha * (c / alpha) ** 2 * vol, rel=1e-13)
    assert br.total == pytest.approx(entropy(rho) - 0.5 * c * c * vol / alpha, rel=1e-13)


def test_renormalization_required_exactly_when_singular():
    assert needs_renormalization(0.0, 0.0, 1) and needs_renormalization(0.0, 0.0, 2)
    assert not needs_renormalization(1.0, 0.0, 1)
    assert not needs_renormalization(0.0, 0.5, 2)


def test_renormalization_errors(gauss):
    v = solve_elliptic(gauss, 0.0)
    with pytest.raises(RenormalizationError, match="reference"):
        free_energy(gauss, v, 0.0, 0.0)
    with pytest.raises(RenormalizationError, match="mass"):
        free_energy(gauss, v, 0.0, 0.0, default_reference(gauss.grid, 2.0))


def test_reference_shift_is_density_independent():
    g = Grid(1, 256, 8.0)
    rng = np.random.default_rng(7)
    refs = [default_reference(g, 1.0), reference_from(profiles.gaussian(g, 0.5, 0.6, 1.0))]
    shifts = []
    for _ in range(5):
        k = int(rng.integers(1, 4))
        rho = profiles.gaussian_mixture(g, rng.uniform(-2, 2, k), rng.uniform(0.4, 1.0, k), rng.random(k) + 0.2, 1.0)
        v = solve_elliptic(rho, 0.0)
        shifts.append(free_energy(rho, v, 0.0, 0.0, refs[0]).total - free_energy(rho, v, 0.0, 0.0, refs[1]).total)
    assert max(shifts) - min(shifts) <= 1e-8


def test_default_reference_shape():
    g = Grid(1, 128, 6.0)
    ref = default_reference(g, 2.5)
    assert ref.rho_star.mass == pytest.approx(2.5, rel=1e-14)
    assert np.all(ref.rho_star.values[np.abs(g.centers) > g.L / 2] == 0)


# -- nonlinear energy --------------------------------------------------------------------------

def test_linear_law_offset_is_mass(gauss):
    v = solve_elliptic(gauss, 1.0)
    lin = nonlinear_energy(gauss, v, DiffusionLaw.linear(), 0.0, 1.0).total
    assert lin - free_energy(gauss, v, 0.0, 1.0).total == pytest.approx(-1.0, abs=1e-13)


def test_square_law_uniform():
    g = Grid(1, 400, 2.0)
    c = 3.0
    rho = profiles.uniform_slab(g, 0.0, 0.5, c * 0.5)
    v = ChemoField(g, np.zeros(g.shape))
    assert nonlinear_energy(rho, v, DiffusionLaw.power(2), 1.0, 0.0).total == pytest.approx(c * c * 0.5, rel=1e-12)


def test_nonlinear_shares_potential_terms(gauss):
    v = solve_elliptic(gauss, 0.5)
    a = free_energy(gauss, v, 1.0, 0.5)
    b = nonlinear_energy(gauss, v, DiffusionLaw.power(3), 1.0, 0.5)
    assert (a.coupling_term, a.dirichlet_term) == (b.coupling_term, b.dirichlet_term)
    assert energy_of(gauss, v, DiffusionLaw.linear(), 1.0, 0.5).total == a.total


def test_growth_condition(gauss):
    v = ChemoField(gauss.grid, np.zeros(gauss.grid.shape))
    with pytest.raises(AdmissibilityError, match="growth"):
        nonlinear_energy(gauss, v, DiffusionLaw.power(0.3), 1.0, 0.0)
    nonlinear_energy(gauss, v, DiffusionLaw.power(0.4), 1.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0))
def test_linear_law_offset_property(seed, alpha):
    g = Grid(1, 64, 4.0)
    rho = DensityField(g, np.random.default_rng(seed).random(g.shape) + 0.01)
    v = ChemoField(g, np.random.default_rng(seed + 1).standard_normal(g.shape))
    diff = nonlinear_energy(rho, v, DiffusionLaw.linear(), 1.0, alpha).total - free_energy(rho, v, 1.0, alpha).total
    assert diff == pytest.approx(-rho.mass, rel=1e-10)


# -- displacement convexity predicate ----------------------------------------------------------

@pytest.mark.parametrize("law,d", [(DiffusionLaw.linear(), 1), (DiffusionLaw.linear(), 2), (DiffusionLaw.power(2), 1),
                                   (DiffusionLaw.power(2), 2), (DiffusionLaw.power(0.5), 2),
                                   (DiffusionLaw.power(3), 2), (DiffusionLaw.power(0.75), 2)])
def test_convex_and_decreasing(law, d):
    rep = is_displacement_convex(law, d)
    assert rep.convex
    assert rep.monotone_direction == -1
    assert rep.violations == []


def test_violation_below_range():
    rep = is_displacement_convex(DiffusionLaw.power(0.4), 2)
    assert not rep.convex
    assert rep.violations
    assert rep.differential_ok is False


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 6.0))
def test_every_admissible_power_is_convex(m):
    if abs(m - 1.0) < 1e-9:
        return
    assert is_displacement_convex(DiffusionLaw.power(m), 2).convex


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.45))
def test_every_power_below_range_fails(m):
    assert not is_displacement_convex(DiffusionLaw.power(m), 2).convex


def test_convexity_rejects_bad_grid():
    with pytest.raises(ValueError):
        is_displacement_convex(DiffusionLaw.linear(), 2, r_grid=np.linspace(0.0, 1.0, 100))
    with pytest.raises(ValueError):
        is_displacement_convex(DiffusionLaw.linear(), 2, r_grid=np.geomspace(0.1, 1.0, 10))


# -- dissipation identity ----------------------------------------------------------------------------

def test_dissipation_stationary():
    t = np.linspace(0, 1, 6)
    res = dissipation_identity(t, np.full(6, 2.0), np.zeros(6))
    assert res.max == 0.0 and res.mean == 0.0
    with pytest.raises(ValueError):
        dissipation_identity(t[:2], [1.0, 1.0], [0.0, 0.0])


def test_dissipation_frozen_density_parabolic_potential():
    g = Grid(1, 128, 6.0)
    rho = profiles.gaussian(g, 0.0, 0.8, 1.0)
    eps, alpha, dt = 1.0, 1.0, 5e-4  # residual is the O(dt^2) error of the three-point derivative
    v = ChemoField(g, np.zeros(g.shape))
    times, F, D = [], [], []
    law = DiffusionLaw.linear()
    for k in range(40):
        times.append(k * dt)
        F.append(free_energy(rho, v, eps, alpha).total)
        D.append(dissipation_terms(rho, v, law, eps, alpha)[1])
        v = step_parabolic(v, rho, eps, alpha, dt)
    res = dissipation_identity(times, F, D)
    assert res.max <= 1e-6

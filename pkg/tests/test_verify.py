import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksverify import profiles
from ksverify.chemo import PHI_BREAK, phi, solve_elliptic
from ksverify.dynamics import SystemParams, simulate
from ksverify.fields import Grid
from ksverify.transport import ProductState
from ksverify.verify import (
    G_by_quadrature,
    OsgoodMachinery,
    contraction_check,
    evi_check,
    fit_constants,
    max_linf,
    omega,
    omega_convexity_check,
)


# -- omega ----------------------------------------------------------------------------

def test_omega_reference_values():
    assert omega(0.0) == 0.0
    # at the branch point log x = -(1 + sqrt 2), so omega = x (1 + sqrt 2)
    assert omega(PHI_BREAK) == pytest.approx(PHI_BREAK * (1 + math.sqrt(2)), rel=1e-13)
    assert omega(1.0) == pytest.approx(math.sqrt(phi(1.0)), rel=1e-15)
    assert omega(2.0, total_mass=2.0) == pytest.approx(2.0 * math.sqrt(phi(1.0)), rel=1e-14)
    with pytest.raises(ValueError):
        omega(-1e-3)


@given(st.floats(1e-300, 1e6), st.floats(1e-300, 1e6))
def test_omega_nondecreasing(a, b):
    lo, hi = sorted((a, b))
    assert omega(lo) <= omega(hi) * (1 + 1e-14)


@given(st.floats(1e-200, 1e6))
def test_omega_dominates_identity(y):
    assert omega(y) >= y * (1 - 1e-14)


# -- G and its inverse ----------------------------------------------------------------

def test_G_anchor_and_sign():
    os = OsgoodMachinery(1.0, 0.3)
    assert os.G(0.3) == 0.0
    assert os.G_inverse(0.0) == pytest.approx(0.3, rel=1e-14)
    assert os.G(0.6) > 0 > os.G(0.15)
    assert os.G(0.0) == -math.inf
    assert os.G_inverse(-math.inf) == 0.0


@pytest.mark.parametrize("s", [1e-12, 1e-6, 1e-3, PHI_BREAK, 0.02, 0.5, 3.0, 1e3])
@pytest.mark.parametrize("mass", [1.0, 2.5])
def test_G_matches_quadrature(s, mass):
    os = OsgoodMachinery(mass, 1.0)
    assert os.G(s) == pytest.approx(G_by_quadrature(s, 1.0, mass), rel=1e-9, abs=1e-11)


@given(st.floats(-12.0, 6.0), st.sampled_from([0.5, 1.0, 4.0]), st.sampled_from([1e-3, 1.0, 10.0]))
def test_G_inverse_round_trip(log10_s, mass, s0):
    os = OsgoodMachinery(mass, s0)
    s = 10.0**log10_s
    assert os.G_inverse(os.G(s)) == pytest.approx(s, rel=1e-9)


def test_G_vectorised_and_increasing():
    os = OsgoodMachinery()
    s = np.geomspace(1e-12, 1e6, 200)
    g = os.G(s)
    assert g.shape == s.shape and np.all(np.diff(g) > 0)
    assert np.allclose(os.G_inverse(g), s, rtol=1e-9)


def test_machinery_rejects_bad_inputs():
    with pytest.raises(ValueError):
        OsgoodMachinery(0.0)
    with pytest.raises(ValueError):
        OsgoodMachinery(1.0, -1.0)
    with pytest.raises(ValueError):
        OsgoodMachinery().G(-1.0)


# -- envelope -------------------------------------------------------------------------

def test_envelope_starts_at_initial_distance():
    os = OsgoodMachinery()
    assert os.envelope(0.04, 0.0, 3.0) == pytest.approx(0.04, rel=1e-12)
    assert os.envelope(0.0, 1.0, 3.0) == 0.0


@given(st.floats(1e-10, 10.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
@settings(max_examples=60)
def test_envelope_monotone_in_time_and_constant(d2, t, C):
    os = OsgoodMachinery()
    e = os.envelope(d2, np.array([t, t + 0.1]), C)
    assert e[1] >= e[0] * (1 - 1e-12)
    assert os.envelope(d2, t, C + 0.5) >= os.envelope(d2, t, C) * (1 - 1e-12)
    assert os.envelope(d2, t, C) >= d2 * (1 - 1e-12)


@given(st.floats(1e-8, 10.0), st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(0.1, 3.0))
@settings(max_examples=60)
def test_envelope_semigroup_and_anchor_free(d2, t1, t2, C):
    a, b = OsgoodMachinery(1.0, 1.0), OsgoodMachinery(1.0, 1e-4)
    # restarting from the envelope value equals running straight through
    mid = a.envelope(d2, t1, C)
    assert a.envelope(mid, t2, C) == pytest.approx(a.envelope(d2, t1 + t2, C), rel=1e-8)
    assert a.envelope(d2, t1, C) == pytest.approx(b.envelope(d2, t1, C), rel=1e-8)


def test_weighted_envelope_uses_square_root_growth():
    os = OsgoodMachinery()
    t = 0.25
    assert os.envelope(0.01, t, 1.0, weighted=True) == pytest.approx(
        os.G_inverse(os.G(0.01) + 8.0 * math.sqrt(t)), rel=1e-14)


# -- EVI, contraction and convexity checks on small runs ------------------------------

@pytest.fixture(scope="module")
def heat_pair():
    g = Grid(1, 128, 6.0)
    p = SystemParams(g, T=0.05, sample_dt=0.01, chemotaxis=False)
    a = simulate(p, profiles.gaussian(g, 0.0, 0.8, 1.0))
    b = simulate(p, profiles.gaussian(g, 0.0, 0.8, 1.0))
    return g, p, a, b


def test_evi_against_stationary_far_reference(heat_pair):
    g, p, a, _ = heat_pair
    ref = ProductState(profiles.gaussian(g, 0.0, 0.8, 1.0))
    rep = evi_check(a, ref)
    assert rep.C_min >= 0 and rep.passed(1e-12)
    assert len(rep.rows()) == int(rep.included.sum())


def test_evi_needs_three_samples():
    g = Grid(1, 64, 4.0)
    tr = simulate(SystemParams(g, T=0.01, chemotaxis=False), profiles.gaussian(g, 0.0, 0.8, 1.0))
    with pytest.raises(ValueError):
        evi_check(tr, ProductState(tr.rho_at(0)))


def test_contraction_identical_runs_in_uniqueness_mode(heat_pair):
    _, _, a, b = heat_pair
    rep = contraction_check(a, b, C=1.0, uniqueness_atol=1e-12)
    assert rep.uniqueness_mode and rep.uniqueness_ok and rep.passed
    assert np.all(rep.d2 == 0.0) and np.all(rep.envelope == 0.0)


def test_contraction_heat_flow_is_contractive():
    g = Grid(1, 128, 6.0)
    p = SystemParams(g, T=0.05, sample_dt=0.01, chemotaxis=False)
    a = simulate(p, profiles.gaussian(g, 0.0, 0.8, 1.0))
    b = simulate(p, profiles.gaussian(g, 0.4, 0.8, 1.0))
    rep = contraction_check(a, b, C=0.0, tol=1e-9)
    assert rep.passed and not rep.uniqueness_mode
    assert rep.slack[0] == pytest.approx(0.0, abs=1e-15)


def test_convexity_check_degenerate_geodesic():
    g = Grid(1, 128, 6.0)
    rho = profiles.gaussian(g, 0.0, 0.8, 1.0)
    z = ProductState(rho)
    rep = omega_convexity_check(z, z, R_T=0.0, eps=0.0, alpha=1.0)
    assert rep.d2 == 0.0 and np.max(np.abs(rep.slack)) <= 1e-12 and rep.passed


def test_convexity_check_refuses_plane():
    g = Grid(2, 16, 3.0)
    z = ProductState(profiles.gaussian(g, 0.0, 0.8, 1.0))
    with pytest.raises(ValueError):
        omega_convexity_check(z, z, 1.0, 0.0, 1.0)


def test_fit_constants_uses_largest_density(heat_pair):
    g, _, a, b = heat_pair
    q = max_linf([a, b])
    assert q == pytest.approx(np.max(a.rho_at(0).values), rel=1e-12)  # heat flow only flattens
    fc = fit_constants([a, b], C_evi=2.0)
    assert fc.Q == q and fc.R_T == pytest.approx(2.0 * q)
    assert set(fc.as_dict()) == {"C_evi", "Q", "R_T"}


def test_fit_constants_mutual_evi_for_identical_runs(heat_pair):
    _, _, a, b = heat_pair
    # identical flows sit at distance zero from each other at equal times; the fit stays finite
    fc = fit_constants([a, b])
    assert math.isfinite(fc.C_evi) and fc.C_evi >= 0


def test_elliptic_state_energy_consistency():
    from ksverify.verify import state_energy

    g = Grid(1, 128, 6.0)
    p = SystemParams(g, alpha=1.0)
    rho = profiles.gaussian(g, 0.0, 0.8, 1.0)
    z_implicit = ProductState(rho)
    z_explicit = ProductState(rho, solve_elliptic(rho, 1.0))
    assert state_energy(z_implicit, p) == state_energy(z_explicit, p)

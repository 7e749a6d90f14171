import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from fiocalc import fixtures
from fiocalc.gridquant import Grid, GridField, random_field
from fiocalc.smoothlab import (ConfinementError, ConfinementWarning, DispersionSpec, commutator_residual,
                               confinement, default_nt, evolve, final_decade_increase, gaussian_family,
                               log_slope, smoothing_ratio, spacetime_norm)

XI = fixtures.dispersion("xi")
XI_ATAN = fixtures.dispersion("xi+atan")


def bump(g, c=0.0, w=1.0):
    return GridField(g, np.exp(-((g.x - c) ** 2) / (2 * w * w)))


# propagator -----------------------------------------------------------------

def test_evolve_translation_is_node_exact():
    g = Grid(1, 256, 32.0)
    u = random_field(g, np.random.default_rng(0))
    shift = 12
    v = evolve(XI, u, shift * g.h)
    np.testing.assert_allclose(v.values, np.roll(u.values, -shift), atol=1e-12)


def test_evolve_at_zero_is_identity():
    g = Grid(1, 128, 16.0)
    u = random_field(g, np.random.default_rng(1))
    np.testing.assert_allclose(evolve(XI_ATAN, u, 0.0).values, u.values, atol=1e-13)


@pytest.mark.parametrize("name", ["xi", "xi+atan", "2d"])
def test_conservation_and_group_law(name):
    a = fixtures.dispersion(name)
    g = Grid(a.dim, 128 if a.dim == 1 else 32, 16.0)
    rng = np.random.default_rng(2)
    for _ in range(5):
        u = random_field(g, rng)
        t1, t2 = rng.uniform(-4, 4, 2)
        v = evolve(a, u, t1)
        assert abs(v.norm() - u.norm()) <= 1e-12 * u.norm()
        assert (evolve(a, v, t2) - evolve(a, u, t1 + t2)).norm() <= 1e-12 * u.norm()


def test_propagator_sign_matches_phase_convention():
    # e^{+it a(D)} on a plane wave multiplies by e^{+it a(xi_k)}
    g = Grid(1, 64, 8.0)
    k0 = 3 * g.dxi
    u = GridField(g, np.exp(1j * k0 * g.x))
    t = 0.7
    expected = np.exp(1j * t * (k0 + math.atan(k0))) * u.values
    np.testing.assert_allclose(evolve(XI_ATAN, u, t).values, expected, atol=1e-12)


# dispersion symbols -----------------------------------------------------------

@pytest.mark.parametrize("name", ["xi", "xi+atan", "2d"])
def test_fixture_symbols_satisfy_hypotheses(name):
    a = fixtures.dispersion(name)
    r = a.check(Grid(a.dim, 64 if a.dim == 1 else 16, 8.0))
    assert r["passed"], r
    assert r["min_speed"] >= 1.0 - 1e-12


def test_stationary_symbol_is_not_dispersive():
    a = DispersionSpec.from_strings("xi1^2", 1, "xi1^2", "0")
    r = a.check(Grid(1, 64, 8.0))
    assert not r["dispersive"] and not r["passed"]


def test_wrong_decomposition_is_reported():
    a = DispersionSpec.from_strings("xi1 + atan(xi1)", 1, "xi1", "0")
    r = a.check(Grid(1, 64, 8.0))
    assert r["split_residual"] > 1e-3 and not r["passed"]


def test_dispersion_rejects_x_dependence():
    with pytest.raises(ValueError):
        DispersionSpec.from_strings("x1*xi1", 1, "xi1", "0")


# space-time norms -------------------------------------------------------------

def test_zero_datum():
    g = Grid(1, 256, 32.0)
    norm, taus, curve = spacetime_norm(XI, GridField(g, np.zeros(g.N)), 0, 1.0, 4.0)
    assert norm == 0.0 and np.all(curve == 0.0)


def test_translation_constant_is_sqrt_pi():
    g = Grid(1, 1024, 128.0)
    T = 32.0
    fam, _ = gaussian_family(g, seed=3, widths=2, centers=2, modulations=2)
    rep = smoothing_ratio(XI, fam, 0, 1.0, T, seed=3)
    # on [-T, T] the Fubini constant is the truncated integral of <x>^-2
    trunc = math.sqrt(2 * math.atan(T))
    for r in rep.ratios:
        assert abs(r - math.sqrt(math.pi)) <= 0.02 * math.sqrt(math.pi)
        assert abs(r - trunc) <= 2e-3 * trunc
    assert rep.monotone


def test_half_power_weight_grows_logarithmically():
    g = Grid(1, 1024, 128.0)
    norm, taus, curve = spacetime_norm(XI, bump(g), 0, 0.5, 32.0)
    slope = log_slope(taus, curve)
    # |u0|^2 mass times the 2 log T growth of the integral of <x>^-1
    mass = bump(g).norm() ** 2
    assert slope > 0.5 * 2 * mass
    assert final_decade_increase(taus, curve) >= 0.05


def test_dispersive_symbol_saturates():
    g = Grid(1, 4096, 512.0)
    fam, _ = gaussian_family(g, seed=4, widths=2, centers=2, modulations=1)
    rep = smoothing_ratio(XI_ATAN, fam, 0, 1.0, 128.0, seed=4)
    assert rep.monotone
    assert math.isfinite(rep.sup_ratio)
    assert max(rep.final_increase) < 0.05


def test_k_one_requires_s_above_three_halves():
    g = Grid(1, 256, 32.0)
    with pytest.raises(ValueError, match="s > k"):
        smoothing_ratio(XI_ATAN, [bump(g)], 1, 1.5, 4.0)


def test_k_must_be_non_negative_integer():
    g = Grid(1, 256, 32.0)
    with pytest.raises(ValueError):
        spacetime_norm(XI, bump(g), -1, 1.0, 4.0)


def test_norm_matches_direct_quadrature():
    # k = 1, s = 2, a = xi: u(t, x) = u0(x + t), so the x-integral is a closed-form convolution
    g = Grid(1, 1024, 128.0)
    T = 8.0
    norm, _, _ = spacetime_norm(XI, bump(g), 1, 2.0, T)
    inner = lambda t: integrate.quad(lambda x: (1 + x * x) ** -3 * math.exp(-((x + t) ** 2)), -40, 40)[0]
    exact = math.sqrt(integrate.quad(lambda t: t * t * inner(t), -T, T)[0])
    assert norm == pytest.approx(exact, rel=1e-6)


def test_default_nt_is_even_and_resolves_speed():
    g = Grid(1, 256, 32.0)
    nt = default_nt(10.0, g)
    assert nt % 2 == 0 and 20.0 / nt <= g.h / 4 + 1e-15


def test_final_decade_increase_definition():
    taus = np.linspace(0, 10, 101)
    curve = np.minimum(taus, 5.0)
    assert final_decade_increase(taus, curve) == pytest.approx(0.8)


# confinement ----------------------------------------------------------------

def test_unconfined_datum_warns():
    g = Grid(1, 256, 32.0)
    u = bump(g, c=12.0)
    assert confinement(u)
    with pytest.warns(ConfinementWarning):
        spacetime_norm(XI, u, 0, 1.0, 1.0)


def test_long_horizon_warns():
    g = Grid(1, 256, 32.0)
    with pytest.warns(ConfinementWarning, match="exceeds"):
        spacetime_norm(XI, bump(g), 0, 1.0, 17.0)


def test_reaching_the_boundary_is_an_error():
    g = Grid(1, 256, 32.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConfinementWarning)
        with pytest.raises(ConfinementError):
            spacetime_norm(XI, bump(g), 0, 1.0, 40.0)


def test_confined_run_is_silent():
    g = Grid(1, 256, 32.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        spacetime_norm(XI, bump(g), 0, 1.0, 4.0)


# family -----------------------------------------------------------------------

def test_gaussian_family_is_seeded_and_sized():
    g = Grid(1, 1024, 256.0)
    f1, p1 = gaussian_family(g, seed=9)
    f2, p2 = gaussian_family(g, seed=9)
    assert len(f1) == 75 and p1 == p2
    assert all(np.array_equal(a.values, b.values) for a, b in zip(f1, f2))
    assert not any(confinement(u) for u in f1)


# commutation identity -----------------------------------------------------------

def test_commutator_linear_symbol_exact():
    g = Grid(1, 512, 32.0)
    assert commutator_residual(XI, bump(g, 0.3, 0.5), 2.0) <= 1e-10


def test_commutator_at_time_zero():
    g = Grid(1, 256, 32.0)
    assert commutator_residual(XI_ATAN, bump(g, 0.3, 0.5), 0.0) <= 1e-12


def test_commutator_residual_drops_under_refinement():
    res = {N: commutator_residual(XI_ATAN, bump(Grid(1, N, 32.0), 0.3, 0.5), 2.0) for N in (128, 512)}
    assert res[512] <= 1e-8
    assert res[128] >= 10 * res[512]


def test_commutator_two_dimensional():
    a = fixtures.dispersion("2d")
    res = {}
    for N in (64, 128):
        g = Grid(2, N, 16.0)
        X, Y = g.mesh("x")
        u = GridField(g, np.exp(-((X - 0.3) ** 2 + Y ** 2) / 0.5))
        assert commutator_residual(a, u, 0.0) <= 1e-12
        res[N] = commutator_residual(a, u, 1.0)
    assert res[128] <= 1e-5
    assert res[64] >= 10 * res[128]

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate

from fiocalc import expr as ex
from fiocalc import fixtures as fx
from fiocalc.classes import AmplitudeSpec, DecayFlags, OrderPair, OrderTriple, PhaseSpec, SymbolSpec
from fiocalc.composer import (ClassValidationError, Coefficient, predict_orders, pseudo_composition_terms,
                              psi_pt, psi_tp, psido_reduce, pt_expand, series_symbol, tp_expand, tp_reduce)
from fiocalc.expr import MultiIndex, multi_indices

RNG = np.random.default_rng(7)


def rand_points(names, count=20, scale=3.0):
    return {v: RNG.uniform(-scale, scale, count) for v in names}


def ev(e, pts):
    return np.asarray(ex.evaluate(e, pts, check_finite=False), dtype=complex)


def amp(text, orders=(0, 0, 0), **flags):
    return AmplitudeSpec.from_string(text, 1, orders, DecayFlags(**flags))


def sym(text, orders=(0, 0), **flags):
    return SymbolSpec.from_string(text, 1, orders, DecayFlags(**flags))


# coefficients -------------------------------------------------------------

def test_coefficients_exact_through_order_8():
    for alpha in multi_indices(2, 8):
        c = Coefficient.for_index(alpha)
        assert c.rational == Fraction(1, alpha.factorial())
        assert c.quarter == (-alpha.order) % 4
        assert c.value == pytest.approx((1j) ** (-alpha.order) / alpha.factorial(), abs=1e-15)


def test_two_index_coefficient():
    a, b = MultiIndex((2,)), MultiIndex((1,))
    c = Coefficient.for_index(a, b)
    assert c.rational == Fraction(1, 2) and c.value == pytest.approx(1j / 2)


# TP ------------------------------------------------------------------------

def test_tp_unit_symbol_leaves_only_leading_term():
    a = amp("jbrpow(y1, -1)*atan(x1)", (0, -1, 0), improving_y=True)
    s = tp_expand(a, sym("1", improving_xi=True), 3)
    assert s.terms[0].body is ex.parse("jbrpow(z1, -1)*atan(x1)", 1)
    assert all(t.body is ex.ZERO for t in s.terms[1:])


def test_tp_multiplication_symbol():
    s = tp_expand(amp("1"), sym("x1", (1, 0), improving_xi=True), 2)
    assert s.terms[0].body is ex.var("z1")
    assert all(t.body is ex.ZERO for t in s.terms[1:])


def test_tp_first_order_term_value():
    # i^{+1} * d_y<y>^-1 * d_xi<xi> at (z, xi) = (1, 1): i * (-2^{-3/2}) * 2^{-1/2} = -i/4
    s = tp_expand(amp("jbrpow(y1, -1)", (0, -1, 0), improving_y=True),
                  sym("jbr(xi1)", (0, 1), improving_xi=True), 1)
    t1 = s.terms[1]
    assert t1.evaluate({"x1": 0.0, "z1": 1.0, "xi1": 1.0}) == pytest.approx(-0.25j, abs=1e-15)


def test_tp_first_order_term_against_finite_differences():
    h = 1e-4
    dy = lambda f, y: (f(y + h) - f(y - h)) / (2 * h)
    inv = lambda y: (1 + y * y) ** -0.5
    br = lambda x: (1 + x * x) ** 0.5
    expected = 1j * dy(inv, 1.0) * dy(br, 1.0)
    s = tp_expand(amp("jbrpow(y1, -1)", (0, -1, 0), improving_y=True),
                  sym("jbr(xi1)", (0, 1), improving_xi=True), 1)
    assert s.terms[1].evaluate({"x1": 0.0, "z1": 1.0, "xi1": 1.0}) == pytest.approx(expected, abs=1e-8)


def gaussian_tp_exact(z, xi):
    # a = exp(-y^2), p = <eta>: the y-integral is sqrt(pi) e^{-i z th} e^{-th^2/4}, th = eta - xi
    f = lambda th, part: part(math.sqrt(math.pi) * np.exp(-1j * z * th - th * th / 4)
                              * math.sqrt(1 + (xi + th) ** 2)) / (2 * math.pi)
    re = integrate.quad(f, -40, 40, args=(np.real,), limit=400, epsabs=1e-13)[0]
    im = integrate.quad(f, -40, 40, args=(np.imag,), limit=400, epsabs=1e-13)[0]
    return re + 1j * im


def test_tp_sign_convention_against_exact_integral():
    a = amp("exp(-y1^2)", (0, -2, 0), improving_y=True, improving_xi=True)
    p = sym("jbr(xi1)", (0, 1), improving_x=True, improving_xi=True)
    s = tp_expand(a, p, 3)
    pt = {"x1": 0.0, "z1": 0.7, "xi1": 20.0}
    c = gaussian_tp_exact(0.7, 20.0)
    err = [abs(c - s.truncation(pt, N)) for N in range(4)]
    assert err[1] < err[0] / 10 and err[2] < err[1] and err[3] < err[2]
    # flipping the sign of the odd terms makes the first-order truncation worse
    flipped = s.truncation(pt, 0) - (s.truncation(pt, 1) - s.truncation(pt, 0))
    assert abs(c - flipped) > 10 * err[1]


def test_tp_requires_improving_symbol():
    with pytest.raises(ClassValidationError):
        tp_expand(amp("1"), sym("jbr(xi1)", (0, 1)), 1)


def test_tp_order_limit():
    with pytest.raises(ex.MaxOrderError):
        tp_expand(amp("1"), sym("1", improving_xi=True), 9)


def test_tp_validation_failure():
    with pytest.raises(ClassValidationError):
        tp_expand(amp("exp(y1)"), sym("1", improving_xi=True), 1)


# PT ------------------------------------------------------------------------

@pytest.mark.parametrize("g", ["0", "atan(xi1)", "jbr(xi1)"])
def test_pt_affine_phase_reduces_to_pseudo_composition(g):
    phi = PhaseSpec.from_string(f"x1*xi1 + {g}", 1, "PT")
    psi = psi_pt(phi).psi
    pts = rand_points(["x1", "y1", "xi1", "z1"])
    np.testing.assert_allclose(ev(psi, pts), 0, atol=1e-12)
    a = amp("jbrpow(y1, -1)*atan(x1)*jbrpow(xi1, -1)", (0, -1, -1), improving_y=True, improving_xi=True)
    p = sym("jbr(x1)*jbr(xi1)", (1, 1), improving_x=True, improving_xi=True)
    got = pt_expand(a, p, phi, 3).terms
    ref = pseudo_composition_terms(a, p, 3)
    for t, r in zip(got, ref):
        np.testing.assert_allclose(ev(t.body, pts) * t.coefficient.value, ev(r.body, pts) * r.coefficient.value,
                                   rtol=1e-12, atol=1e-12)


def test_pt_leading_term_is_symbol_at_phase_gradient():
    for a, p, phi in fx.leading_term_triples(seed=3):
        lead = pt_expand(a, p, phi, 0).leading()
        pts = rand_points(["x1", "z1", "xi1"])
        grad = ex.evaluate(ex.gradient(phi.bound(), "x", 1)[0], pts)
        expected = ex.evaluate(p.expr, {"x1": pts["x1"], "xi1": grad}) * \
            ex.evaluate(ex.rename(a.expr, {"y1": "z1"}), pts)
        np.testing.assert_allclose(lead.evaluate(pts), expected, rtol=1e-12, atol=1e-14)


def test_pt_second_derivative_of_exponential_defect():
    phi = PhaseSpec.from_string("x1*xi1 + atan(x1)", 1, "PT")
    psi = psi_pt(phi)
    d2 = psi.on_diagonal(ex.diff(ex.exp(ex.mul(ex.I, psi.psi)), "y1", 2))
    assert ex.evaluate(d2, {"x1": 1.0, "xi1": 0.3}) == pytest.approx(-0.5j, abs=1e-14)
    # finite-difference cross-check of d_y^2 atan(y) at 1
    h = 1e-4
    fd = (math.atan(1 + h) - 2 * math.atan(1) + math.atan(1 - h)) / h ** 2
    assert fd == pytest.approx(-0.5, abs=1e-6)


def test_pt_orders():
    a, p, phi = fx.leading_term_triples()[0]
    s = pt_expand(a, p, phi, 1)
    assert s.predicted_orders == OrderTriple(a.orders.m1 + p.orders.t1, a.orders.m2, a.orders.m3 + p.orders.t2)


def test_pt_rejects_bad_phase():
    with pytest.raises(ClassValidationError):
        pt_expand(amp("1"), sym("1"), PhaseSpec.from_string("x1^2*xi1", 1, "PT"), 1)


# TP-reduce -----------------------------------------------------------------

def test_tp_reduce_unit_symbol_leading_term():
    phi = PhaseSpec.from_string("x1*xi1 + atan(xi1)", 1, "TP")
    a = amp("jbrpow(y1, -1)*jbrpow(xi1, -1)", (0, -1, -1), improving_y=True)
    s = tp_reduce(a, sym("1", improving_x=True), phi, 2)
    pts = rand_points(["x1", "xi1"])
    grad = ex.evaluate(ex.gradient(phi.bound(), "xi", 1)[0], pts)
    expected = ex.evaluate(a.expr, {"y1": grad, "xi1": pts["xi1"]})
    np.testing.assert_allclose(ev(s.leading().body, pts), expected, rtol=1e-12)


def test_tp_reduce_linear_phase_matches_psido_reduce():
    a = amp("jbrpow(y1, -2)*atan(x1)*exp(-xi1^2)", (0, -2, 0), improving_y=True)
    phi = PhaseSpec.from_string("x1*xi1", 1, "TP")
    r = tp_reduce(a, sym("1", improving_x=True), phi, 3)
    q = psido_reduce(a, 3)
    pts = rand_points(["x1", "xi1"])
    for N in range(4):
        np.testing.assert_allclose(r.truncation(pts, N), q.truncation(pts, N), rtol=1e-12, atol=1e-14)


def test_tp_reduce_bracket_phase_at_origin():
    phi = PhaseSpec.from_string("x1*xi1 + jbr(x1)", 1, "TP")
    s = tp_reduce(amp("jbrpow(y1, -1)", (0, -1, 0), improving_y=True), sym("1", improving_x=True), phi, 1)
    for xi in (-5.0, 0.0, 2.5):
        assert ex.evaluate(s.leading().body, {"x1": 0.0, "xi1": xi}) == pytest.approx(1.0)


def test_tp_reduce_orders_and_flags():
    phi = PhaseSpec.from_string("x1*xi1", 1, "TP")
    s = tp_reduce(amp("jbrpow(y1, -1)", (0, -1, 0), improving_y=True), sym("jbr(x1)", (1, 0), improving_x=True),
                  phi, 2)
    assert s.predicted_orders == OrderPair(0, 0)
    assert s.improving == "x"
    with pytest.raises(ClassValidationError):
        tp_reduce(amp("jbrpow(y1, -1)", (0, -1, 0)), sym("1", improving_x=True), phi, 1)
    with pytest.raises(ClassValidationError):
        tp_reduce(amp("jbrpow(y1, -1)", (0, -1, 0), improving_y=True), sym("1"), phi, 1)


def test_psi_tp_vanishes_to_second_order():
    for phi in fx.all_phases():
        pts = rand_points(ex.block_vars("x", phi.dim) + ex.block_vars("xi", phi.dim), 50, 10.0)
        for r in psi_tp(phi).vanishing_residuals(pts):
            assert np.max(r) <= 1e-12


# PsDO-reduce ---------------------------------------------------------------

def test_psido_reduce_y_xi():
    s = psido_reduce(amp("y1*xi1", (0, 1, 1), improving_y=True), 3)
    pts = rand_points(["x1", "xi1"])
    np.testing.assert_allclose(ev(s.terms[0].body, pts), pts["x1"] * pts["xi1"])
    assert s.terms[1].evaluate(pts) == pytest.approx(-1j)
    assert all(t.body is ex.ZERO for t in s.terms[2:])
    assert ex.to_string(series_symbol(s, 1)) == "x1*xi1 - I"


def test_psido_reduce_y_independent():
    s = psido_reduce(amp("atan(x1)*jbr(xi1)", (0, 0, 1), improving_y=True), 2)
    assert s.terms[0].body is ex.parse("atan(x1)*jbr(xi1)", 1)
    assert all(t.body is ex.ZERO for t in s.terms[1:])


def test_psido_reduce_leading_is_diagonal():
    a = amp("jbrpow(y1, -1)*cos(x1 - y1)*jbrpow(xi1, -2)", (0, -1, -2), improving_y=True)
    s = psido_reduce(a, 2, validate=False)
    pts = rand_points(["x1", "xi1"])
    np.testing.assert_allclose(ev(s.leading().body, pts),
                               ex.evaluate(a.expr, {"x1": pts["x1"], "y1": pts["x1"], "xi1": pts["xi1"]}))


def test_psido_reduce_requires_improving_y():
    with pytest.raises(ClassValidationError):
        psido_reduce(amp("y1*xi1", (0, 1, 1)), 1)


# order arithmetic -----------------------------------------------------------

def test_predict_orders_tp():
    orders, _ = predict_orders("TP", OrderTriple(0, 0, 0), DecayFlags(), OrderPair(1, 0))
    assert orders == OrderTriple(0, 1, 0)


def test_predict_orders_pt():
    orders, _ = predict_orders("PT", OrderTriple(1, -1, 0), DecayFlags(), OrderPair(0, 0))
    assert orders == OrderTriple(1, -1, 0)


def test_predict_orders_psido():
    orders, _ = predict_orders("PsDO-reduce", OrderTriple(2, -1, 1))
    assert orders == OrderPair(1, 1)


def test_predict_orders_flags():
    all_on = DecayFlags(True, True, True)
    _, f = predict_orders("PT", OrderTriple(0, 0, 0), all_on, OrderPair(0, 0), all_on, "SG")
    assert f.improving_x and f.improving_y
    _, f = predict_orders("PT", OrderTriple(0, 0, 0), all_on, OrderPair(0, 0), all_on, "PT")
    assert not f.improving_x
    _, f = predict_orders("TP", OrderTriple(0, 0, 0), all_on, OrderPair(0, 0), DecayFlags(improving_xi=True))
    assert not f.improving_y


def test_predict_orders_unknown_kind():
    with pytest.raises(ValueError):
        predict_orders("XX", OrderTriple(0, 0, 0))


def test_series_to_dict():
    s = psido_reduce(amp("y1*xi1", (0, 1, 1), improving_y=True), 1)
    d = s.to_dict()
    assert d["kind"] == "PsDO-reduce" and d["predicted_orders"] == [1, 1]
    assert d["terms"][1]["coefficient"]["text"] == "-i"

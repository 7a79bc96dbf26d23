import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowfast import examples as E
from slowfast import jet as J
from slowfast.errors import NonContraction
from slowfast.norms import sup_norm
from slowfast.refine_general import (solve_layer, contraction_solve, refine, iterate_step, error_field,
                                     RefineSettings)
from slowfast.sysmodel import Chart, GeneralSystem, decompose, chart_eval, validate_assumptions


def _toy(eps=0.05):
    W = lambda w, z: 1 + 0.3 * J.sin(w) + 0.2 * z
    Z = lambda w, z: eps * J.cos(w) - (1 + 0.25 * w) * z + 0.5 * z * z
    return GeneralSystem(1, 1, eps, W, Z, [(0.0, 2.0)], [(-0.5, 0.5)], 0.4, 0.3, samples=512)


def _refine(name, eps, mode="adaptive", **params):
    s = E.build(name, eps=eps, **params)
    d = E.get_spec(name).refine_defaults
    return (s,) + refine(s, d["nu_floor"], d["sigma_floor"], d["xi0"], mode=mode, axes=E.default_axes(name, s))


def test_example_one_level_zero_solve():
    s = E.build("counterexample", eps=0.1, samples=64)
    w = np.linspace(0, 2, 9)[:, None]
    res = solve_layer(decompose(s, Chart(s, "lazy"), 0), w)
    assert np.allclose(res.zeta.value, 0.1 * w, atol=1e-16)
    assert res.iterations <= 1 and res.residual <= 1e-16


def test_zero_forcing_gives_zero_layer():
    s = GeneralSystem(1, 1, 0.1, lambda w, z: 1 + 0 * w, lambda w, z: -z + z * z, [(0, 1)], [(-1, 1)], 0.5, 0.5)
    res = solve_layer(decompose(s, Chart(s, "lazy"), 0), np.array([[0.3], [0.6]]))
    assert np.all(res.zeta.value == 0) and res.iterations == 0


def test_scalar_quadratic_root():
    s = GeneralSystem(1, 1, 0.1, lambda w, z: 1 + 0 * w, lambda w, z: -z + 0.01 + z * z,
                      [(0, 1)], [(-1, 1)], 0.5, 0.5)
    res = solve_layer(decompose(s, Chart(s, "lazy"), 0), np.array([[0.5]]), order=0)
    assert res.zeta[0, 0] == pytest.approx((1 - math.sqrt(0.96)) / 2, abs=1e-12)
    assert res.contraction_est < 1


def test_implicit_derivative_matches_fd():
    s = _toy()
    ch = Chart(s, "lazy")
    ch.append_lazy()
    view = decompose(s, ch, 1)
    w = np.random.default_rng(5).uniform(0.05, 1.95, (50, 1))
    res = solve_layer(view, w, order=2)
    h = 1e-5
    zp = solve_layer(view, w + h, order=0).zeta
    zm = solve_layer(view, w - h, order=0).zeta
    fd = (zp - zm) / (2 * h)
    g = res.zeta.grad[..., 0]
    assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(1, np.abs(g)))
    fd2 = (solve_layer(view, w + h, order=1).zeta.grad - solve_layer(view, w - h, order=1).zeta.grad) / (2 * h)
    assert np.abs(res.zeta.hess[..., 0, 0] - fd2[..., 0]).max() <= 1e-6


def test_non_contraction_is_reported():
    F = lambda w, z: -z + 2.0 + z * z  # no real root: the iteration cannot settle
    A = -np.ones((1, 1, 1))
    with pytest.raises(NonContraction) as info:
        contraction_solve(F, A, np.array([[0.3]]))
    assert info.value.contraction_est >= 1 or info.value.iterations >= 200


def test_step_one_to_two_ratio_matches_oracle():
    eps = 0.05
    s, ch, certs, rep = _refine("counterexample", eps, nu0=1.0, sigma0=1.0)
    c1, c2 = certs[1], certs[2]
    box = [(0.0, 2.0)]
    r1 = sup_norm(lambda w: E.oracle("counterexample", "rho1", w, eps=eps), box, c1.nu)
    r2 = sup_norm(lambda w: E.oracle("counterexample", "rho2", w, eps=eps), box, c2.nu)
    assert c1.delta == pytest.approx(r1, rel=1e-10) and c2.delta == pytest.approx(r2, rel=1e-10)
    assert c2.ratio <= eps * (1 + 1e-12)


def test_big_step_gain():
    s, ch, certs, rep = _refine("counterexample", 0.02)
    c0, c1 = certs[0], certs[1]
    assert c1.delta / c0.delta <= s.eps * c0.K / c0.xi
    assert c1.delta <= 2 * 0.02 ** 2 * 1.5  # delta_1 = O(eps^2)


def test_zero_delta_step_adds_zero_layer():
    s = GeneralSystem(1, 1, 0.1, lambda w, z: 1 + 0 * w, lambda w, z: -z + z * z, [(0, 2)], [(-1, 1)], 0.5, 0.5,
                      samples=128)
    ch = Chart(s, "tabulated", E.default_axes("counterexample", s))
    cert = validate_assumptions(s, 128)
    cert.xi = 0.1
    nxt = iterate_step(s, ch, cert, RefineSettings(0.02, 0.02, 0.1, samples=128))
    assert nxt.delta == 0 and len(ch) == 1 and np.all(ch.layers[0].table.coeffs == 0)


def test_invariant_system_returns_empty_chart():
    s = GeneralSystem(1, 1, 0.1, lambda w, z: 1 + 0 * w, lambda w, z: -z, [(0, 2)], [(-1, 1)], 0.5, 0.5)
    ch, certs, rep = refine(s, 0.02, 0.02, 0.1, axes=E.default_axes("counterexample", s))
    assert len(ch) == 0 and certs[0].status == "invariant"


@pytest.mark.parametrize("eps", [0.02, 0.0125])
def test_geometric_decay_along_the_run(eps):
    s, ch, certs, rep = _refine("counterexample", eps, mode="fixed_N")
    d1 = certs[1].delta
    for n, c in enumerate(certs[1:]):
        assert c.delta <= 2.0 ** -n * d1 * (1 + 1e-12)
    assert len(certs) >= 3


def test_hyperbolic_convergence():
    eps = 0.02
    s, ch, certs, rep = _refine("linear_hyperbolic", eps, mode="fixed_N", nu0=1.0, sigma0=1.0)
    c = E.oracle("linear_hyperbolic", "manifold_slope", eps=eps)
    w = np.array([[1.0]])
    errs = [abs(chart_eval(ch.truncated(k), w)[0, 0] - c) for k in range(len(ch) + 1)]
    assert len(errs) >= 3
    assert all(b <= 0.5 * a for a, b in zip(errs, errs[1:]))


def test_large_eps_halts_with_certificate():
    s, ch, certs, rep = _refine("counterexample", 1.0)
    assert certs[-1].status == "halt" and certs[-1].level == 1
    assert not certs[-1].ok and certs[-1].notes[-1].startswith("hypothesis violated")


def test_invalid_floors():
    s = E.build("counterexample", samples=64)
    with pytest.raises(ValueError):
        refine(s, 0.5, 0.02, 0.05, axes=E.default_axes("counterexample", s))


def test_adaptive_returns_argmin_prefix():
    s, ch, certs, rep = _refine("counterexample", 0.0125)
    deltas = [c.delta for c in certs]
    assert len(ch) == int(np.argmin(deltas))
    assert rep.min_delta[0] == min(deltas)


def test_error_field_vanishes_at_equilibrium():
    for eps in (0.05, 0.0125):
        s, ch, certs, rep = _refine("counterexample", eps)
        rho, ratio = error_field(ch, s, np.array([[1.0]]))
        assert abs(rho[0, 0]) <= 1e-12
        for n in range(1, len(ch) + 1):
            assert abs(decompose(s, ch, n).rho_at(np.array([[1.0]]))[0, 0]) <= 1e-12


def test_error_field_without_layers():
    s = E.build("counterexample", eps=0.1, samples=64)
    w = np.array([[0.4]])
    rho, _ = error_field(Chart(s, "lazy"), s, w)
    assert rho[0, 0] == pytest.approx(0.04)


def test_pointwise_bound_with_fitted_constant():
    w = np.linspace(0.0, 2.0, 101)[:, None]
    w = w[np.abs(w[:, 0] - 1) > 1e-9]
    fits = {}
    for eps in (0.05, 0.025):
        s, ch, certs, rep = _refine("counterexample", eps, nu0=1.0, sigma0=1.0)
        rho, ratio = error_field(ch, s, w)
        fits[eps] = (len(ch), ratio)
    N, ratio = fits[0.05]
    C = ratio.max() * 2.0 ** N / 0.05 ** 2
    N2, ratio2 = fits[0.025]
    assert np.all(ratio2 <= C * 0.025 ** 2 * 2.0 ** -N2)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.008, 0.03), st.floats(0.3, 1.7), st.floats(0.5, 2.0))
def test_small_steps_halve_delta(eps, root, slope):
    s = E.build("counterexample", eps=eps, root=root, slope=slope, samples=512)
    ch, certs, rep = refine(s, 0.02, 0.02, 0.05, mode="fixed_N", axes=E.default_axes("counterexample", s),
                            samples=512)
    for a, b in zip(certs[1:], certs[2:]):
        if a.ok:
            assert b.delta <= 0.5 * a.delta + 1e-14

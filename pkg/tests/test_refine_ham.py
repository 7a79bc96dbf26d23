import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import fsolve, root

from slowfast import examples as E
from slowfast import jet as J
from slowfast.errors import Inapplicable, StepTooLarge
from slowfast.refine_ham import (HamChart, HamNormalForm, SymplecticLayer, apply_generating_step,
                                 check_equilibrium_pinned, extract_normal_form, lyapunov_monitor, refine_ham,
                                 solve_constrained_equilibria, symplectic_defect, _add_layer)
from slowfast.spectral import Axis, SpectralTable
from slowfast.sysmodel import HamiltonianSystem, symplectic_matrix


def _run(name, eps, mode="adaptive", samples=512, **params):
    s = E.build(name, eps=eps, **params)
    d = E.get_spec(name).refine_defaults
    ch, certs, rep = refine_ham(s, d["nu_floor"], d["sigma_floor"], d["xi0"], mode=mode,
                                axes=E.default_axes(name, s), samples=samples)
    return s, ch, certs


def _points(n, d_Z, seed=0, zs=0.3):
    rng = np.random.default_rng(seed)
    w = np.c_[rng.uniform(0, 2 * math.pi, n), rng.uniform(-0.6, 0.6, n)]
    return w, rng.uniform(-zs, zs, (n, 2 * d_Z))


@pytest.fixture(scope="module")
def pendulum():
    return _run("elliptic_pendulum", 0.05, mode="fixed_N")


def test_neishtadt_level_zero_graph():
    for eps in (0.1, 0.03):
        s = E.build("neishtadt", eps=eps)
        w, _ = _points(20, 1)
        z = solve_constrained_equilibria(s, w)
        assert np.abs(z - E.oracle("neishtadt", "zeta0", w[:, :1], eps=eps)).max() <= 1e-12


def test_graph_derivative_matches_fd():
    s = E.build("elliptic_pendulum", eps=0.05)
    w, _ = _points(10, 1, seed=2)
    jz = solve_constrained_equilibria(s, w, order=1)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (solve_constrained_equilibria(s, w + e) - solve_constrained_equilibria(s, w - e)) / (2 * h)
        assert np.abs(jz.grad[..., k] - fd).max() <= 1e-6


def test_neishtadt_layer_against_dense_newton():
    eps = 0.05
    s = E.build("neishtadt", eps=eps)
    ch = HamChart(s, E.default_axes("neishtadt", s))
    _add_layer(ch, 0)
    _add_layer(ch, 1)
    layer = ch.layers[1]
    up, vp, xp, yp = 0.3, 0.0, 0.01, 0.02
    w, z = apply_generating_step(layer, np.array([up, vp]), np.array([xp, yp]))

    # independent solve of the same implicit equations with plain table evaluations
    T, Tu, Tv = layer.table, layer.table.derivative((0,)), layer.table.derivative((1,))

    def resid(u):
        p = np.array([u[0], vp])
        zx = T(p)[0]
        return [u[0] + eps * (-Tv(p)[0] * yp + Tv(p)[1] * (xp + zx)) - up]

    u = fsolve(resid, [up], xtol=1e-15)[0]
    p = np.array([u, vp])
    x, y = xp + T(p)[0], yp + T(p)[1]
    v = vp + eps * (-Tu(p)[0] * yp + Tu(p)[1] * x)
    assert np.abs(np.r_[w, z] - [u, v, x, y]).max() <= 1e-10


@pytest.mark.parametrize("eps", [0.1, 0.05, 0.025])
def test_layers_are_symplectic(eps):
    s, ch, certs = _run("elliptic_pendulum", eps)
    w, z = _points(50, 1)
    for layer in ch.layers:
        assert symplectic_defect(layer, w, z) <= 1e-8


def test_symplectic_fd_cross_check(pendulum):
    s, ch, certs = pendulum
    layer = ch.layers[-1]
    p0 = np.array([0.7, 0.2, 0.1, -0.2])
    h = 1e-6
    cols = []
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        a = np.concatenate(layer.apply(p0[:2] + e[:2], p0[2:] + e[2:]))
        b = np.concatenate(layer.apply(p0[:2] - e[:2], p0[2:] - e[2:]))
        cols.append((a - b) / (2 * h))
    D = np.stack(cols, axis=1)
    O = symplectic_matrix(1, 1, s.eps)
    assert np.abs(D.T @ O @ D - O).max() <= 1e-6


def test_two_mode_layers_are_symplectic():
    s, ch, certs = _run("two_fast_modes", 0.05)
    w, z = _points(50, 2)
    assert len(ch) >= 1
    for layer in ch.layers:
        assert symplectic_defect(layer, w, z) <= 1e-8


def test_energy_of_the_normal_form(pendulum):
    s, ch, certs = pendulum
    w, z = _points(50, 1, seed=3, zs=0.05)
    for n in range(len(ch) + 1):
        nf = HamNormalForm(ch, n)
        H = nf.H(w, z)
        W, Z = ch.transform(w, z, n)
        assert np.abs(H - s.H(W, Z)[..., 0]).max() <= 1e-10
        j = nf.jet(w, 3)
        cubic = (j.value[..., 0] + np.einsum("pi,pi->p", j.grad[..., 0, :], z)
                 + 0.5 * np.einsum("pij,pi,pj->p", j.hess[:, 0], z, z)
                 + np.einsum("pijk,pi,pj,pk->p", j.third[:, 0], z, z, z) / 6)
        # the quartic remainder shrinks 16-fold when z is halved
        half = nf.H(w, z / 2) - (j.value[..., 0] + np.einsum("pi,pi->p", j.grad[..., 0, :], z / 2)
                                 + 0.5 * np.einsum("pij,pi,pj->p", j.hess[:, 0], z / 2, z / 2)
                                 + np.einsum("pijk,pi,pj,pk->p", j.third[:, 0], z, z, z) / 48)
        full = H - cubic
        big = np.abs(full) > 1e-12
        if big.any():
            assert np.all(np.abs(half[big] / full[big]) <= 1 / 8)


def test_inverse_consistency(pendulum):
    s, ch, certs = pendulum
    w, z = _points(10, 1, seed=4)
    for layer in ch.layers:
        for p, q in zip(w, z):
            target = np.concatenate(layer.apply(p, q))
            sol = root(lambda r: np.concatenate(layer.apply(r[:2], r[2:])) - target, target, tol=1e-14)
            assert np.abs(sol.x - np.r_[p, q]).max() <= 1e-9


@pytest.mark.parametrize("name,params", [("elliptic_pendulum", {}), ("two_fast_modes", {}),
                                         ("neishtadt", {"pinned": True})])
def test_equilibrium_stays_pinned(name, params):
    s, ch, certs = _run(name, 0.05, mode="fixed_N", **params)
    rep = check_equilibrium_pinned(s, ch, [0.0, 0.0])
    assert rep.ok and rep.max_violation <= 1e-11
    assert len(rep.rho_norms) == len(ch) + 1


def test_normal_form_structure(pendulum):
    s, ch, certs = pendulum
    w, z = _points(20, 1, seed=5)
    nf = HamNormalForm(ch)
    A = nf.A_at(w)
    assert np.abs(A - np.swapaxes(A, -1, -2)).max() <= 1e-14
    assert np.abs(nf.r_at(w, 0 * z)).max() <= 1e-14
    # the remainder is cubic in z
    r1, r2 = nf.r_at(w, 1e-2 * z), nf.r_at(w, 5e-3 * z)
    big = np.abs(r1) > 1e-13
    assert big.any() and np.all(np.abs(r2[big] / r1[big] - 1 / 8) <= 0.02)
    h, rho, A2, T3 = extract_normal_form(s, ch, w)
    assert np.allclose(A2, A, atol=1e-15) and T3.shape == (20, 2, 2, 2)


def test_neishtadt_first_error_is_second_order():
    vals = []
    for eps in (0.1, 0.05, 0.025):
        s, ch, certs = _run("neishtadt", eps)
        vals.append(certs[1].delta / eps ** 2)
    assert max(vals) / min(vals) <= 1.2


def test_small_step_schedule(pendulum):
    s, ch, certs = pendulum
    for a, b in zip(certs[1:], certs[2:]):
        gain = b.delta * a.xi / (s.eps * a.delta)
        assert b.extra["gain"] == pytest.approx(gain)
        assert b.xi == pytest.approx(2 * s.eps * max(gain, b.K))
    assert certs[-1].status in ("floor", "halt")


def test_adaptive_truncates_at_minimum():
    s, ch, certs = _run("neishtadt", 0.05)
    assert len(ch) == int(np.argmin([c.delta for c in certs]))


def test_oversized_layer_is_rejected():
    ax = (Axis.fourier(0, 2 * math.pi, 9), Axis.cheb(-1, 1, 5))
    g = SpectralTable.grid(ax)
    u, v = g[..., 0], g[..., 1]
    big = SpectralTable.fit(ax, np.stack([4 * np.sin(u) * np.cos(3 * v), 4 * np.sin(3 * v + u)], -1))
    with pytest.raises(StepTooLarge):
        SymplecticLayer(big, 1, 1, 0.5).apply(np.array([[0.3, 0.9]]), np.array([[2.0, 2.0]]))


def test_refine_needs_axes_and_valid_floors():
    s = E.build("neishtadt")
    with pytest.raises(ValueError):
        refine_ham(s, 0.1, 0.1, 0.2)
    with pytest.raises(ValueError):
        refine_ham(s, 0.7, 0.1, 0.2, axes=E.default_axes("neishtadt", s))


def _quadratic(lams, rho):
    def H(w, z):
        x, y = J.comp(z, 0), J.comp(z, 1)
        return 0.5 * J.comp(w, 1) ** 2 + 0.5 * lams[0] * x * x + 0.5 * lams[1] * y * y + rho * x
    return HamiltonianSystem(1, 1, 0.1, H, [(0, 2 * math.pi), (-1, 1)], [(-1, 1)] * 2, 0.5, 0.5,
                             periodic=(True, False))


def test_lyapunov_quadratic_sanity():
    s = _quadratic((1.0, 2.0), 1e-3)
    rep = lyapunov_monitor(HamNormalForm(HamChart(s, ())), [0.0, 0.1], horizon=50.0)
    lo, hi = rep.ratio_range
    assert 0.5 - 1e-9 <= lo <= hi <= 1.0 + 1e-9
    assert rep.eig_range == pytest.approx((1.0, 2.0))
    # |z| stays below the forced amplitude 2 rho / lambda_min
    assert rep.sup_z <= 2e-3 * 1.01


def test_lyapunov_rejects_indefinite_quadratic_part():
    with pytest.raises(Inapplicable):
        lyapunov_monitor(HamNormalForm(HamChart(_quadratic((1.0, -1.0), 0.0), ())), [0.0, 0.0], horizon=1.0)


def test_lyapunov_backends_agree(pendulum, monkeypatch):
    from slowfast import refine_ham as R
    from slowfast._kernels import fallback

    s, ch, certs = pendulum
    nf = HamNormalForm(ch)
    a = lyapunov_monitor(nf, [0.5, 0.0], horizon=2.0)
    monkeypatch.setattr(R, "rk4_normal_form", fallback.rk4_normal_form)
    b = lyapunov_monitor(nf, [0.5, 0.0], horizon=2.0)
    assert np.allclose(a.final_state, b.final_state, rtol=1e-12, atol=1e-15)
    assert a.sup_z == pytest.approx(b.sup_z, rel=1e-10)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.03, 0.1), st.floats(0.5, 1.5))
def test_small_steps_contract(eps, coupling):
    s, ch, certs = _run("elliptic_pendulum", eps, mode="fixed_N", samples=256, coupling=coupling)
    for a, b in zip(certs[1:], certs[2:]):
        if a.ok:
            assert b.delta <= 0.55 * a.delta


def test_neishtadt_exponential_law_full_sweep():
    # 40 terms keep the series tail below the smallest delta at eps = 0.0125
    sweep = (0.1, 0.07, 0.05, 0.035, 0.025, 0.0175, 0.0125)
    dmin = [min(c.delta for c in _run("neishtadt", eps, n_terms=40)[2]) for eps in sweep]
    x, y = 1 / np.array(sweep), np.log(dmin)
    b, a = np.polyfit(x, y, 1)
    res = y - a - b * x
    assert b < 0 and 1 - res @ res / ((y - y.mean()) @ (y - y.mean())) >= 0.98
    assert E.oracle("neishtadt", "tail_bound", n_terms=40) < min(dmin)

"""Symplectic graph refinement for slow-fast Hamiltonians.

Coordinates are ``w = (u, v)`` (slow, ``d_W`` degrees of freedom) and
``z = (x, y)`` (fast, ``d_Z`` degrees of freedom) with the form
``dx^dy + eps^{-1} du^dv``. A layer built from the constrained equilibria
``z = zeta(w)`` of the current Hamiltonian defines the map
``(w+, z+) -> (w, z)`` through the generating function

    g(u, v+, x, y+) = -<zeta^x(u, v+), y+> + <zeta^y(u, v+), x>,

    x = x+ + zeta^x(u, v+),      y = y+ + zeta^y(u, v+),
    u+ = u + eps d_{v+} g,       v = v+ + eps d_u g.

The only implicit equation is the one for ``u``. The Hamiltonian at level
``n`` is evaluated exactly as ``H o T_1 o ... o T_n``; layers are tabulated
on a tensor grid over the slow box, which fixes the maps but not their
exactness: every layer is an exactly symplectic change of variables.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import jet as J
from ._kernels import rk4_normal_form, BACKEND
from .errors import StepTooLarge, Inapplicable, NonContraction
from .norms import sup_norm, vec_norm, mat_norm, DecayReport, DEFAULT_SAMPLES, DEFAULT_SEED
from .refine_general import contraction_solve, ADAPTIVE_STOP
from .spectral import SpectralTable, Axis
from .sysmodel import Certificate, linear_inverse, symplectic_matrix

FIXED_POINT_STEPS = 20
NEWTON_STEPS = 20
PD_PIVOT_TOL = 1e-10


def _sl(a, start, stop):
    """Components ``start:stop`` of an array or jet along the last axis."""
    if J.is_jet(a):
        return a[start:stop]
    return np.asarray(a)[..., start:stop]


def _field(*xs):
    return "complex" if any(np.iscomplexobj(J.value_of(x)) for x in xs) else "real"


class SymplecticLayer:
    """One generating-function step built from a tabulated graph ``zeta``."""

    def __init__(self, table, d_W, d_Z, eps, tol=1e-15):
        self.table = table
        self.d_W, self.d_Z = d_W, d_Z
        self.eps = float(eps)
        self.tol = tol
        self.du = [table.derivative((j,)) for j in range(d_W)]
        self.dv = [table.derivative((d_W + j,)) for j in range(d_W)]

    # graph components -------------------------------------------------
    def zeta(self, u, v):
        return self.table.apply(J.cat(u, v))

    def zeta_x(self, u, v):
        return _sl(self.zeta(u, v), 0, self.d_Z)

    def zeta_y(self, u, v):
        return _sl(self.zeta(u, v), self.d_Z, 2 * self.d_Z)

    def g(self, u, vp, x, yp):
        z = self.zeta(u, vp)
        dZ = self.d_Z
        return -J.dot(_sl(z, 0, dZ), yp) + J.dot(_sl(z, dZ, 2 * dZ), x)

    def _dg(self, tables, u, vp, x, yp):
        p = J.cat(u, vp)
        dZ = self.d_Z
        parts = []
        for t in tables:
            d = t.apply(p)
            parts.append(-J.dot(_sl(d, 0, dZ), yp) + J.dot(_sl(d, dZ, 2 * dZ), x))
        return J.cat(*parts)

    def _x_of(self, u, vp, xp):
        return xp + self.zeta_x(u, vp)

    def _u_residual(self, u, up, vp, xp, yp):
        x = self._x_of(u, vp, xp)
        return u - up + self.eps * self._dg(self.dv, u, vp, x, yp)

    # the implicit equation for u --------------------------------------
    def _solve_u(self, up, vp, xp, yp):
        scale = self.tol * np.maximum(1.0, np.abs(up)).max()
        u = up.copy()
        for _ in range(FIXED_POINT_STEPS):
            new = up - self.eps * self._dg(self.dv, u, vp, self._x_of(u, vp, xp), yp)
            done = np.abs(new - u).max(initial=0.0) <= scale
            u = new
            if done:
                return u
        fld = _field(up, vp, xp, yp)
        for _ in range(NEWTON_STEPS):
            F = self._u_residual(J.seed_variable(u, 1, fld), up, vp, xp, yp)
            step = np.linalg.solve(F.grad, F.value[..., None])[..., 0]
            u = u - step
            if not np.all(np.isfinite(u)):
                break
            if np.abs(step).max(initial=0.0) <= scale:
                return u
        raise StepTooLarge("inner solve for the slow angle did not converge; the layer is too large "
                           "for the step width")

    def apply(self, w_plus, z_plus):
        """Map ``(w+, z+) -> (w, z)``; arrays (real or complex) or jets."""
        dW, dZ = self.d_W, self.d_Z
        jets = J.is_jet(w_plus) or J.is_jet(z_plus)
        X = J.cat(w_plus, z_plus)
        up, vp = _sl(X, 0, dW), _sl(X, dW, 2 * dW)
        xp, yp = _sl(X, 2 * dW, 2 * dW + dZ), _sl(X, 2 * dW + dZ, 2 * (dW + dZ))
        vals = [J.value_of(a) for a in (up, vp, xp, yp)]
        u = self._solve_u(*vals)
        if jets:
            fld = _field(X)
            M = self._u_residual(J.seed_variable(u, 1, fld), *vals).grad
            Minv = linear_inverse(M)
            F = lambda Xj, uj: self._u_residual(uj, _sl(Xj, 0, dW), _sl(Xj, dW, 2 * dW),
                                                _sl(Xj, 2 * dW, 2 * dW + dZ), _sl(Xj, 2 * dW + dZ, 2 * (dW + dZ)))
            u = J.implicit_chord(F, X, u, Minv)
        zeta = self.zeta(u, vp)
        x = xp + _sl(zeta, 0, dZ)
        y = yp + _sl(zeta, dZ, 2 * dZ)
        v = vp + self.eps * self._dg(self.du, u, vp, x, yp)
        return J.cat(u, v), J.cat(x, y)


def apply_generating_step(layer, w_plus, z_plus, tol=None):
    if tol is not None and tol != layer.tol:
        layer = SymplecticLayer(layer.table, layer.d_W, layer.d_Z, layer.eps, tol)
    return layer.apply(w_plus, z_plus)


class HamChart:
    """Stack of symplectic layers; level ``n`` uses the first ``n``."""

    def __init__(self, system, axes):
        self.system = system
        self.axes = tuple(axes)
        self.layers = []

    def __len__(self):
        return len(self.layers)

    def truncated(self, level):
        c = HamChart(self.system, self.axes)
        c.layers = self.layers[:level]
        return c

    def transform(self, w, z, level=None):
        """Original coordinates of the level-``n`` point ``(w, z)``."""
        level = len(self.layers) if level is None else level
        for layer in reversed(self.layers[:level]):
            w, z = layer.apply(w, z)
        return w, z

    def H(self, w, z, level=None):
        return self.system.H(*self.transform(w, z, level))

    def append(self, table):
        s = self.system
        self.layers.append(SymplecticLayer(table, s.d_W, s.d_Z, s.eps))


# ---------------------------------------------------------------------------
# normal form


class HamNormalForm:
    """``h, rho, A, r`` of ``H_n = H o T_1 o ... o T_n`` around ``z = 0``."""

    def __init__(self, chart, level=None):
        self.chart = chart
        self.level = len(chart) if level is None else level
        self.system = chart.system

    def jet(self, w, order, z=None):
        w = np.asarray(w)
        dz = self.system.dz
        z = np.zeros(w.shape[:-1] + (dz,), dtype=np.result_type(w, float)) if z is None else np.asarray(z)
        return self.chart.H(w, J.seed_variable(z, order, _field(w, z)), self.level)

    def H(self, w, z):
        return self.chart.H(np.asarray(w), np.asarray(z), self.level)[..., 0]

    def h_at(self, w):
        return self.chart.H(np.asarray(w), self._zeros(w), self.level)[..., 0]

    def rho_at(self, w):
        return self.jet(w, 1).grad[..., 0, :]

    def A_at(self, w):
        return self.jet(w, 2).hess[..., 0, :, :]

    def T3_at(self, w):
        return self.jet(w, 3).third[..., 0, :, :, :]

    def r_at(self, w, z):
        j = self.jet(w, 2)
        z = np.asarray(z)
        quad = (j.value[..., 0] + np.einsum("...i,...i->...", j.grad[..., 0, :], z)
                + 0.5 * np.einsum("...ij,...i,...j->...", j.hess[..., 0, :, :], z, z))
        return self.H(w, z) - quad

    def _zeros(self, w):
        w = np.asarray(w)
        return np.zeros(w.shape[:-1] + (self.system.dz,), dtype=np.result_type(w, float))


def extract_normal_form(ham, layers, w_plus):
    """Order-3 data ``(h, rho, A, T3)`` of the transformed Hamiltonian at ``w_plus``.

    ``layers`` is a :class:`HamChart` (or a list of layers on ``ham``).
    """
    chart = layers if isinstance(layers, HamChart) else _chart_from_layers(ham, layers)
    j = HamNormalForm(chart).jet(w_plus, 3)
    return j.value[..., 0], j.grad[..., 0, :], j.hess[..., 0, :, :], j.third[..., 0, :, :, :]


def _chart_from_layers(ham, layers):
    c = HamChart(ham, layers[0].table.axes if layers else ())
    c.layers = list(layers)
    return c


# ---------------------------------------------------------------------------
# constrained equilibria


def _dz_H(chart, level):
    def F(w, z):
        return chart.H(w, J.seed_variable(z, 1, _field(w, z)), level).grad[..., 0, :]
    return F


def solve_constrained_equilibria(ham, w, chart=None, level=None, order=0, tol=None):
    """Graph ``zeta(w)`` with ``d_z H_n(w, zeta) = 0`` by the contraction
    ``zeta <- zeta - A(w)^{-1} d_z H_n(w, zeta)``.

    With ``order=1`` a jet is returned whose gradient comes from implicit
    differentiation, ``D zeta = -(d_zz H)^{-1} d_zw H``.
    """
    chart = HamChart(ham, ()) if chart is None else chart
    level = len(chart) if level is None else level
    w = np.asarray(w)
    nf = HamNormalForm(chart, level)
    A = nf.A_at(w)
    z, it, res, est = contraction_solve(_dz_H(chart, level), A, w, tol=tol, level=level)
    if order == 0:
        return z
    dw, dz = ham.dw, ham.dz
    p = J.seed_variable(np.concatenate([w, z], -1), 2, _field(w, z))
    Hj = chart.H(p[:dw], p[dw:], level)
    hess = Hj.hess[..., 0, :, :]
    Hzz, Hzw = hess[..., dw:, dw:], hess[..., dw:, :dw]
    grad = -np.linalg.solve(Hzz, Hzw)
    return J.Jet(z, grad, order=1)


# ---------------------------------------------------------------------------
# certificates


def estimate_ham(chart, level, nu, sigma, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
    """Sampled ``delta, K, C_r, C_A, C_D`` of the level-``n`` normal form."""
    s = chart.system
    nf = HamNormalForm(chart, level)
    cache = {}

    def jets(p):
        key = id(p)
        if key not in cache:
            cache.clear()
            cache[key] = nf.jet(p, 2)
        return cache[key]

    delta = sup_norm(lambda p: jets(p).grad[..., 0, :], s.domain_V, nu, samples, seed, s.periodic)

    def inv_norm(p):
        return mat_norm(linear_inverse(jets(p).hess[..., 0, :, :], p))[..., None]

    absn = lambda v: np.abs(v[..., 0])
    K = 2 * sup_norm(inv_norm, s.domain_V, nu, samples, seed, s.periodic, norm=absn)
    C_A = sup_norm(lambda p: mat_norm(jets(p).hess[..., 0, :, :])[..., None], s.domain_V, nu, samples, seed,
                   s.periodic, norm=absn)
    box = np.concatenate([s.domain_V, s.domain_S])
    widths = np.array([nu] * s.dw + [sigma] * s.dz)
    per = s.periodic + (False,) * s.dz
    C_r = sup_norm(lambda p: nf.r_at(p[..., : s.dw], p[..., s.dw:])[..., None], box, widths, samples, seed, per,
                   norm=absn)
    half = lambda a, b: sup_norm(lambda p: p[..., a:b], s.domain_S, sigma, samples, seed)
    C_D = half(0, s.d_Z) + half(s.d_Z, s.dz) + K * delta
    return delta, K, C_r, C_A, C_D


def admissibility_ham(delta, K, C_r, kappa, xi):
    """Gating flags of one Hamiltonian step."""
    bound = math.inf if C_r == 0 else kappa ** 3 / (3 * K ** 2 * C_r)
    return {"xi_ge_2K_delta": bool(xi >= 2 * K * delta), "delta_small": bool(kappa > 0 and delta <= bound)}


def _measure(chart, level, nu, sigma, st):
    delta, K, C_r, C_A, C_D = estimate_ham(chart, level, nu, sigma, st["samples"], st["seed"])
    c = Certificate(level, delta, K, C_r, float("nan"), nu, sigma)
    c.extra.update(C_A=C_A, C_D=C_D)
    return c


def _gate(cert, eps, kappa_prev=math.inf):
    cert.kappa = min(kappa_prev, cert.sigma - cert.xi)
    cert.hypothesis_ok = admissibility_ham(cert.delta, cert.K, cert.C_R, cert.kappa, cert.xi)
    binds = not (cert.K * cert.extra["C_D"] * cert.delta <= cert.xi ** 2 / 8)
    cert.extra["advisory"] = {"g_small": not binds, "kappa_positive": cert.kappa > 0}
    if binds:
        cert.notes.append("K C_D delta <= xi^2/8 binds")
    return cert


def validate_ham(ham, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
    """Level-0 certificate of a Hamiltonian system."""
    chart = HamChart(ham, ())
    c = _measure(chart, 0, ham.nu0, ham.sigma0, dict(samples=samples, seed=seed))
    c.extra["delta_over_eps"] = c.delta / ham.eps
    c.extra["eps"] = ham.eps
    return c


def _add_layer(chart, level, tol=None):
    s = chart.system
    grid = SpectralTable.grid(chart.axes)
    pts = grid.reshape(-1, s.dw)
    z = solve_constrained_equilibria(s, pts, chart, level, tol=tol)
    table = SpectralTable.fit(chart.axes, z.reshape(grid.shape[:-1] + (s.dz,)))
    chart.append(table.chopped())


def refine_ham(ham, nu_floor, sigma_floor, xi0, mode="adaptive", axes=None, samples=DEFAULT_SAMPLES,
               seed=DEFAULT_SEED, max_steps=60, tol=None):
    """Big step ``xi0`` then small steps ``xi_n = 2 eps max(c_n, K_n)``.

    ``c_n = delta_n xi_{n-1} / (eps delta_{n-1})`` is the measured gain of the
    previous step. ``mode="adaptive"`` stops once ``delta`` stops decreasing
    by the factor 0.9 and truncates the chart at the smallest ``delta``;
    ``mode="fixed_N"`` runs until the width floors. Returns
    ``(chart, certificates, DecayReport)``.
    """
    if mode not in ("fixed_N", "adaptive"):
        raise ValueError(f"unknown mode {mode!r}")
    if not (0 < nu_floor < ham.nu0 - xi0 and 0 < sigma_floor < ham.sigma0 - xi0):
        raise ValueError("need 0 < nu_floor < nu0 - xi0 and 0 < sigma_floor < sigma0 - xi0")
    if axes is None:
        raise ValueError("refine_ham needs spectral axes for the layer tables")
    eps = ham.eps
    st = dict(samples=samples, seed=seed)
    chart = HamChart(ham, axes)
    c0 = validate_ham(ham, samples, seed)
    c0.xi = xi0
    certs = [_gate(c0, eps)]
    if c0.delta == 0:
        c0.status = "invariant"
        return chart, certs, _report(ham, certs, chart)
    if not c0.ok:
        c0.notes.append("big step taken outside the admissible regime")
    cur = c0
    steps = 0
    while steps <= max_steps:
        nu, sigma = cur.nu - cur.xi, cur.sigma - cur.xi
        if nu < nu_floor or sigma < sigma_floor:
            cur.status = "floor"
            cur.notes.append("width floor reached")
            break
        if steps > 0 and not cur.ok:
            cur.status = "halt"
            cur.notes.append("hypothesis violated: " + ", ".join(k for k, v in cur.hypothesis_ok.items() if not v))
            break
        try:
            _add_layer(chart, cur.level, tol)
            nxt = _measure(chart, cur.level + 1, nu, sigma, st)
        except (StepTooLarge, NonContraction) as exc:
            del chart.layers[cur.level:]
            cur.status = "halt"
            cur.notes.append(f"step failed: {exc}")
            break
        nxt.ratio = nxt.delta / cur.delta if cur.delta > 0 else 0.0
        gain = nxt.delta * cur.xi / (eps * cur.delta) if cur.delta > 0 else 0.0
        nxt.extra["gain"] = gain
        nxt.xi = 2 * eps * max(gain, nxt.K)
        if cur.level >= 1 and nxt.ratio > 0.5:
            nxt.notes.append(f"measured ratio {nxt.ratio:.3g} exceeds 1/2")
        certs.append(_gate(nxt, eps, cur.kappa if cur.level >= 1 else math.inf))
        steps += 1
        if nxt.delta == 0:
            nxt.status = "invariant"
            break
        if mode == "adaptive" and cur.level >= 1 and nxt.delta > ADAPTIVE_STOP * cur.delta:
            break
        cur = nxt
    if mode == "adaptive":
        best = int(np.argmin([c.delta for c in certs]))
        chart = chart.truncated(best)
    return chart, certs, _report(ham, certs, chart)


def _report(ham, certs, chart):
    trace = [(c.level, c.delta) for c in certs]
    rep = DecayReport([ham.eps], [trace], [min(d for _, d in trace)])
    rep.extra.update(levels=len(chart), status=certs[-1].status)
    return rep


# ---------------------------------------------------------------------------
# equilibrium pinning


@dataclass
class PinningReport:
    w_e: list
    points: list  # transformed slow coordinate per level
    rho_norms: list
    z_offsets: list
    max_violation: float
    ok: bool
    tol: float = 1e-11

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _transformed_equilibrium(chart, level, w_e, iters=30):
    """Slow point ``w'`` whose level-``n`` image ``(w', 0)`` lands on ``(w_e, *)``."""
    s = chart.system
    w = np.array(w_e, dtype=float)
    zero = np.zeros(s.dz)
    for _ in range(iters):
        wj = J.seed_variable(w, 1)
        ww, _ = chart.transform(wj, zero, level)
        r = ww.value - w_e
        if np.abs(r).max() <= 1e-15:
            break
        w = w - np.linalg.solve(ww.grad, r)
    return w


def check_equilibrium_pinned(ham, chart, w_e, tol=1e-11):
    """``rho_n`` at the image of the equilibrium, for every level of ``chart``."""
    w_e = np.asarray(w_e, dtype=float)
    pts, norms, offs = [], [], []
    for n in range(len(chart) + 1):
        w = _transformed_equilibrium(chart, n, w_e)
        _, z = chart.transform(w, np.zeros(ham.dz), n)
        rho = HamNormalForm(chart, n).rho_at(w[None])[0]
        pts.append(w.tolist())
        norms.append(float(np.linalg.norm(rho)))
        offs.append(float(np.linalg.norm(z)))
    worst = max(norms)
    return PinningReport(w_e.tolist(), pts, norms, offs, worst, bool(worst <= tol), tol)


# ---------------------------------------------------------------------------
# stability monitor


@dataclass
class LyapunovReport:
    eps: float
    horizon: float
    step: float
    nsteps: int
    sup_z: float
    sup_L: float
    ratio_range: tuple  # (min, max) of L / |z|^2 along the run
    eig_range: tuple  # (min, max) eigenvalue of A on the grid
    final_state: list
    backend: str

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def tabulate_normal_form(nf, axes):
    """Spectral table with channels ``[h, rho, A, T3]`` of a normal form (``d_W = 1``)."""
    s = nf.system
    if s.d_W != 1:
        raise ValueError("the stability monitor supports one slow degree of freedom")
    grid = SpectralTable.grid(axes)
    pts = grid.reshape(-1, 2)
    j = nf.jet(pts, 3)
    d = s.dz
    vals = np.concatenate([j.value[..., 0:1], j.grad[..., 0, :], j.hess[..., 0, :, :].reshape(-1, d * d),
                           j.third[..., 0, :, :, :].reshape(-1, d ** 3)], axis=-1).real
    return SpectralTable.fit(axes, vals.reshape(grid.shape[:-1] + (vals.shape[-1],))).chopped(), grid, j


def lyapunov_monitor(nf, w0, z0=None, horizon=None, step=None, axes=None):
    """Integrate the cubic normal form from ``(w0, z0)`` and record ``|z|`` and ``L``.

    ``L = <A z, z>/2 + T3[z, z, z]/6``. Default step ``eps/50`` in fast time
    and horizon ``eps^-2``. Raises :class:`Inapplicable` unless ``A`` is
    positive definite on the real grid.
    """
    s = nf.system
    eps = s.eps
    axes = axes or (Axis.fourier(s.domain_V[0, 0], s.domain_V[0, 1] - s.domain_V[0, 0], 21),
                    Axis.cheb(s.domain_V[1, 0], s.domain_V[1, 1], 9))
    table, grid, j = tabulate_normal_form(nf, axes)
    A = j.hess[..., 0, :, :].real
    As = 0.5 * (A + np.swapaxes(A, -1, -2))
    for M in As:
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise Inapplicable("A is not positive definite on the real domain") from None
        if np.min(np.abs(np.diagonal(L))) ** 2 < PD_PIVOT_TOL:
            raise Inapplicable("A is not positive definite on the real domain")
    ev = np.linalg.eigvalsh(As)
    h = eps / 50 if step is None else step
    T = eps ** -2 if horizon is None else horizon
    n = int(math.ceil(T / h))
    z0 = np.zeros(s.dz) if z0 is None else np.asarray(z0, dtype=float)
    state = np.concatenate([np.asarray(w0, dtype=float), z0])
    ua, ub = axes[0].a, axes[0].b
    va, vb = axes[1].a, axes[1].b
    C = np.ascontiguousarray(table.coeffs, dtype=float)
    y, sup_z, sup_L, qmin, qmax = rk4_normal_form(state, C, ua, ub - ua, va, vb, s.dz, eps, h, n)
    return LyapunovReport(eps, n * h, h, n, float(sup_z), float(sup_L), (float(qmin), float(qmax)),
                          (float(ev.min()), float(ev.max())), [float(c) for c in y], BACKEND)


def symplectic_defect(layer, w_plus, z_plus):
    """``max |D^T Omega D - Omega|`` of one step at the given points (exact jets)."""
    s_dw, s_dz = 2 * layer.d_W, 2 * layer.d_Z
    p = J.seed_variable(np.concatenate([w_plus, z_plus], -1), 1)
    w, z = layer.apply(p[:s_dw], p[s_dw:])
    D = np.concatenate([w.grad, z.grad], axis=-2)
    O = symplectic_matrix(layer.d_W, layer.d_Z, layer.eps)
    return float(np.abs(np.einsum("...ki,kl,...lj->...ij", D, O, D) - O).max())

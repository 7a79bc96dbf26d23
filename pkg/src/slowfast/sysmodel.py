"""Slow-fast systems, their normal-form decomposition and the graph chart.

A general system is

    w' = eps W(w, z),    z' = Z(w, z),

with ``w`` slow and ``z`` fast. Refinement straightens the slow manifold by
the shift ``z -> zeta_*(w) + z`` where ``zeta_*`` is the sum of the chart
layers. In shifted coordinates the fast field reads

    Z_n(w, z) = Z(w, zeta_* + z) - eps D zeta_*(w) W(w, zeta_* + z)

and splits into ``rho_n(w) + A_n(w) z + R_n(w, z)``.

User callables ``W(w, z)``, ``Z(w, z)`` and ``H(w, z)`` take arrays with a
trailing coordinate axis and must be written with the dual-use helpers of
:mod:`slowfast.jet` so they also accept jets and complex inputs.
"""

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from . import jet as J
from .errors import AssumptionViolation, SingularLinearPart
from .norms import sup_norm, vec_norm, mat_norm, DEFAULT_SEED, DEFAULT_SAMPLES
from .spectral import SpectralTable

COND_LIMIT = 1e12
CACHE_DIGITS = 12


def _box(b, dim, what):
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(b) != dim:
        raise ValueError(f"{what} has {len(b)} coordinates, expected {dim}")
    if np.any(b[:, 1] <= b[:, 0]):
        raise ValueError(f"{what} has an empty interval")
    return b


def linear_inverse(A, points=None):
    """Batched inverse with the conditioning gate shared by all solvers."""
    cond = np.linalg.cond(A)
    bad = ~(cond < COND_LIMIT)
    if np.any(bad):
        k = np.unravel_index(np.argmax(bad), bad.shape) if np.ndim(bad) else ()
        pt = None if points is None else np.asarray(points)[k]
        raise SingularLinearPart(pt, float(np.asarray(cond)[k]))
    return np.linalg.inv(A)


def matvec(Mflat, v, rows, cols):
    """``M @ v`` for ``M`` stored flat as ``(..., rows * cols)``; arrays or jets."""
    if not J.is_jet(Mflat) and not J.is_jet(v):
        M = np.asarray(Mflat).reshape(np.shape(Mflat)[:-1] + (rows, cols))
        return np.einsum("...ij,...j->...i", M, v)
    row = (lambda i: Mflat[i * cols:(i + 1) * cols]) if J.is_jet(Mflat) else \
        (lambda i: np.asarray(Mflat)[..., i * cols:(i + 1) * cols])
    return J.cat(*[J.dot(row(i), v) for i in range(rows)])


class GeneralSystem:
    """Slow-fast ODE ``w' = eps W(w, z)``, ``z' = Z(w, z)`` on complex boxes.

    ``W`` is rescaled at construction so that its sampled sup norm over
    ``(V + i nu0) x (S + i sigma0)`` equals one; ``eps`` absorbs the factor so
    the product ``eps W`` and hence the dynamics are unchanged.
    ``eps_original`` and ``w_scale`` keep the original units.
    """

    def __init__(self, d_w, d_z, eps, W_eval, Z_eval, domain_V, domain_S, nu0, sigma0,
                 periodic=None, name="", normalize=True, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
        if not eps > 0 or not nu0 > 0 or not sigma0 > 0:
            raise ValueError("eps, nu0 and sigma0 must be positive")
        self.d_w, self.d_z = int(d_w), int(d_z)
        self.domain_V = _box(domain_V, self.d_w, "domain_V")
        self.domain_S = _box(domain_S, self.d_z, "domain_S")
        if np.any(self.domain_S[:, 0] > 0) or np.any(self.domain_S[:, 1] < 0):
            raise ValueError("domain_S must contain 0")
        self.nu0, self.sigma0 = float(nu0), float(sigma0)
        self.periodic = tuple(periodic) if periodic else (False,) * self.d_w
        self.name = name
        self._W, self._Z = W_eval, Z_eval
        self.eps_original = float(eps)
        self.w_scale = 1.0
        if normalize:
            c = sup_norm(lambda p: W_eval(p[..., :self.d_w], p[..., self.d_w:]), self.joint_box,
                         self.joint_widths(self.nu0, self.sigma0), samples, seed,
                         self.periodic + (False,) * self.d_z)
            if c > 0:
                self.w_scale = c
        self.eps = self.eps_original * self.w_scale

    @property
    def joint_box(self):
        return np.concatenate([self.domain_V, self.domain_S])

    def joint_widths(self, nu, sigma):
        return np.array([nu] * self.d_w + [sigma] * self.d_z)

    def W(self, w, z):
        return self._W(w, z) * (1.0 / self.w_scale)

    def Z(self, w, z):
        return self._Z(w, z)

    def W_original(self, w, z):
        return self._W(w, z)


class HamiltonianSystem:
    """Hamiltonian ``H(w, z)`` with ``w = (u, v)``, ``z = (x, y)`` and
    symplectic form ``dx^dy + eps^{-1} du^dv``.

    Hamilton's equations: ``x' = H_y``, ``y' = -H_x``, ``u' = eps H_v``,
    ``v' = -eps H_u``.
    """

    def __init__(self, d_W, d_Z, eps, H_eval, domain_V, domain_S, nu0, sigma0, periodic=None, name=""):
        if not eps > 0 or not nu0 > 0 or not sigma0 > 0:
            raise ValueError("eps, nu0 and sigma0 must be positive")
        self.d_W, self.d_Z = int(d_W), int(d_Z)
        self.eps = float(eps)
        self.H = H_eval
        self.domain_V = _box(domain_V, 2 * self.d_W, "domain_V")
        self.domain_S = _box(domain_S, 2 * self.d_Z, "domain_S")
        if np.any(self.domain_S[:, 0] > 0) or np.any(self.domain_S[:, 1] < 0):
            raise ValueError("domain_S must contain 0")
        self.nu0, self.sigma0 = float(nu0), float(sigma0)
        self.periodic = tuple(periodic) if periodic else (False,) * (2 * self.d_W)
        self.name = name

    @property
    def dw(self):
        return 2 * self.d_W

    @property
    def dz(self):
        return 2 * self.d_Z

    def omega(self):
        """Matrix of the symplectic form in coordinates ``(u, v, x, y)``."""
        return symplectic_matrix(self.d_W, self.d_Z, self.eps)

    def vector_field(self, w, z):
        """Right-hand side ``(w', z')`` (arrays only)."""
        wz = np.concatenate(np.broadcast_arrays(w, z), axis=-1) if np.shape(w)[:-1] != np.shape(z)[:-1] \
            else np.concatenate([w, z], axis=-1)
        s = J.seed_variable(wz, 1, "complex" if np.iscomplexobj(wz) else "real")
        g = self.H(s[: self.dw], s[self.dw:]).grad[..., 0, :]
        gu, gv = g[..., : self.d_W], g[..., self.d_W: self.dw]
        gx, gy = g[..., self.dw: self.dw + self.d_Z], g[..., self.dw + self.d_Z:]
        return (np.concatenate([self.eps * gv, -self.eps * gu], -1), np.concatenate([gy, -gx], -1))


def symplectic_matrix(d_W, d_Z, eps):
    def Jm(d):
        return np.block([[np.zeros((d, d)), np.eye(d)], [-np.eye(d), np.zeros((d, d))]])
    n = 2 * (d_W + d_Z)
    out = np.zeros((n, n))
    out[: 2 * d_W, : 2 * d_W] = Jm(d_W) / eps
    out[2 * d_W:, 2 * d_W:] = Jm(d_Z)
    return out


# ---------------------------------------------------------------------------
# chart


class TabulatedLayer:
    """A layer ``zeta_k`` stored as a spectral table over the slow box."""

    kind = "tabulated"

    def __init__(self, table):
        self.table = table

    def tensors(self, points, order):
        return self.table.derivative_tensors(points, order)


class LazyLayer:
    """A layer solved per point on demand, with implicit-function jets.

    Layer ``k`` at derivative order ``q`` needs the previous layers at order
    ``q + 1``, so the jet order cap limits lazy charts to ``k + q <= 3``.
    """

    kind = "lazy"

    def __init__(self, chart, index, tol=None):
        self.chart = chart
        self.index = index
        self.tol = tol

    def tensors(self, points, order):
        if self.index + order > J.MAX_ORDER:
            raise J.JetError(f"lazy layer {self.index} cannot provide order {order} derivatives; "
                             "use the tabulated chart mode for deep refinement")
        pts = np.asarray(points)
        batch = pts.shape[:-1]
        flat = pts.reshape(-1, pts.shape[-1])
        cache = self.chart.cache
        keys = [(self.index, order, _round_key(p)) for p in flat] if cache is not None else None
        out = [None] * len(flat)
        missing = list(range(len(flat)))
        if cache is not None:
            missing = []
            for i, k in enumerate(keys):
                got = cache.get(k)
                if got is None:
                    missing.append(i)
                else:
                    out[i] = got
        if missing:
            parts = self._solve(flat[missing], order)
            for j, i in enumerate(missing):
                rec = tuple(p[j] for p in parts)
                out[i] = rec
                if cache is not None:
                    cache[keys[i]] = rec  # last writer wins; values are deterministic
        return [np.stack([o[k] for o in out]).reshape(batch + out[0][k].shape) for k in range(order + 1)]

    def _solve(self, pts, order):
        from .refine_general import solve_layer

        view = decompose(self.chart.system, self.chart, self.index)
        res = solve_layer(view, pts, tol=self.tol, order=order)
        return res.zeta.parts()[: order + 1] if J.is_jet(res.zeta) else [res.zeta]


def _round_key(p):
    p = np.asarray(p)
    f = lambda x: float(f"{x:.{CACHE_DIGITS}g}")
    return tuple((f(c.real), f(c.imag)) for c in p.astype(complex))


class Chart:
    """Ordered stack of graph layers with cumulative shift ``zeta_*``.

    ``mode`` is ``"tabulated"`` (layers are spectral tables on ``axes``) or
    ``"lazy"`` (layers are solved per point with a memo cache).
    """

    def __init__(self, system, mode="tabulated", axes=None, cache=True):
        if mode not in ("tabulated", "lazy"):
            raise ValueError(f"unknown chart mode {mode!r}")
        if mode == "tabulated" and axes is None:
            raise ValueError("tabulated charts need spectral axes")
        self.system = system
        self.mode = mode
        self.axes = tuple(axes) if axes is not None else None
        self.layers = []
        self.cache = {} if cache else None
        self._cum = []

    def __len__(self):
        return len(self.layers)

    def append_table(self, table):
        self.layers.append(TabulatedLayer(table))
        prev = self._cum[-1] if self._cum else None
        self._cum.append(table if prev is None else prev + table)

    def append_lazy(self, tol=None):
        self.layers.append(LazyLayer(self, len(self.layers), tol))

    def truncated(self, level):
        """A chart sharing the first ``level`` layers."""
        c = Chart(self.system, self.mode, self.axes, cache=self.cache is not None)
        c.cache = self.cache
        c.layers = self.layers[:level]
        c._cum = self._cum[:level]
        return c

    def tensors(self, points, order, level=None):
        level = len(self.layers) if level is None else level
        if level > len(self.layers):
            raise ValueError(f"chart has {len(self.layers)} layers, level {level} requested")
        pts = np.asarray(points)
        d_w, d_z = self.system_dims()
        batch = pts.shape[:-1]
        if pts.shape[-1] != d_w:
            raise ValueError("point dimension does not match the slow dimension")
        if level == 0:
            dt = np.result_type(pts, float)
            return [np.zeros(batch + (d_z,) + (d_w,) * k, dtype=dt) for k in range(order + 1)]
        if self.mode == "tabulated":
            return self._cum[level - 1].derivative_tensors(pts, order)
        out = None
        for layer in self.layers[:level]:
            t = layer.tensors(pts, order)
            out = t if out is None else [a + b for a, b in zip(out, t)]
        return out

    def system_dims(self):
        s = self.system
        return (s.d_w, s.d_z) if hasattr(s, "d_w") else (s.dw, s.dz)

    def shift_and_derivative(self, w, level=None):
        """``zeta_*(w)`` and ``D zeta_*(w)`` (flattened row-major), arrays or jets."""
        d_w, d_z = self.system_dims()
        q = w.order if J.is_jet(w) else 0
        T = self.tensors(J.value_of(w), q + 1, level)
        nb = J.value_of(w).ndim - 1
        flat = lambda t: t.reshape(t.shape[:nb] + (d_z * d_w,) + t.shape[nb + 2:])
        if not J.is_jet(w):
            return T[0], flat(T[1])
        return w.compose(T[: q + 1]), w.compose([flat(t) for t in T[1: q + 2]])


def chart_eval(chart, w, order=0):
    """Jet (order >= 1) or value of ``zeta_*`` at real or complex points ``w``."""
    if order > 2:
        raise ValueError("chart_eval supports order <= 2")
    w = np.asarray(w)
    if order == 0:
        return chart.tensors(w, 0)[0]
    T = chart.tensors(w, order)
    return J.Jet(*T, order=order)


# ---------------------------------------------------------------------------
# normal-form view


class NormalFormView:
    """Evaluators of ``Z_n``, ``rho_n``, ``A_n``, ``R_n`` and ``W_n`` at level ``n``."""

    def __init__(self, system, chart, level):
        self.system = system
        self.chart = chart
        self.level = level

    def _shift(self, w):
        return self.chart.shift_and_derivative(w, self.level)

    def Z(self, w, z):
        s = self.system
        if self.level == 0:
            return s.Z(w, z)
        zeta, dzeta = self._shift(w)
        zz = zeta + z
        return s.Z(w, zz) - s.eps * matvec(dzeta, s.W(w, zz), s.d_z, s.d_w)

    def W_at(self, w, z):
        if self.level == 0:
            return self.system.W(w, z)
        zeta, _ = self._shift(w)
        return self.system.W(w, zeta + z)

    def _zeros(self, w):
        w = J.value_of(w)
        return np.zeros(w.shape[:-1] + (self.system.d_z,), dtype=np.result_type(w, float))

    def rho_at(self, w):
        return self.Z(w, self._zeros(w))

    def A_at(self, w, z=None):
        w = np.asarray(w)
        z = self._zeros(w) if z is None else np.asarray(z)
        zs = J.seed_variable(z, 1, "complex" if np.iscomplexobj(z) or np.iscomplexobj(w) else "real")
        return self.Z(w, zs).grad

    def R_at(self, w, z):
        w, z = np.asarray(w), np.asarray(z)
        rho = self.rho_at(w)
        A = self.A_at(w)
        return self.Z(w, z) - rho - np.einsum("...ij,...j->...i", A, z)


def decompose(system, chart, level):
    if level > len(chart):
        raise ValueError(f"chart has {len(chart)} layers, level {level} requested")
    if chart.system is not system:
        dims = chart.system_dims()
        if dims != (system.d_w, system.d_z):
            raise ValueError("chart and system dimensions differ")
    return NormalFormView(system, chart, level)


# ---------------------------------------------------------------------------
# certificates


@dataclass
class Certificate:
    level: int
    delta: float
    K: float
    C_R: float
    C_z: float
    nu: float
    sigma: float
    xi: float = float("nan")
    kappa: float = float("nan")
    hypothesis_ok: dict = field(default_factory=dict)
    ratio: float = float("nan")
    status: str = "ok"
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.hypothesis_ok.values())

    def to_dict(self):
        return asdict(self)


def estimate_general(view, nu, sigma, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
    """Sampled ``delta``, ``K``, ``C_R`` and ``C_z`` of a normal-form view."""
    s = view.system
    delta, arg = sup_norm(view.rho_at, s.domain_V, nu, samples, seed, s.periodic, return_point=True)

    def inv_norm(p):
        A = view.A_at(p)
        return mat_norm(linear_inverse(A, p))[..., None]

    K = 2 * sup_norm(inv_norm, s.domain_V, nu, samples, seed, s.periodic, norm=lambda v: np.abs(v[..., 0]))
    C_R = sup_norm(lambda p: view.R_at(p[..., : s.d_w], p[..., s.d_w:]), s.joint_box,
                   s.joint_widths(nu, sigma), samples, seed, s.periodic + (False,) * s.d_z)
    C_z = sup_norm(lambda p: p, s.domain_S, s.sigma0, samples, seed)
    return delta, K, C_R, C_z, arg


def validate_assumptions(system, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED):
    """Level-0 certificate with sampled estimates of the standing assumptions."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    chart = Chart(system, "lazy")
    view = decompose(system, chart, 0)
    delta, K, C_R, C_z, arg = estimate_general(view, system.nu0, system.sigma0, samples, seed)
    cert = Certificate(0, delta, K, C_R, C_z, system.nu0, system.sigma0)
    cert.extra["delta_over_eps"] = delta / system.eps
    cert.extra["eps"] = system.eps
    cert.extra["eps_original"] = system.eps_original
    cert.extra["argmax_delta"] = [complex(c) for c in np.atleast_1d(arg)]
    return cert


def admissibility(delta, K, C_R, kappa, xi, factor=0.5):
    """Gating hypothesis flags of one refinement step."""
    bound = math.inf if C_R == 0 else factor * kappa ** 2 / (K ** 2 * C_R)
    return {
        "xi_ge_2K_delta": bool(xi >= 2 * K * delta),
        "delta_small": bool(kappa > 0 and delta <= bound),
    }


def advisory_flags(kappa, eps):
    """Conditions of the step estimates that are recorded but do not gate."""
    return {"kappa_positive": bool(kappa > 0), "eps_small": bool(eps < 2 * kappa ** 2)}

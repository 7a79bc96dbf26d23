"""Built-in slow-fast systems with closed-form oracles.

General systems (``w' = eps W``, ``z' = Z``):

``counterexample``
    ``W = f(w)``, ``Z = eps w - z``; the layers are ``zeta_0 = eps w``,
    ``zeta_1 = -eps^2 f`` and the error fields ``rho_1 = -eps^2 f``,
    ``rho_2 = eps^3 f' f``.
``linear_hyperbolic``
    the same with ``f(w) = w``; the line ``z = eps w / (1 + eps)`` is invariant.

Hamiltonian systems (``w = (u, v)``, ``z = (x, y)``, form ``dx^dy + du^dv / eps``):

``neishtadt``
    ``H = x^2/2 + y^2/2 + v + eps y f(u)`` with ``f(u) = sum_{n<=N_f} e^{-n} sin(n u)``;
    ``pinned=True`` replaces ``v`` by ``v^2/2 + 1 - cos u`` so ``(0, 0)`` is an equilibrium.
``elliptic_pendulum``
    a pendulum driving one fast oscillator of frequency ``1 + cos(u)/4``.
``two_fast_modes``
    the pendulum driving two oscillators with frequency ratio ``sqrt 2``.

Persistence families (reduced linear systems over one slow period):

``rotor``
    ``h(I) = I^2/2`` with fast frequencies ``omega_j (1 + a cos(I psi))``.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import jet as J
from .errors import SlowFastError
from .spectral import Axis
from .sysmodel import GeneralSystem, HamiltonianSystem

Q = math.exp(-1.0)


class ExampleError(SlowFastError, KeyError):
    pass


@dataclass
class ExampleSpec:
    name: str
    kind: str  # "general", "hamiltonian" or "persistence"
    builder: object
    defaults: dict
    oracles: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)  # oracle name -> residual function (eps, points, params)
    axes: object = None  # (system, params) -> tuple of Axis
    refine_defaults: dict = field(default_factory=dict)
    equilibrium: object = None  # params -> slow point or None
    sample_box: object = None  # params -> box for self-check points
    description: str = ""


_REGISTRY = {}


def register(spec, check_points=20, tol=1e-12, seed=1234):
    """Add ``spec`` to the registry after checking every oracle against its builder."""
    if spec.sample_box is not None:
        rng = np.random.default_rng(seed)
        box = np.asarray(spec.sample_box(spec.defaults), dtype=float)
        pts = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((check_points, len(box)))
        for eps in (0.1, 0.03):
            for name, chk in spec.checks.items():
                err = float(np.max(np.abs(chk(eps, pts, spec.defaults))))
                if not err <= tol:
                    raise ExampleError(f"oracle {name!r} of {spec.name!r} fails its self-check ({err:.3g})")
    _REGISTRY[spec.name] = spec
    return spec


def list_systems():
    return sorted(_REGISTRY)


def get_spec(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ExampleError(f"unknown system {name!r}; known: {', '.join(list_systems())}") from None


def _params(spec, params):
    unknown = set(params) - set(spec.defaults) - {"eps"}
    if unknown:
        raise ExampleError(f"unknown parameters for {spec.name!r}: {sorted(unknown)}")
    p = dict(spec.defaults)
    p.update(params)
    return p


def build(name, eps=None, **params):
    """Construct the named system; ``eps`` falls back to the registered default."""
    spec = get_spec(name)
    p = _params(spec, params)
    if eps is not None:
        p["eps"] = eps
    if not p["eps"] > 0:
        raise ValueError("eps must be positive")
    return spec.builder(**p)


def oracle(name, quantity, point=None, eps=None, **params):
    spec = get_spec(name)
    if quantity not in spec.oracles:
        raise ExampleError(f"{name!r} has no oracle {quantity!r}; available: {sorted(spec.oracles)}")
    p = _params(spec, params)
    if eps is not None:
        p["eps"] = eps
    return spec.oracles[quantity](point, p)


def default_axes(name, system, **params):
    spec = get_spec(name)
    return spec.axes(system, _params(spec, params))


# ---------------------------------------------------------------------------
# general systems


def _build_counterexample(eps, root, slope, samples, normalize, name="counterexample", nu0=0.5, sigma0=0.5):
    f = lambda w: slope * (w - root)
    W = lambda w, z: f(w) + 0 * z
    Z = lambda w, z: eps * w - z
    return GeneralSystem(1, 1, eps, W, Z, [(0.0, 2.0)], [(-1.0, 1.0)], nu0, sigma0, name=name,
                         normalize=normalize, samples=samples)


def _counter_oracles():
    def f(w, p):
        return p["slope"] * (np.asarray(w) - p["root"])

    return {
        "zeta0": lambda w, p: p["eps"] * np.asarray(w),
        "zeta1": lambda w, p: -p["eps"] ** 2 * f(w, p),
        "rho0": lambda w, p: p["eps"] * np.asarray(w),
        "rho1": lambda w, p: -p["eps"] ** 2 * f(w, p),
        "rho2": lambda w, p: p["eps"] ** 3 * p["slope"] * f(w, p),
        "equilibrium": lambda w, p: np.array([p["root"]]),
    }


def _general_checks(oracles, dual_f):
    """Residuals tying the layer oracles to the defining equations.

    ``Z_n(w, 0)`` is formed directly from the builder's fields with the
    oracle layers as dual-use functions, so the derivative in the shift term
    comes from jets rather than from the oracle formula under test.
    """

    def Zn(eps, w, p, layers, z=0.0):
        s = _build_counterexample(eps, p["root"], p["slope"], 64, False)
        wj = J.seed_variable(w, 1)
        zeta = sum((lay(wj, eps, p) for lay in layers), 0 * wj)
        zz = zeta.value + z
        return s.Z(w, zz) - eps * zeta.grad[..., 0] * s.W(w, zz)

    def lay0(w, eps, p):
        return eps * w

    def lay1(w, eps, p):
        return -eps ** 2 * dual_f(w, p)

    def check(layers, target):
        def run(eps, pts, p):
            q = dict(p, eps=eps)
            return Zn(eps, pts, q, layers) - oracles[target](pts, q)
        return run

    return {
        "rho0": check([], "rho0"),
        "rho1": check([lay0], "rho1"),
        "rho2": check([lay0, lay1], "rho2"),
        # each layer solves the graph equation of its level
        "zeta0": lambda eps, pts, p: Zn(eps, pts, dict(p, eps=eps), [], oracles["zeta0"](pts, dict(p, eps=eps))),
        "zeta1": lambda eps, pts, p: Zn(eps, pts, dict(p, eps=eps), [lay0], oracles["zeta1"](pts, dict(p, eps=eps))),
    }


def _cheb_axes(system, p):
    return (Axis.cheb(0.0, 2.0, p.get("table_size", 24)),)


_counter_or = _counter_oracles()
register(ExampleSpec(
    "counterexample", "general",
    builder=lambda eps, root, slope, samples, normalize, table_size, nu0, sigma0: _build_counterexample(
        eps, root, slope, samples, normalize, nu0=nu0, sigma0=sigma0),
    defaults=dict(eps=0.1, root=1.0, slope=1.0, samples=2048, normalize=True, table_size=24, nu0=0.5, sigma0=0.5),
    oracles=_counter_or,
    checks=_general_checks(_counter_or, lambda w, p: p["slope"] * (w - p["root"])),
    axes=_cheb_axes,
    refine_defaults=dict(nu_floor=0.02, sigma_floor=0.02, xi0=0.05),
    equilibrium=lambda p: np.array([p["root"]]),
    sample_box=lambda p: [(0.0, 2.0)],
    description="w' = eps f(w), z' = eps w - z with f(w) = slope (w - root)",
))


def _lin_slope(w, p):
    e = p["eps"]
    return e / (1 + e)


def _lin_check(eps, pts, p):
    c = eps / (1 + eps)
    s = _build_counterexample(eps, 0.0, 1.0, 64, False)
    z = c * pts
    return s.Z(pts, z) - c * eps * s.W(pts, z)


register(ExampleSpec(
    "linear_hyperbolic", "general",
    builder=lambda eps, samples, normalize, table_size, nu0, sigma0: _build_counterexample(
        eps, 0.0, 1.0, samples, normalize, name="linear_hyperbolic", nu0=nu0, sigma0=sigma0),
    defaults=dict(eps=0.1, samples=2048, normalize=True, table_size=24, nu0=0.5, sigma0=0.5),
    oracles={
        "manifold_slope": _lin_slope,
        "zeta0": lambda w, p: p["eps"] * np.asarray(w),
        "equilibrium": lambda w, p: np.array([0.0]),
    },
    checks={"manifold_slope": _lin_check},
    axes=_cheb_axes,
    refine_defaults=dict(nu_floor=0.02, sigma_floor=0.02, xi0=0.05),
    equilibrium=lambda p: np.array([0.0]),
    sample_box=lambda p: [(0.0, 2.0)],
    description="w' = eps w, z' = eps w - z; invariant line z = eps w / (1 + eps)",
))


# ---------------------------------------------------------------------------
# Hamiltonian systems


def neishtadt_f(u, n_terms=30):
    """``sum_{n=1}^{N} e^{-n} sin(n u)`` in closed form; arrays or jets."""
    N = int(n_terms)
    if N < 1:
        raise ValueError("n_terms must be >= 1")
    if N == 1:
        return Q * J.sin(u)
    num = Q * J.sin(u) - Q ** (N + 1) * J.sin((N + 1) * u) + Q ** (N + 2) * J.sin(N * u)
    den = (1 + Q * Q) - 2 * Q * J.cos(u)
    return num * J.recip(den)


def neishtadt_tail_bound(n_terms):
    """Bound on the dropped terms ``sum_{n > N} e^{-n}`` on real ``u``."""
    return Q ** (n_terms + 1) / (1 - Q)


def _split(w, z, d_W, d_Z):
    u = [J.comp(w, i) for i in range(d_W)]
    v = [J.comp(w, d_W + i) for i in range(d_W)]
    x = [J.comp(z, i) for i in range(d_Z)]
    y = [J.comp(z, d_Z + i) for i in range(d_Z)]
    return u, v, x, y


def _ham_neishtadt(eps, n_terms, pinned):
    def H(w, z):
        (u,), (v,), (x,), (y,) = _split(w, z, 1, 1)
        slow = 0.5 * v * v + (1 - J.cos(u)) if pinned else v
        return 0.5 * x * x + 0.5 * y * y + slow + eps * y * neishtadt_f(u, n_terms)
    return H


def _build_neishtadt(eps, n_terms, pinned, nu0, sigma0, v_half):
    if int(n_terms) < 1:
        raise ValueError("n_terms must be >= 1")
    return HamiltonianSystem(1, 1, eps, _ham_neishtadt(eps, n_terms, pinned),
                             [(0.0, 2 * math.pi), (-v_half, v_half)], [(-1.0, 1.0)] * 2,
                             nu0, sigma0, periodic=(True, False),
                             name="neishtadt_pinned" if pinned else "neishtadt")


def _ham_axes(system, p):
    return (Axis.fourier(0.0, 2 * math.pi, p.get("u_nodes", 81)),
            Axis.cheb(-p["v_half"], p["v_half"], p.get("v_nodes", 9)))


def _dz_ham(H, w, z):
    zj = J.seed_variable(z, 1)
    return H(w, zj).grad[..., 0, :]


def _neishtadt_zeta0(u, p):
    u = np.asarray(u)
    f = neishtadt_f(u, p["n_terms"])
    return np.concatenate([np.zeros_like(f), -p["eps"] * f], axis=-1)


def _neishtadt_zeta0_check(eps, pts, p):
    q = dict(p, eps=eps)
    H = _ham_neishtadt(eps, q["n_terms"], q["pinned"])
    w = pts[:, :2]
    return _dz_ham(H, w, _neishtadt_zeta0(w[:, :1], q))


def _neishtadt_series_check(eps, pts, p):
    u = pts[:, :1]
    n = np.arange(1, p["n_terms"] + 1)
    direct = (Q ** n * np.sin(n * u)).sum(axis=-1, keepdims=True)
    return neishtadt_f(u, p["n_terms"]) - direct


register(ExampleSpec(
    "neishtadt", "hamiltonian",
    builder=lambda eps, n_terms, pinned, nu0, sigma0, v_half, u_nodes, v_nodes: _build_neishtadt(
        eps, n_terms, pinned, nu0, sigma0, v_half),
    defaults=dict(eps=0.05, n_terms=30, pinned=False, nu0=0.8, sigma0=0.8, v_half=1.0, u_nodes=81, v_nodes=9),
    oracles={
        "zeta0": lambda u, p: _neishtadt_zeta0(np.asarray(u).reshape(-1, 1)[..., :1], p),
        "f": lambda u, p: neishtadt_f(np.asarray(u, dtype=float).reshape(-1, 1), p["n_terms"]),
        "tail_bound": lambda _, p: neishtadt_tail_bound(p["n_terms"]),
    },
    checks={"zeta0": _neishtadt_zeta0_check, "f": _neishtadt_series_check},
    axes=_ham_axes,
    refine_defaults=dict(nu_floor=0.1, sigma_floor=0.1, xi0=0.2),
    equilibrium=lambda p: np.array([0.0, 0.0]) if p["pinned"] else None,
    sample_box=lambda p: [(0, 2 * math.pi), (-1, 1), (-1, 1), (-1, 1)],
    description="H = x^2/2 + y^2/2 + v + eps y f(u), f(u) = sum e^{-n} sin(n u)",
))


def _freq(u, base):
    return base * (1 + 0.25 * J.cos(u))


def _ham_pendulum(eps, coupling, freqs):
    d = len(freqs)

    def H(w, z):
        (u,), (v,), x, y = _split(w, z, 1, d)
        out = 0.5 * v * v + (1 - J.cos(u))
        for xi, yi, om in zip(x, y, freqs):
            out = out + 0.5 * _freq(u, om) * (xi * xi + yi * yi) + eps * coupling * J.sin(u) * xi
        return out
    return H


def _build_pendulum(eps, coupling, freqs, nu0, sigma0, v_half, name):
    d = len(freqs)
    return HamiltonianSystem(1, d, eps, _ham_pendulum(eps, coupling, freqs),
                             [(0.0, 2 * math.pi), (-v_half, v_half)], [(-1.0, 1.0)] * (2 * d),
                             nu0, sigma0, periodic=(True, False), name=name)


def _pendulum_zeta0(u, p, freqs):
    u = np.asarray(u, dtype=float)
    xs = [-p["eps"] * p["coupling"] * np.sin(u) / _freq(u, om) for om in freqs]
    return np.concatenate(xs + [np.zeros_like(u)] * len(freqs), axis=-1)


def _pendulum_check(freqs):
    def run(eps, pts, p):
        q = dict(p, eps=eps)
        H = _ham_pendulum(eps, q["coupling"], freqs)
        return _dz_ham(H, pts[:, :2], _pendulum_zeta0(pts[:, :1], q, freqs))
    return run


PENDULUM_FREQS = (1.0,)
TWO_MODE_FREQS = (1.0, math.sqrt(2.0))

for _name, _freqs, _desc in (
        ("elliptic_pendulum", PENDULUM_FREQS,
         "H = v^2/2 + 1 - cos u + Omega(u)(x^2 + y^2)/2 + eps c sin(u) x, Omega = 1 + cos(u)/4"),
        ("two_fast_modes", TWO_MODE_FREQS,
         "pendulum driving two oscillators with frequencies Omega(u) and sqrt(2) Omega(u)")):
    register(ExampleSpec(
        _name, "hamiltonian",
        builder=(lambda fr, nm: lambda eps, coupling, nu0, sigma0, v_half, u_nodes, v_nodes: _build_pendulum(
            eps, coupling, fr, nu0, sigma0, v_half, nm))(_freqs, _name),
        defaults=dict(eps=0.05, coupling=1.0, nu0=1.0, sigma0=1.0, v_half=1.0, u_nodes=41, v_nodes=9),
        oracles={"zeta0": (lambda fr: lambda u, p: _pendulum_zeta0(np.asarray(u).reshape(-1, 1), p, fr))(_freqs)},
        checks={"zeta0": _pendulum_check(_freqs)},
        axes=_ham_axes,
        refine_defaults=dict(nu_floor=0.1, sigma_floor=0.1, xi0=0.2),
        equilibrium=lambda p: np.array([0.0, 0.0]),
        sample_box=(lambda fr: lambda p: [(0, 2 * math.pi), (-1, 1)] + [(-1, 1)] * (2 * len(fr)))(_freqs),
        description=_desc,
    ))


# ---------------------------------------------------------------------------
# persistence families


def _build_rotor(eps, omegas, a, mu):
    from .persistence import ReducedFamily

    return ReducedFamily.rotor(eps, omegas, a, mu)


def _rotor_angle(E, p):
    T = 2 * math.pi / math.sqrt(2 * E)
    return np.array([om * T / p["eps"] for om in p["omegas"]])


register(ExampleSpec(
    "rotor", "persistence",
    builder=lambda eps, omegas, a, mu: _build_rotor(eps, omegas, a, mu),
    defaults=dict(eps=0.1, omegas=(1.0,), a=0.0, mu=1e-4),
    oracles={"rotation_angle": _rotor_angle},
    description="h(I) = I^2/2, fast frequencies omega_j (1 + a cos(I psi))",
))

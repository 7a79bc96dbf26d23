"""Monodromy of the reduced linear flow over one slow period.

On an energy level ``E`` of a system with one slow degree of freedom the
fast variables obey ``eps dz/dpsi = J dQ/dz`` over a slow period
``T = 2 pi / h'(I)``. For the linear part ``Q = z.A(psi) z / 2`` the
fundamental matrix at ``T`` is the monodromy matrix; energies where one of
its eigenvalues comes within ``sqrt(mu)`` of 1 form the excluded set.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import jet as J
from ._kernels import rk4_linear_trig
from .errors import DegenerateFrequency

STEPS_PER_UNIT = 4096
FREQ_TOL = 1e-8
DET_TOL = 1e-8


def default_steps(eps):
    return STEPS_PER_UNIT * math.ceil(1.0 / eps)


def _jmul(v):
    d = v.shape[-1] // 2
    return np.concatenate([v[..., d:], -v[..., :d]], axis=-1)


@dataclass
class ReducedSystem:
    """Reduced fast dynamics at one energy.

    ``A(psi)`` returns the symmetric ``2 d_Z x 2 d_Z`` matrix of the linear
    part (``psi`` an array, result ``(..., n, n)``). ``trig = (Cc, Cs, freq)``,
    if given, writes ``A(psi) = sum_k Cc[k] cos(k freq psi) + Cs[k] sin(k freq psi)``
    and lets the monodromy run in the compiled kernel. ``Q(psi, z)`` is an
    optional nonlinear reduced Hamiltonian (arrays or jets in ``z``).
    """

    eps: float
    d_Z: int
    energy: float
    frequency: float  # dh/dI at the energy
    A: object
    trig: tuple = None
    Q: object = None
    mu: float = 0.0

    @property
    def n(self):
        return 2 * self.d_Z

    @property
    def period(self):
        if not abs(self.frequency) > FREQ_TOL:
            raise DegenerateFrequency(f"dh/dI = {self.frequency:.3g} at E = {self.energy}: period undefined")
        return 2 * math.pi / abs(self.frequency)

    def gradient(self, psi, z):
        if self.Q is None:
            return np.einsum("...ij,...j->...i", self.A(psi), z)
        g = self.Q(psi, J.seed_variable(z, 1))
        return g.grad[..., 0, :]


def _rk4(f, y, h, nsteps):
    for i in range(nsteps):
        t = i * h
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def stroboscopic_map(system, z_start, nsteps=None):
    """``z(T)`` for ``eps dz/dpsi = J dQ/dz`` from ``z(0) = z_start`` (batched over leading axes)."""
    T = system.period
    n = default_steps(system.eps) if nsteps is None else int(nsteps)
    z = np.array(z_start, dtype=float)
    if system.Q is None:
        return np.einsum("...ij,...j->...i", _fundamental(system, n), z)
    f = lambda psi, y: _jmul(system.gradient(np.full(y.shape[:-1], psi), y)) / system.eps
    return _rk4(f, z, T / n, n)


def _fundamental(system, nsteps):
    T = system.period
    if system.trig is not None:
        Cc, Cs, fr = system.trig
        return rk4_linear_trig(np.asarray(Cc)[None], np.asarray(Cs)[None], [fr], system.eps, [T], nsteps)[0]

    def f(psi, P):
        AP = system.A(np.asarray(psi)) @ P
        return np.concatenate([AP[system.d_Z:], -AP[: system.d_Z]], axis=0) / system.eps

    return _rk4(f, np.eye(system.n), T / nsteps, nsteps)


@dataclass
class MonodromyResult:
    energy: float
    T: float
    Psi_T: np.ndarray
    multipliers: np.ndarray
    gap_margin: float
    mu: float
    det: float
    nsteps: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"energy": self.energy, "T": self.T, "gap_margin": self.gap_margin, "mu": self.mu,
                "det": self.det, "nsteps": self.nsteps,
                "multipliers": [[float(c.real), float(c.imag)] for c in self.multipliers]}


def _result(system, P, nsteps):
    lam = np.linalg.eigvals(P)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    return MonodromyResult(system.energy, system.period, P, lam, float(np.min(np.abs(lam - 1))),
                           system.mu, float(np.linalg.det(P)), nsteps)


def monodromy(system, nsteps=None):
    """Fundamental matrix of ``eps Psi' = J A(psi) Psi`` at the slow period, with its eigenvalues."""
    n = default_steps(system.eps) if nsteps is None else int(nsteps)
    return _result(system, _fundamental(system, n), n)


class ReducedFamily:
    """Reduced systems indexed by energy.

    ``frequency(E)`` is ``dh/dI`` on the level ``E``; ``A(E, psi)`` the linear
    part; ``trig(E)``, if given, its trigonometric coefficients.
    """

    def __init__(self, eps, d_Z, frequency, A, trig=None, mu=0.0, name=""):
        self.eps = float(eps)
        self.d_Z = int(d_Z)
        self.frequency = frequency
        self.A = A
        self.trig = trig
        self.mu = float(mu)
        self.name = name

    def at(self, E):
        E = float(E)
        return ReducedSystem(self.eps, self.d_Z, E, float(self.frequency(E)), lambda psi: self.A(E, psi),
                             None if self.trig is None else self.trig(E), mu=self.mu)

    def monodromy_grid(self, energies, nsteps=None):
        """Monodromy at every energy; one batched kernel call when ``trig`` is available."""
        n = default_steps(self.eps) if nsteps is None else int(nsteps)
        systems = [self.at(E) for E in energies]
        out = [None] * len(systems)
        ok = []
        for i, s in enumerate(systems):
            try:
                s.period
                ok.append(i)
            except DegenerateFrequency:
                pass
        if self.trig is not None and ok:
            data = [systems[i].trig for i in ok]
            Ps = rk4_linear_trig(np.stack([np.asarray(d[0]) for d in data]), np.stack([np.asarray(d[1]) for d in data]),
                                 np.array([d[2] for d in data]), self.eps,
                                 np.array([systems[i].period for i in ok]), n)
            for i, P in zip(ok, Ps):
                out[i] = _result(systems[i], P, n)
        else:
            for i in ok:
                out[i] = monodromy(systems[i], n)
        return out

    @classmethod
    def rotor(cls, eps, omegas=(1.0,), a=0.0, mu=1e-4):
        """``h(I) = I^2/2``; oscillator ``j`` has frequency ``omega_j (1 + a cos(I psi))``.

        Every block of ``A`` is a scalar multiple of the identity, so the
        multipliers are ``exp(+-i omega_j T / eps)`` for any ``a``.
        """
        om = np.asarray(omegas, dtype=float)
        d = len(om)
        base = np.diag(np.concatenate([om, om]))

        def action(E):
            return math.sqrt(2 * E) if E > 0 else 0.0

        def A(E, psi):
            c = 1 + a * np.cos(action(E) * np.asarray(psi, dtype=float))
            return c[..., None, None] * base

        def trig(E):
            Cc = np.stack([base, a * base])
            return Cc, np.zeros_like(Cc), action(E)

        return cls(eps, d, action, A, trig, mu, name="rotor")


@dataclass
class GapScan:
    energies: list
    margins: list  # min |lambda - 1| per energy, nan where degenerate
    admissible: list
    excluded_intervals: list
    admissible_intervals: list
    excluded_measure: float  # relative to the grid span
    threshold: float
    degenerate: list
    crossings: list  # (energy, local slope of the margin) at local minima below the threshold

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _cell_edges(E):
    mid = 0.5 * (E[1:] + E[:-1])
    return np.concatenate([[E[0]], mid, [E[-1]]])


def _runs(E, edges, mask):
    out, i = [], 0
    while i < len(E):
        if mask[i]:
            j = i
            while j + 1 < len(E) and mask[j + 1]:
                j += 1
            out.append((float(edges[i]), float(edges[j + 1])))
            i = j + 1
        else:
            i += 1
    return out


def gap_set_scan(family, energies, mu, nsteps=None, results=None):
    """Classify energies by ``min_i |lambda_i(E) - 1| >= sqrt(mu)``.

    Each grid energy carries the cell between the midpoints to its
    neighbours; excluded cells merge into intervals. Degenerate frequencies
    count as excluded.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    E = np.asarray(energies, dtype=float)
    if E.ndim != 1 or len(E) < 2 or np.any(np.diff(E) <= 0):
        raise ValueError("energies must be a strictly increasing grid of at least two points")
    res = family.monodromy_grid(E, nsteps) if results is None else results
    thr = math.sqrt(mu)
    margins = np.array([np.nan if r is None else r.gap_margin for r in res])
    adm = np.array([r is not None and r.gap_margin >= thr for r in res])
    edges = _cell_edges(E)
    width = np.diff(edges)
    measure = float(width[~adm].sum() / (E[-1] - E[0]))
    crossings = []
    for i in range(1, len(E) - 1):
        m = margins[i]
        if np.isfinite(m) and m < thr and m <= margins[i - 1] and m <= margins[i + 1]:
            # the margin is V-shaped at a simple crossing; take the steeper side
            slope = max(abs(margins[i + 1] - m) / (E[i + 1] - E[i]), abs(m - margins[i - 1]) / (E[i] - E[i - 1]))
            crossings.append((float(E[i]), float(slope)))
    return GapScan(E.tolist(), [float(m) for m in margins], adm.tolist(), _runs(E, edges, ~adm),
                   _runs(E, edges, adm), measure, thr, [float(e) for e, r in zip(E, res) if r is None], crossings)

"""Graph refinement for general slow-fast systems.

Each step solves ``Z_n(w, zeta_n(w)) = 0`` for a new layer by the contraction

    zeta <- -A_n(w)^{-1} (rho_n(w) + R_n(w, zeta)),

appends it to the chart, shrinks the complex widths by ``xi_n = 2 K_n eps``
and re-estimates the error field ``rho_{n+1}`` on the smaller neighbourhood.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import jet as J
from .errors import NonContraction
from .norms import DecayReport, vec_norm, DEFAULT_SAMPLES, DEFAULT_SEED
from .spectral import SpectralTable
from .sysmodel import (Chart, Certificate, decompose, validate_assumptions, estimate_general,
                       admissibility, advisory_flags, linear_inverse)

MAX_ITER = 200
ADAPTIVE_STOP = 0.9


@dataclass
class LayerSolveResult:
    zeta: object  # Jet, or array when order == 0
    iterations: int
    residual: float
    contraction_est: float


def contraction_solve(F, A, w, tol=None, max_iter=MAX_ITER, rhs0=None, level=None):
    """Fixed-point iteration ``z <- z - A^{-1} F(w, z)`` from ``z = -A^{-1} F(w, 0)``.

    Returns ``(z, iterations, residual, contraction_est)``. ``tol`` defaults to
    ``1e-13 max(1, |rho|)`` per point.
    """
    w = np.asarray(w)
    Ainv = linear_inverse(A, w)
    rho = F(w, np.zeros(A.shape[:-1], dtype=np.result_type(w, A))) if rhs0 is None else rhs0
    scale = np.maximum(1.0, vec_norm(rho))
    tol_v = 1e-13 * scale if tol is None else tol * scale
    z = -np.einsum("...ij,...j->...i", Ainv, rho)
    prev = None
    est = 0.0
    it = 0
    while True:
        step = -np.einsum("...ij,...j->...i", Ainv, F(w, z))
        sn = vec_norm(step)
        if np.all(sn <= tol_v):
            break
        if prev is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(prev > tol_v, sn / prev, 0.0)
            est = max(est, float(np.max(r)))
            if it > 5 and est >= 1.0:
                k = int(np.argmax(r))
                raise NonContraction(est, it, w.reshape(-1, w.shape[-1])[k] if w.ndim > 1 else w, level)
        if it >= max_iter:
            k = int(np.argmax(sn))
            raise NonContraction(est, it, w.reshape(-1, w.shape[-1])[k] if w.ndim > 1 else w, level)
        z = z + step
        prev = sn
        it += 1
    residual = float(np.max(vec_norm(F(w, z)), initial=0.0))
    return z, it, residual, est


def solve_layer(view, w, tol=None, order=1, max_iter=MAX_ITER):
    """Solve the graph equation of ``view`` at points ``w`` (shape ``(..., d_w)``).

    With ``order >= 1`` the result carries the ``w``-jet of ``zeta`` obtained
    by implicit differentiation, i.e. ``D zeta = -(D_z Z_n)^{-1} D_w Z_n`` at
    ``(w, zeta(w))`` and its higher-order analogues.
    """
    w = np.asarray(w)
    A = view.A_at(w)
    rho = view.rho_at(w)
    z, it, res, est = contraction_solve(view.Z, A, w, tol, max_iter, rhs0=rho, level=view.level)
    if order == 0:
        return LayerSolveResult(z, it, res, est)
    M = view.A_at(w, z)
    Minv = linear_inverse(M, w)
    field_ = "complex" if np.iscomplexobj(w) or np.iscomplexobj(z) else "real"
    zj = J.implicit_chord(view.Z, J.seed_variable(w, order, field_), z, Minv)
    return LayerSolveResult(zj, it, res, est)


@dataclass
class RefineSettings:
    nu_floor: float
    sigma_floor: float
    xi0: float
    samples: int = DEFAULT_SAMPLES
    seed: int = DEFAULT_SEED
    tol: float = None
    max_steps: int = 60
    chart_mode: str = "tabulated"
    axes: tuple = None
    chop: float = 1e-14


def _measure(system, chart, level, nu, sigma, st):
    view = decompose(system, chart, level)
    delta, K, C_R, C_z, arg = estimate_general(view, nu, sigma, st.samples, st.seed)
    return Certificate(level, delta, K, C_R, C_z, nu, sigma)


def _gate(cert, eps, kappa_prev=math.inf):
    cert.kappa = min(kappa_prev, cert.sigma - cert.xi)
    cert.hypothesis_ok = admissibility(cert.delta, cert.K, cert.C_R, cert.kappa, cert.xi)
    cert.extra["advisory"] = advisory_flags(cert.kappa, eps)
    return cert


def _add_layer(system, chart, st):
    level = len(chart)
    if chart.mode == "lazy":
        chart.append_lazy(st.tol)
        return
    view = decompose(system, chart, level)
    grid = SpectralTable.grid(chart.axes)
    res = solve_layer(view, grid.reshape(-1, system.d_w), st.tol, order=0)
    table = SpectralTable.fit(chart.axes, res.zeta.reshape(grid.shape[:-1] + (system.d_z,)))
    chart.append_table(table.chopped(st.chop))


def iterate_step(system, chart, cert, settings, gated=True):
    """One refinement step from level ``cert.level``; returns the next certificate.

    A violated hypothesis or an exhausted width budget does not raise: the
    returned certificate has ``status`` set to ``"halt"`` or ``"floor"`` and no
    layer is added.
    """
    st = settings
    if gated and not cert.ok:
        out = Certificate(**{**cert.to_dict(), "status": "halt"})
        out.notes = cert.notes + ["hypothesis violated: " + ", ".join(k for k, v in cert.hypothesis_ok.items() if not v)]
        return out
    if cert.nu - cert.xi < st.nu_floor or cert.sigma - cert.xi < st.sigma_floor:
        out = Certificate(**{**cert.to_dict(), "status": "floor"})
        out.notes = cert.notes + ["width floor reached"]
        return out
    if cert.delta == 0:
        # already invariant: the new layer vanishes identically
        if chart.mode == "tabulated":
            chart.append_table(SpectralTable.zeros(chart.axes, (system.d_z,)))
        else:
            chart.append_lazy(st.tol)
        nxt = Certificate(**{**cert.to_dict(), "level": cert.level + 1, "nu": cert.nu - cert.xi,
                             "sigma": cert.sigma - cert.xi, "ratio": 0.0})
        return nxt
    _add_layer(system, chart, st)
    nxt = _measure(system, chart, cert.level + 1, cert.nu - cert.xi, cert.sigma - cert.xi, st)
    nxt.ratio = nxt.delta / cert.delta
    nxt.extra["theory_ratio"] = system.eps * cert.K / cert.xi
    if cert.level >= 1 and nxt.ratio > 0.5:
        nxt.notes.append(f"measured ratio {nxt.ratio:.3g} exceeds 1/2")
    nxt.xi = 2 * nxt.K * system.eps
    return _gate(nxt, system.eps, cert.kappa)


def refine(system, nu_floor, sigma_floor, xi0, mode="adaptive", axes=None, chart_mode="tabulated",
           samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED, tol=None, max_steps=60):
    """Big step with ``xi0`` followed by small steps ``xi_n = 2 K_n eps``.

    ``mode="fixed_N"`` performs ``N = floor(m / (4 K_1 eps))`` small steps with
    ``m = min(nu_1 - nu_floor, sigma_1 - sigma_floor)``; ``mode="adaptive"``
    stops once ``delta_{n+1} > 0.9 delta_n`` and returns the chart truncated
    at the smallest ``delta`` (earliest level on ties). Both stop early at a
    violated hypothesis or at the width floors.
    """
    if mode not in ("fixed_N", "adaptive"):
        raise ValueError(f"unknown mode {mode!r}")
    if not (0 < nu_floor < system.nu0 - xi0 and 0 < sigma_floor < system.sigma0 - xi0):
        raise ValueError("need 0 < nu_floor < nu0 - xi0 and 0 < sigma_floor < sigma0 - xi0")
    st = RefineSettings(nu_floor, sigma_floor, xi0, samples, seed, tol, max_steps, chart_mode, axes)
    chart = Chart(system, chart_mode, axes)
    c0 = validate_assumptions(system, samples, seed)
    c0.xi = xi0
    certs = [_gate(c0, system.eps)]
    if c0.delta == 0:
        c0.status = "invariant"
        return chart, certs, _report(system, certs, chart, math.nan)

    # the big step is the small-eps regime of the theory; its flags are recorded, not enforced
    c1 = iterate_step(system, chart, c0, st, gated=False)
    if not c0.ok:
        c0.notes.append("big step taken outside the admissible regime")
    if c1.status == "ok":
        certs.append(c1)
    else:
        certs[-1] = c1
    m = min(c1.nu - nu_floor, c1.sigma - sigma_floor) if c1.status == "ok" else math.nan
    n_target = int(math.floor(m / (4 * c1.K * system.eps))) if c1.status == "ok" else 0
    steps = 0
    while certs[-1].status == "ok" and steps < max_steps:
        if mode == "fixed_N" and steps >= n_target:
            break
        nxt = iterate_step(system, chart, certs[-1], st)
        if nxt.status != "ok":
            certs[-1] = nxt
            break
        certs.append(nxt)
        steps += 1
        if mode == "adaptive" and nxt.delta > ADAPTIVE_STOP * certs[-2].delta:
            break
    if mode == "adaptive":
        deltas = [c.delta for c in certs]
        best = int(np.argmin(deltas))  # first occurrence wins ties
        chart = chart.truncated(best)
    theory = -m * math.log(2) / (4 * c1.K) if c1.status == "ok" else math.nan
    return chart, certs, _report(system, certs, chart, theory, n_target)


def _report(system, certs, chart, theory_slope, n_target=None):
    trace = [(c.level, c.delta) for c in certs]
    rep = DecayReport([system.eps_original], [trace], [min(d for _, d in trace)], theory_slope=theory_slope)
    rep.extra.update(eps_normalized=system.eps, levels=len(chart), n_target=n_target,
                     status=certs[-1].status)
    return rep


def error_field(chart, system, w):
    """``rho_N(w)`` and the pointwise ratio ``|rho_N(w)| / |W_N(w, 0)|``."""
    view = decompose(system, chart, len(chart))
    w = np.asarray(w)
    rho = view.rho_at(w)
    Wn = view.W_at(w, np.zeros(w.shape[:-1] + (system.d_z,)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = vec_norm(rho) / vec_norm(Wn)
    return rho, ratio

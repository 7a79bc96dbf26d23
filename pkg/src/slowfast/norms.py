"""Sup norms on complex neighbourhoods, Cauchy-estimate checks, decay fits.

The complex ``nu``-neighbourhood of a real box ``V`` is ``{w + i eta : w in V,
max_j |eta_j| <= nu}``. Vectors are measured with ``|Re f|_2 + |Im f|_2``,
which agrees with the Euclidean norm on real vectors and makes the supremum
of ``w`` over ``[0, 2] + i[-0.5, 0.5]`` come out as 2.5.
"""

from dataclasses import dataclass, field, asdict
import itertools
import warnings

import numpy as np
from scipy.stats import qmc

from . import jet as J

DEFAULT_SEED = 0x5EED
DEFAULT_SAMPLES = 2048


def vec_norm(f, axis=-1):
    f = np.asarray(f)
    if np.iscomplexobj(f):
        return np.linalg.norm(f.real, axis=axis) + np.linalg.norm(f.imag, axis=axis)
    return np.linalg.norm(f, axis=axis)


def mat_norm(M):
    """Operator 2-norm of a batch of (complex) matrices."""
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


class SampleError(RuntimeError):
    def __init__(self, msg, point):
        super().__init__(f"{msg} at {point!r}")
        self.point = point


def _unit_samples(dim, n, seed):
    """First ``n`` points of a scrambled Sobol sequence in ``[0, 1]^dim``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # balance warning for non powers of two
        return qmc.Sobol(dim, scramble=True, seed=seed).random(n)


RADIUS_RANGE = (1e-3, 2.0)


def complex_samples(box, width, samples, seed=DEFAULT_SEED, periodic=None):
    """Quasi-random points of the complex neighbourhood plus the real corners.

    The imaginary offsets do not depend on ``width``: a fixed quasi-random
    cloud of offsets is generated and only those with ``max |eta_j| < width``
    are kept. Sample sets are therefore nested in both ``width`` and
    ``samples``, so the estimate can only grow with either. Offset radii mix a
    log-uniform and a uniform law on ``RADIUS_RANGE`` so narrow and wide
    neighbourhoods both see points near their boundary.

    ``width`` may be a per-coordinate vector; offsets are then stretched
    coordinatewise relative to the largest entry.
    """
    box = np.asarray(box, dtype=float)
    D = len(box)
    periodic = periodic or (False,) * D
    wv = np.broadcast_to(np.asarray(width, dtype=float), (D,))
    wmax = float(wv.max()) if D else 0.0
    scale = wv / wmax if wmax > 0 else np.zeros(D)
    u = _unit_samples(2 * D + 1, samples, seed)
    re = box[:, 0] + (box[:, 1] - box[:, 0]) * u[:, :D]
    t = 2 * u[:, D:2 * D] - 1
    t /= np.maximum(np.abs(t).max(axis=1, keepdims=True), 1e-300)
    lo, hi = RADIUS_RANGE
    v = u[:, 2 * D]
    r = np.where(np.arange(samples) % 2 == 0, lo * (hi / lo) ** v, hi * v)
    keep = r < wmax
    pts = re[keep] + 1j * (r[keep, None] * t[keep] * scale)
    real_choices = [(lo_,) if per else (lo_, hi_) for (lo_, hi_), per in zip(box, periodic)]
    corners = np.array(list(itertools.product(*real_choices)), dtype=complex).reshape(-1, D)
    return np.concatenate([corners, pts])


def sup_norm(fn, box, width, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED, periodic=None,
             norm=vec_norm, return_point=False):
    """Sampled supremum of ``norm(fn(w))`` over the complex neighbourhood."""
    if np.any(np.asarray(width) < 0) or samples < 1:
        raise ValueError("need width >= 0 and samples >= 1")
    pts = complex_samples(box, width, samples, seed, periodic)
    vals = fn(pts)
    mags = norm(vals)
    bad = ~np.isfinite(mags)
    if bad.any():
        raise SampleError("non-finite evaluation", pts[np.argmax(bad)])
    k = int(np.argmax(mags))
    return (float(mags[k]), pts[k]) if return_point else float(mags[k])


@dataclass
class CauchyReport:
    lhs: float
    rhs: float
    slack: float
    ok: bool


def cauchy_check(fn, box, nu, xi, samples=DEFAULT_SAMPLES, seed=DEFAULT_SEED, periodic=None,
                 slack=0.05):
    """Check ``|Df|_{nu - xi} <= |f|_nu / xi`` on samples.

    ``fn`` must accept jets. A violation means the sampling is too sparse to
    see the supremum and is reported with a warning.
    """
    if not 0 < xi < nu:
        raise ValueError("need 0 < xi < nu")

    def deriv(p):
        g = fn(J.seed_variable(p, 1, "complex")).grad
        if g.shape[-2] == 1:
            return np.abs(g[..., 0, :]).max(axis=-1) if g.shape[-1] == 1 else vec_norm(g[..., 0, :])
        return mat_norm(g)

    lhs = sup_norm(deriv, box, nu - xi, samples, seed, periodic, norm=lambda v: np.abs(v))
    rhs = sup_norm(fn, box, nu, samples, seed, periodic) / xi
    ok = lhs <= rhs * (1 + slack)
    if not ok:
        warnings.warn(f"Cauchy estimate violated on samples ({lhs:.3g} > {rhs:.3g}); increase samples",
                      RuntimeWarning)
    return CauchyReport(lhs, rhs, slack, bool(ok))


@dataclass
class DecayReport:
    eps_values: list
    traces: list  # per eps: list of (n, delta_n)
    min_delta: list
    slope: float = float("nan")
    intercept: float = float("nan")
    r2: float = float("nan")
    theory_slope: float = float("nan")
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def fit_decay(eps_values, traces=None, min_delta=None, theory_slope=float("nan"), prefactor_power=0):
    """Least-squares fit of ``log(min_n delta_n / eps**p) = a + b / eps``.

    Either ``traces`` (per-eps sequences of ``(n, delta_n)``) or ``min_delta``
    must be given. ``prefactor_power`` divides out an algebraic prefactor such
    as the ``eps**2`` in front of the exponential; the default fits the raw
    minima.
    """
    eps = np.asarray(eps_values, dtype=float)
    if len(eps) < 3:
        raise ValueError("need at least three eps values")
    if min_delta is None:
        if traces is None:
            raise ValueError("need traces or min_delta")
        min_delta = [min(d for _, d in tr) for tr in traces]
    md = np.asarray(min_delta, dtype=float)
    if np.any(md <= 0) or not np.all(np.isfinite(md)):
        raise ValueError("delta values must be positive and finite")
    x, y = 1 / eps, np.log(md) - prefactor_power * np.log(eps)
    tr = [[(int(n), float(d)) for n, d in t] for t in traces] if traces is not None else []
    rep = DecayReport([float(e) for e in eps], tr, [float(d) for d in md], theory_slope=float(theory_slope))
    rep.extra["prefactor_power"] = prefactor_power
    if np.ptp(y) <= 1e-12 * max(1.0, np.abs(y).max()):
        rep.slope, rep.intercept, rep.r2, rep.degenerate = 0.0, float(y.mean()), 0.0, True
        return rep
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    rep.slope, rep.intercept = float(b), float(a)
    rep.r2 = float(1 - resid @ resid / ((y - y.mean()) @ (y - y.mean())))
    return rep

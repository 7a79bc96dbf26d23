"""Tensor-product Chebyshev/Fourier tables.

A table stores the coefficients of a vector-valued function on a box in
``D`` dimensions. Each axis is either a Chebyshev axis on ``[a, b]`` or a
periodic Fourier axis of period ``L`` starting at ``a``. Tables evaluate at
complex points (the analytic continuation of the interpolant), which is what
the complex-neighbourhood sup norms need.
"""

from dataclasses import dataclass
from itertools import combinations_with_replacement, permutations

import numpy as np
from numpy.polynomial import chebyshev as C

from . import jet as J


@dataclass(frozen=True)
class Axis:
    kind: str  # "cheb" or "fourier"
    a: float
    b: float  # for fourier, b = a + period
    size: int

    def __post_init__(self):
        if self.kind not in ("cheb", "fourier"):
            raise ValueError(f"unknown axis kind {self.kind!r}")
        if self.kind == "fourier" and self.size % 2 == 0:
            raise ValueError("fourier axes need an odd number of nodes")
        if not self.b > self.a:
            raise ValueError("empty axis interval")

    @classmethod
    def cheb(cls, a, b, size):
        return cls("cheb", float(a), float(b), int(size))

    @classmethod
    def fourier(cls, a, period, size):
        return cls("fourier", float(a), float(a) + float(period), int(size))

    @property
    def periodic(self):
        return self.kind == "fourier"

    def nodes(self):
        m = self.size
        if self.kind == "cheb":
            x = np.cos(np.pi * (np.arange(m) + 0.5) / m)
            return 0.5 * (self.a + self.b) + 0.5 * (self.b - self.a) * x
        return self.a + (self.b - self.a) * np.arange(m) / m

    def _local(self, t):
        if self.kind == "cheb":
            return (2 * t - (self.a + self.b)) / (self.b - self.a)
        return 2 * np.pi * (t - self.a) / (self.b - self.a)

    def basis(self, t):
        """Basis functions at points ``t`` (any shape), stacked on a new last axis."""
        s = self._local(np.asarray(t))
        m = self.size
        if self.kind == "cheb":
            out = np.empty(s.shape + (m,), dtype=np.result_type(s, float))
            out[..., 0] = 1
            if m > 1:
                out[..., 1] = s
            for k in range(2, m):
                out[..., k] = 2 * s * out[..., k - 1] - out[..., k - 2]
            return out
        k = np.arange(1, (m - 1) // 2 + 1)
        ks = s[..., None] * k
        return np.concatenate([np.ones(s.shape + (1,), dtype=np.result_type(s, float)),
                               np.cos(ks), np.sin(ks)], axis=-1)

    def analysis_matrix(self):
        """Matrix mapping node values to coefficients."""
        return np.linalg.inv(self.basis(self.nodes()))

    def diff_coeffs(self, c, axis):
        """Coefficients of the derivative along this axis."""
        c = np.moveaxis(c, axis, 0)
        m = self.size
        if self.kind == "cheb":
            d = C.chebder(c, axis=0) * (2.0 / (self.b - self.a))
            d = np.concatenate([d, np.zeros((1,) + d.shape[1:], d.dtype)], axis=0)
        else:
            h = (m - 1) // 2
            k = (np.arange(1, h + 1) * (2 * np.pi / (self.b - self.a))).reshape((-1,) + (1,) * (c.ndim - 1))
            d = np.zeros_like(c)
            d[1:h + 1] = k * c[h + 1:]
            d[h + 1:] = -k * c[1:h + 1]
        return np.moveaxis(d, 0, axis)


def _multi_indices(dim, order):
    return list(combinations_with_replacement(range(dim), order))


class SpectralTable:
    """Coefficient tensor of shape ``(M_1, ..., M_D) + channels``."""

    def __init__(self, axes, coeffs):
        self.axes = tuple(axes)
        self.coeffs = np.asarray(coeffs)
        if self.coeffs.shape[: self.dim] != tuple(ax.size for ax in self.axes):
            raise ValueError("coefficient shape does not match axes")
        self._dcache = {(): self.coeffs}

    @property
    def dim(self):
        return len(self.axes)

    @property
    def channels(self):
        return self.coeffs.shape[self.dim:]

    @classmethod
    def grid(cls, axes):
        """Tensor grid of nodes, shape ``(M_1, ..., M_D, D)``."""
        pts = np.meshgrid(*[ax.nodes() for ax in axes], indexing="ij")
        return np.stack(pts, axis=-1)

    @classmethod
    def fit(cls, axes, values):
        """Interpolate ``values`` given on ``grid(axes)`` (channels trailing)."""
        c = np.asarray(values)
        for d, ax in enumerate(axes):
            c = np.moveaxis(np.tensordot(ax.analysis_matrix(), c, axes=([1], [d])), 0, d)
        return cls(axes, c)

    @classmethod
    def from_function(cls, axes, fn):
        return cls.fit(axes, fn(cls.grid(axes)))

    @classmethod
    def zeros(cls, axes, channels):
        return cls(axes, np.zeros(tuple(ax.size for ax in axes) + tuple(channels)))

    def chopped(self, rel_tol=1e-14):
        """Zero coefficients below ``rel_tol`` times the largest one of their channel.

        Interpolation noise sits at every mode and is amplified off the real
        axis (like ``e^{k nu}`` for Fourier modes), so it must go before the
        table is evaluated on complex neighbourhoods.
        """
        c = self.coeffs
        top = np.abs(c).max(axis=tuple(range(self.dim)), keepdims=True)
        return SpectralTable(self.axes, np.where(np.abs(c) < rel_tol * top, 0, c))

    def __add__(self, other):
        if other.axes != self.axes:
            raise ValueError("tables on different grids")
        return SpectralTable(self.axes, self.coeffs + other.coeffs)

    def scaled(self, s):
        return SpectralTable(self.axes, self.coeffs * s)

    def derivative_coeffs(self, index):
        """Coefficients of the mixed partial derivative named by a sorted index tuple."""
        index = tuple(sorted(index))
        got = self._dcache.get(index)
        if got is None:
            parent = self.derivative_coeffs(index[:-1])
            k = index[-1]
            got = self.axes[k].diff_coeffs(parent, k)
            self._dcache[index] = got
        return got

    def derivative(self, index):
        return SpectralTable(self.axes, self.derivative_coeffs(index))

    def tail_ratio(self):
        """Size of the last retained coefficients relative to the largest, per table."""
        c = np.abs(self.coeffs)
        top = c.max()
        if top == 0:
            return 0.0
        tail = 0.0
        for d, ax in enumerate(self.axes):
            cm = np.moveaxis(c, d, 0)
            if ax.periodic:
                h = (ax.size - 1) // 2
                tail = max(tail, cm[h].max(), cm[-1].max())
            else:
                tail = max(tail, cm[-1].max())
        return float(tail / top)

    # evaluation ---------------------------------------------------------

    def _contract(self, bases, coeffs):
        """Contract coefficients against per-point basis rows; returns ``(P, n_channels)``."""
        P = bases[0].shape[0]
        t = bases[0] @ coeffs.reshape(coeffs.shape[0], -1)
        for d in range(1, self.dim):
            t = t.reshape(P, self.axes[d].size, -1)
            t = np.einsum("pa,par->pr", bases[d], t)
        return t

    def evaluate(self, points, derivs=()):
        """Values at ``points`` (shape ``(..., D)``); ``derivs`` lists extra index tuples."""
        pts = np.asarray(points)
        batch = pts.shape[:-1]
        flat = pts.reshape(-1, self.dim)
        bases = [ax.basis(flat[:, d]) for d, ax in enumerate(self.axes)]
        out = [self._contract(bases, self.derivative_coeffs(ix)).reshape(batch + self.channels)
               for ix in ((),) + tuple(derivs)]
        return out[0] if not derivs else out

    def __call__(self, points):
        return self.evaluate(points)

    def derivative_tensors(self, points, order):
        """``[F, DF, D2F, ...]`` at ``points`` with channels flattened to one axis."""
        pts = np.asarray(points)
        batch = pts.shape[:-1]
        flat = pts.reshape(-1, self.dim)
        bases = [ax.basis(flat[:, d]) for d, ax in enumerate(self.axes)]
        n = int(np.prod(self.channels, dtype=int))
        D = self.dim
        res = [self._contract(bases, self.coeffs).reshape(batch + (n,))]
        for k in range(1, order + 1):
            t = None
            for ix in _multi_indices(D, k):
                v = self._contract(bases, self.derivative_coeffs(ix)).reshape(batch + (n,))
                if t is None:
                    t = np.zeros(batch + (n,) + (D,) * k, dtype=v.dtype)
                for p in set(permutations(ix)):
                    t[(Ellipsis, slice(None)) + p] = v
            res.append(t)
        return res

    def apply(self, w):
        """Evaluate with the derivative order dictated by the argument."""
        if J.is_jet(w):
            return w.compose(self.derivative_tensors(w.value, w.order))
        return self.evaluate(w)

"""Batched forward-mode truncated Taylor jets (orders 0 to 3).

A :class:`Jet` stores the derivative tensors of a vector-valued map at one or
more points::

    value  (..., m)
    grad   (..., m, n)
    hess   (..., m, n, n)
    third  (..., m, n, n, n)

where ``m`` is the output dimension, ``n`` the input dimension and ``...`` an
optional batch shape.  Entries are plain derivatives (not Taylor
coefficients), so ``exp`` seeded at 0 has ``value = grad = hess = third = 1``.

The helpers at the bottom (:func:`sin`, :func:`comp`, :func:`cat`, ...) accept
either ndarrays or jets, which lets user code write a vector field once and
evaluate it on plain points or on jets.
"""

from __future__ import annotations

import math

import numpy as np

MAX_ORDER = 3


class JetError(ValueError):
    pass


def _sym3(t):
    # t[..., i, j, k] -> t_ijk + t_jki + t_kij
    return t + np.moveaxis(t, -3, -1) + np.moveaxis(t, -1, -3)


class Jet:
    __slots__ = ("order", "value", "grad", "hess", "third")
    __array_ufunc__ = None  # make ndarray <op> Jet defer to Jet's reflected ops

    def __init__(self, value, grad, hess=None, third=None, order=None):
        if order is None:
            order = 1 + (hess is not None) + (third is not None)
        if order not in (0, 1, 2, 3):
            raise JetError(f"jet order must be in 0..3, got {order}")
        self.order = order
        self.value = np.asarray(value)
        self.grad = np.asarray(grad)
        self.hess = None if order < 2 else np.asarray(hess)
        self.third = None if order < 3 else np.asarray(third)

    # -- shape helpers ---------------------------------------------------
    @property
    def dim_out(self):
        return self.value.shape[-1]

    @property
    def dim_in(self):
        return self.grad.shape[-1]

    @property
    def batch_shape(self):
        return self.value.shape[:-1]

    @property
    def scalar_field(self):
        return "complex" if np.iscomplexobj(self.value) else "real"

    def parts(self):
        return [p for p in (self.value, self.grad, self.hess, self.third) if p is not None]

    def __repr__(self):
        return (f"Jet(order={self.order}, dim_in={self.dim_in}, dim_out={self.dim_out}, "
                f"batch={self.batch_shape}, field={self.scalar_field})")

    # -- constructors ----------------------------------------------------
    @classmethod
    def constant(cls, value, dim_in, order, dtype=None):
        value = np.asarray(value, dtype=dtype)
        if value.ndim == 0:
            value = value[None]
        zeros = lambda k: np.zeros(value.shape + (dim_in,) * k, dtype=value.dtype)
        return cls(value, zeros(1), zeros(2) if order >= 2 else None,
                   zeros(3) if order >= 3 else None, order=order)

    def _lift(self, other):
        if isinstance(other, Jet):
            if other.order != self.order or other.dim_in != self.dim_in:
                raise JetError("jet order or input dimension mismatch")
            return other
        other = np.asarray(other)
        if other.ndim == 0:
            other = other[None]
        return Jet.constant(other, self.dim_in, self.order)

    def _map(self, fn):
        return Jet(*[fn(p) for p in self.parts()], order=self.order) if self.order >= 2 else \
            Jet(fn(self.value), fn(self.grad), order=self.order)

    # -- arithmetic ------------------------------------------------------
    def __neg__(self):
        return self._map(lambda p: -p)

    def __add__(self, other):
        o = self._lift(other)
        return Jet(*[a + b for a, b in zip(self.parts(), o.parts())], order=self.order)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            c = np.asarray(other)
            if c.ndim == 0:
                c = c[None]
            return Jet(*[p * c.reshape(c.shape + (1,) * k) for k, p in enumerate(self.parts())],
                       order=self.order)
        b = self._lift(other)
        a = self
        v = a.value * b.value
        ex = lambda x, k: x.reshape(x.shape + (1,) * k)
        g = ex(a.value, 1) * b.grad + ex(b.value, 1) * a.grad
        h = t = None
        if a.order >= 2:
            outer = a.grad[..., :, None] * b.grad[..., None, :]
            h = ex(a.value, 2) * b.hess + ex(b.value, 2) * a.hess + outer + np.swapaxes(outer, -1, -2)
        if a.order >= 3:
            t = (ex(a.value, 3) * b.third + ex(b.value, 3) * a.third
                 + _sym3(a.grad[..., :, None, None] * b.hess[..., None, :, :])
                 + _sym3(b.grad[..., :, None, None] * a.hess[..., None, :, :]))
        return Jet(v, g, h, t, order=a.order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * recip(other)
        return self * (1.0 / np.asarray(other))

    def __rtruediv__(self, other):
        return recip(self) * other

    def __pow__(self, k):
        return pow_int(self, k)

    def __getitem__(self, idx):
        """Select output components; result keeps the trailing ``m`` axis."""
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1 if idx != -1 else None)
        sel = lambda p, k: p[(Ellipsis, idx) + (slice(None),) * k]
        return Jet(*[sel(p, k) for k, p in enumerate(self.parts())], order=self.order)

    def __iter__(self):
        # integer indexing never raises, so the sequence protocol would not stop
        return (self[i] for i in range(self.value.shape[-1]))

    @property
    def real(self):
        return self._map(np.real)

    # -- univariate chain rule -------------------------------------------
    def apply_scalar(self, f0, f1, f2=None, f3=None):
        """Compose elementwise with a scalar function given its derivatives at ``value``."""
        ex = lambda x, k: x.reshape(x.shape + (1,) * k)
        g = ex(f1, 1) * self.grad
        h = t = None
        if self.order >= 2:
            outer = self.grad[..., :, None] * self.grad[..., None, :]
            h = ex(f2, 2) * outer + ex(f1, 2) * self.hess
        if self.order >= 3:
            gi = self.grad
            ggg = gi[..., :, None, None] * gi[..., None, :, None] * gi[..., None, None, :]
            t = (ex(f3, 3) * ggg
                 + ex(f2, 3) * _sym3(gi[..., :, None, None] * self.hess[..., None, :, :])
                 + ex(f1, 3) * self.third)
        return Jet(f0, g, h, t, order=self.order)

    def sin(self):
        s, c = np.sin(self.value), np.cos(self.value)
        return self.apply_scalar(s, c, -s, -c)

    def cos(self):
        s, c = np.sin(self.value), np.cos(self.value)
        return self.apply_scalar(c, -s, -c, s)

    def exp(self):
        e = np.exp(self.value)
        return self.apply_scalar(e, e, e, e)

    def recip(self):
        v = self.value
        if np.any(np.abs(v) <= 1e-12):
            raise JetError("recip of a jet whose value is (near) zero")
        r = 1.0 / v
        return self.apply_scalar(r, -r**2, 2 * r**3, -6 * r**4)

    def pow_int(self, k):
        k = int(k)
        if k < 0:
            return recip(self).pow_int(-k)
        if k == 0:
            return Jet.constant(np.ones_like(self.value), self.dim_in, self.order)
        v = self.value
        c = lambda j: float(math.perm(k, j))
        p = lambda e: v**e if e >= 0 else np.zeros_like(v)
        return self.apply_scalar(p(k), c(1) * p(k - 1), c(2) * p(k - 2), c(3) * p(k - 3))

    # -- multivariate composition ------------------------------------------
    def compose(self, derivs):
        """Compose ``F`` with this jet, where ``derivs = [F, DF, D2F, D3F]`` are
        derivative tensors of ``F`` evaluated at ``self.value``.

        ``derivs[k]`` has shape ``(..., p) + (m,) * k`` with ``m = self.dim_out``.
        """
        x1 = self.grad
        y0 = derivs[0]
        y1 = np.einsum("...pa,...ai->...pi", derivs[1], x1)
        y2 = y3 = None
        if self.order >= 2:
            x2 = self.hess
            y2 = (np.einsum("...pab,...ai,...bj->...pij", derivs[2], x1, x1)
                  + np.einsum("...pa,...aij->...pij", derivs[1], x2))
        if self.order >= 3:
            x3 = self.third
            cross = np.einsum("...pab,...aij,...bk->...pijk", derivs[2], x2, x1)
            y3 = (np.einsum("...pabc,...ai,...bj,...ck->...pijk", derivs[3], x1, x1, x1)
                  + cross + np.moveaxis(cross, -1, -2) + np.moveaxis(cross, -1, -3)
                  + np.einsum("...pa,...aijk->...pijk", derivs[1], x3))
        return Jet(y0, y1, y2, y3, order=self.order)

    def matmul_const(self, M):
        """Left-multiply by constant matrices ``M`` of shape ``(..., k, m)``."""
        M = np.asarray(M)
        return Jet(*[np.einsum("...ka,...a" + "bcd"[:j] + "->...k" + "bcd"[:j], M, p)
                     for j, p in enumerate(self.parts())], order=self.order)

    def truncate(self, order):
        if order > self.order:
            raise JetError("cannot raise jet order by truncation")
        parts = self.parts()[: order + 1]
        if order == 0:
            return Jet(parts[0], np.zeros(parts[0].shape + (self.dim_in,), parts[0].dtype), order=0)
        return Jet(*parts, order=order)

    def max_abs_diff(self, other):
        return max(float(np.max(np.abs(a - b), initial=0.0)) for a, b in zip(self.parts(), other.parts()))


# ---------------------------------------------------------------------------
# operation-level API


def seed_variable(point, order, scalar_field="real"):
    """Jet of the identity map at ``point`` (shape ``(..., n)``)."""
    if order not in (0, 1, 2, 3):
        raise JetError(f"jet order must be in 0..3, got {order}")
    dtype = complex if scalar_field == "complex" else None
    point = np.asarray(point, dtype=dtype)
    if point.ndim == 0:
        point = point[None]
    if not np.all(np.isfinite(point)):
        raise JetError("seed point must be finite")
    n = point.shape[-1]
    eye = np.broadcast_to(np.eye(n, dtype=point.dtype), point.shape[:-1] + (n, n)).copy()
    z = lambda k: np.zeros(point.shape + (n,) * k, dtype=point.dtype)
    return Jet(point.copy(), eye, z(2) if order >= 2 else None, z(3) if order >= 3 else None, order=order)


def jet_arith(a, b, op):
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise JetError(f"unknown arithmetic op {op!r}")


def jet_elem(a, fn, k=None):
    if fn == "pow_int":
        return a.pow_int(k)
    if fn not in ("sin", "cos", "exp", "recip"):
        raise JetError(f"unknown elementary function {fn!r}")
    return getattr(a, fn)()


def taylor_predict(j, h):
    """Truncated Taylor polynomial of ``j`` evaluated at displacement ``h``."""
    h = np.asarray(h)
    out = j.value + np.einsum("...pi,...i->...p", j.grad, h)
    if j.order >= 2:
        out = out + 0.5 * np.einsum("...pij,...i,...j->...p", j.hess, h, h)
    if j.order >= 3:
        out = out + np.einsum("...pijk,...i,...j,...k->...p", j.third, h, h, h) / 6.0
    return out


def stack(jets):
    """Concatenate jets along the output axis."""
    jets = list(jets)
    order = jets[0].order
    if any(j.order != order or j.dim_in != jets[0].dim_in for j in jets):
        raise JetError("jet order or input dimension mismatch")
    shape = np.broadcast_shapes(*[j.batch_shape for j in jets])
    out = []
    for k in range(order + 1):
        ps = [j.parts()[k] for j in jets]
        ps = [np.broadcast_to(p, shape + p.shape[len(p.shape) - 1 - k:]) for p in ps]
        out.append(np.concatenate(ps, axis=-1 - k))
    if order == 0:
        return Jet(out[0], np.concatenate([np.broadcast_to(j.grad, shape + j.grad.shape[-2:]) for j in jets], -2), order=0)
    return Jet(*out, order=order)


# ---------------------------------------------------------------------------
# dual-use helpers: accept ndarray or Jet


def is_jet(x):
    return isinstance(x, Jet)


def comp(x, i):
    """Component ``i`` of a vector, keeping a trailing length-1 axis."""
    if is_jet(x):
        return x[i]
    x = np.asarray(x)
    return x[..., i:i + 1]


def cat(*parts):
    if any(is_jet(p) for p in parts):
        ref = next(p for p in parts if is_jet(p))
        return stack([p if is_jet(p) else ref._lift(p) for p in parts])
    shape = np.broadcast_shapes(*[np.shape(p)[:-1] for p in parts])
    return np.concatenate([np.broadcast_to(p, shape + np.shape(p)[-1:]) for p in parts], axis=-1)


def sin(x):
    return x.sin() if is_jet(x) else np.sin(x)


def cos(x):
    return x.cos() if is_jet(x) else np.cos(x)


def exp(x):
    return x.exp() if is_jet(x) else np.exp(x)


def recip(x):
    if is_jet(x):
        return x.recip()
    x = np.asarray(x)
    if np.any(np.abs(x) <= 1e-12):
        raise JetError("recip at (near) zero value")
    return 1.0 / x


def pow_int(x, k):
    return x.pow_int(k) if is_jet(x) else np.asarray(x) ** int(k)


def value_of(x):
    return x.value if is_jet(x) else np.asarray(x)


def dot(a, b):
    """Sum of componentwise products, keeping a trailing length-1 axis."""
    prod = a * b
    if is_jet(prod):
        return Jet(*[p.sum(axis=-1 - k, keepdims=True) for k, p in enumerate(prod.parts())],
                   order=prod.order)
    return np.sum(prod, axis=-1, keepdims=True)


def implicit_chord(F, x, y, Minv, iterations=None):
    """Jet of the implicit solution ``y(x)`` of ``F(x, y) = 0``.

    ``y`` is the already converged value-level solution at ``x.value`` and
    ``Minv`` the inverse of ``D_y F`` there. Each chord sweep fixes one more
    derivative order, so ``x.order + 1`` sweeps give the exact jet. Arrays
    pass through unchanged.
    """
    if not is_jet(x):
        return np.asarray(y)
    out = Jet.constant(y, x.dim_in, x.order)
    for _ in range(x.order + 1 if iterations is None else iterations):
        out = out - F(x, out).matmul_const(Minv)
    return out

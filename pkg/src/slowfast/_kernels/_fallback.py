"""Pure numpy versions of the compiled RK4 kernels.

Both functions mirror ``_rk4core`` argument for argument; the compiled
module is preferred when it imports.
"""

import math

import numpy as np


def _jmul(M):
    # J @ M with J = [[0, I], [-I, 0]] acting on the leading matrix axis
    d = M.shape[-2] // 2
    return np.concatenate([M[..., d:, :], -M[..., :d, :]], axis=-2)


def rk4_linear_trig(Cc, Cs, freq, eps, T, nsteps):
    """Fundamental matrices at ``T`` of ``eps Psi' = J A(psi) Psi``.

    ``A(psi) = sum_k Cc[k] cos(k freq psi) + Cs[k] sin(k freq psi)``. Arrays carry
    a leading batch axis ``E``: ``Cc, Cs`` are ``(E, K, n, n)``, ``freq`` and
    ``T`` are ``(E,)``. Returns ``(E, n, n)``.
    """
    Cc = np.ascontiguousarray(Cc, dtype=float)
    Cs = np.ascontiguousarray(Cs, dtype=float)
    freq = np.asarray(freq, dtype=float)
    T = np.asarray(T, dtype=float)
    E, K, n, _ = Cc.shape
    k = np.arange(K)
    h = T / nsteps

    def A(psi):
        ph = (k[None, :] * (freq * psi)[:, None])[:, :, None, None]
        return (Cc * np.cos(ph) + Cs * np.sin(ph)).sum(axis=1)

    def f(psi, P):
        return _jmul(A(psi) @ P) / eps

    P = np.broadcast_to(np.eye(n), (E, n, n)).copy()
    hh = h[:, None, None]
    for i in range(nsteps):
        psi = i * h
        k1 = f(psi, P)
        k2 = f(psi + 0.5 * h, P + 0.5 * hh * k1)
        k3 = f(psi + 0.5 * h, P + 0.5 * hh * k2)
        k4 = f(psi + h, P + hh * k3)
        P = P + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return P


def _basis_fourier(u, a, L, M):
    s = 2 * math.pi * (u - a) / L
    c = 2 * math.pi / L
    H = (M - 1) // 2
    k = np.arange(1, H + 1)
    cs, sn = np.cos(k * s), np.sin(k * s)
    b = np.concatenate([[1.0], cs, sn])
    db = np.concatenate([[0.0], -k * sn * c, k * cs * c])
    return b, db


def _basis_cheb(v, a, b_, M):
    s = (2 * v - (a + b_)) / (b_ - a)
    c = 2 / (b_ - a)
    T = np.empty(M)
    U = np.empty(M)
    T[0], U[0] = 1.0, 1.0
    if M > 1:
        T[1], U[1] = s, 2 * s
    for k in range(2, M):
        T[k] = 2 * s * T[k - 1] - T[k - 2]
        U[k] = 2 * s * U[k - 1] - U[k - 2]
    dT = np.zeros(M)
    dT[1:] = np.arange(1, M) * U[:-1] * c
    return T, dT


def nf_field(state, C, ua, uL, va, vb, d, eps):
    """Vector field of the tabulated cubic normal form at one state.

    ``C`` has shape ``(Mu, Mv, nch)`` with channels ``[h, rho (d), A (d*d),
    T3 (d**3)]`` and ``state = (u, v, z_1..z_d)``. Returns ``(rhs, L)`` with
    ``L = z.A z / 2 + T3[z, z, z] / 6``.
    """
    u, v, z = state[0], state[1], state[2:]
    Mu, Mv, nch = C.shape
    bu, dbu = _basis_fourier(u, ua, uL, Mu)
    bv, dbv = _basis_cheb(v, va, vb, Mv)
    t = np.tensordot(bu, C, axes=(0, 0))
    tu = np.tensordot(dbu, C, axes=(0, 0))
    val, dv, du = bv @ t, dbv @ t, bv @ tu
    o = 1
    rho, A, T3 = val[o:o + d], val[o + d:o + d + d * d].reshape(d, d), val[o + d + d * d:].reshape(d, d, d)
    zz = np.outer(z, z)
    Az = A @ z
    gz = rho + Az + 0.5 * np.einsum("ijk,jk->i", T3, zz)

    def Hpart(g):
        r, Am, Tm = g[o:o + d], g[o + d:o + d + d * d].reshape(d, d), g[o + d + d * d:].reshape(d, d, d)
        return g[0] + r @ z + 0.5 * z @ Am @ z + np.einsum("ijk,i,j,k->", Tm, z, z, z) / 6.0

    Hu, Hv = Hpart(du), Hpart(dv)
    dz = d // 2
    rhs = np.empty_like(state)
    rhs[0] = eps * Hv
    rhs[1] = -eps * Hu
    rhs[2:2 + dz] = gz[dz:]
    rhs[2 + dz:] = -gz[:dz]
    L = 0.5 * z @ Az + np.einsum("ijk,i,j,k->", T3, z, z, z) / 6.0
    return rhs, L


def rk4_normal_form(state0, C, ua, uL, va, vb, d, eps, h, nsteps):
    """Integrate the tabulated normal form; returns ``(state, sup|z|, sup L, min L/|z|^2, max L/|z|^2)``."""
    y = np.array(state0, dtype=float)
    sup_z = float(np.linalg.norm(y[2:]))
    sup_L, qmin, qmax = 0.0, math.inf, -math.inf
    for _ in range(nsteps):
        k1, _ = nf_field(y, C, ua, uL, va, vb, d, eps)
        k2, _ = nf_field(y + 0.5 * h * k1, C, ua, uL, va, vb, d, eps)
        k3, _ = nf_field(y + 0.5 * h * k2, C, ua, uL, va, vb, d, eps)
        k4, _ = nf_field(y + h * k3, C, ua, uL, va, vb, d, eps)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        nz = float(np.linalg.norm(y[2:]))
        _, L = nf_field(y, C, ua, uL, va, vb, d, eps)
        sup_z = max(sup_z, nz)
        sup_L = max(sup_L, L)
        if nz > 0:
            q = L / (nz * nz)
            qmin, qmax = min(qmin, q), max(qmax, q)
    return y, sup_z, sup_L, qmin, qmax

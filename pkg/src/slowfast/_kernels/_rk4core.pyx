# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 kernels; see ``_fallback`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, M_PI, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef void _trig_rhs(double[:, :, ::1] Cc, double[:, :, ::1] Cs, double fr, double psi, double inv_eps,
                    double* P, double* A, double* AP, double* out, int K, int n) nogil:
    cdef int i, j, k, l, d = n // 2
    cdef double c, s, acc
    for i in range(n * n):
        A[i] = 0.0
    for k in range(K):
        c = cos(k * fr * psi)
        s = sin(k * fr * psi)
        for i in range(n):
            for j in range(n):
                A[i * n + j] += Cc[k, i, j] * c + Cs[k, i, j] * s
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for l in range(n):
                acc += A[i * n + l] * P[l * n + j]
            AP[i * n + j] = acc
    # J (A P) with J = [[0, I], [-I, 0]]
    for i in range(d):
        for j in range(n):
            out[i * n + j] = AP[(i + d) * n + j] * inv_eps
            out[(i + d) * n + j] = -AP[i * n + j] * inv_eps


def rk4_linear_trig(Cc, Cs, freq, double eps, T, long nsteps):
    cdef double[:, :, :, ::1] cc = np.ascontiguousarray(Cc, dtype=np.float64)
    cdef double[:, :, :, ::1] cs = np.ascontiguousarray(Cs, dtype=np.float64)
    cdef double[::1] fr = np.ascontiguousarray(freq, dtype=np.float64)
    cdef double[::1] tt = np.ascontiguousarray(T, dtype=np.float64)
    cdef int E = cc.shape[0], K = cc.shape[1], n = cc.shape[2]
    out = np.empty((E, n, n))
    cdef double[:, :, ::1] res = out
    cdef int nn = n * n
    cdef double* buf = <double*> malloc(9 * nn * sizeof(double))
    cdef double *P = buf, *A = buf + nn, *AP = buf + 2 * nn, *k1 = buf + 3 * nn, *k2 = buf + 4 * nn
    cdef double *k3 = buf + 5 * nn, *k4 = buf + 6 * nn, *Q = buf + 7 * nn
    cdef int e, i
    cdef long step
    cdef double h, psi, inv_eps = 1.0 / eps
    try:
        with nogil:
            for e in range(E):
                h = tt[e] / nsteps
                for i in range(nn):
                    P[i] = 0.0
                for i in range(n):
                    P[i * n + i] = 1.0
                for step in range(nsteps):
                    psi = step * h
                    _trig_rhs(cc[e], cs[e], fr[e], psi, inv_eps, P, A, AP, k1, K, n)
                    for i in range(nn):
                        Q[i] = P[i] + 0.5 * h * k1[i]
                    _trig_rhs(cc[e], cs[e], fr[e], psi + 0.5 * h, inv_eps, Q, A, AP, k2, K, n)
                    for i in range(nn):
                        Q[i] = P[i] + 0.5 * h * k2[i]
                    _trig_rhs(cc[e], cs[e], fr[e], psi + 0.5 * h, inv_eps, Q, A, AP, k3, K, n)
                    for i in range(nn):
                        Q[i] = P[i] + h * k3[i]
                    _trig_rhs(cc[e], cs[e], fr[e], psi + h, inv_eps, Q, A, AP, k4, K, n)
                    for i in range(nn):
                        P[i] = P[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                for i in range(nn):
                    res[e, i // n, i % n] = P[i]
    finally:
        free(buf)
    return out


cdef struct NF:
    int Mu, Mv, nch, d
    double ua, uL, va, vb, eps
    double* C
    double* bu
    double* dbu
    double* bv
    double* dbv
    double* U
    double* tu
    double* t
    double* val
    double* du
    double* dv


cdef void _bases(NF* f, double u, double v) nogil:
    cdef int k, H = (f.Mu - 1) // 2
    cdef double s = 2 * M_PI * (u - f.ua) / f.uL, c = 2 * M_PI / f.uL
    f.bu[0] = 1.0
    f.dbu[0] = 0.0
    for k in range(1, H + 1):
        f.bu[k] = cos(k * s)
        f.bu[H + k] = sin(k * s)
        f.dbu[k] = -k * f.bu[H + k] * c
        f.dbu[H + k] = k * f.bu[k] * c
    cdef double x = (2 * v - (f.va + f.vb)) / (f.vb - f.va), cv = 2 / (f.vb - f.va)
    f.bv[0] = 1.0
    f.U[0] = 1.0
    if f.Mv > 1:
        f.bv[1] = x
        f.U[1] = 2 * x
    for k in range(2, f.Mv):
        f.bv[k] = 2 * x * f.bv[k - 1] - f.bv[k - 2]
        f.U[k] = 2 * x * f.U[k - 1] - f.U[k - 2]
    f.dbv[0] = 0.0
    for k in range(1, f.Mv):
        f.dbv[k] = k * f.U[k - 1] * cv


cdef void _tables(NF* f, double u, double v) nogil:
    cdef int a, b, c, nch = f.nch, Mv = f.Mv
    cdef double w0, w1
    _bases(f, u, v)
    for b in range(Mv * nch):
        f.t[b] = 0.0
        f.tu[b] = 0.0
    for a in range(f.Mu):
        w0 = f.bu[a]
        w1 = f.dbu[a]
        for b in range(Mv * nch):
            f.t[b] += w0 * f.C[a * Mv * nch + b]
            f.tu[b] += w1 * f.C[a * Mv * nch + b]
    for c in range(nch):
        f.val[c] = 0.0
        f.du[c] = 0.0
        f.dv[c] = 0.0
    for b in range(Mv):
        w0 = f.bv[b]
        w1 = f.dbv[b]
        for c in range(nch):
            f.val[c] += w0 * f.t[b * nch + c]
            f.dv[c] += w1 * f.t[b * nch + c]
            f.du[c] += w0 * f.tu[b * nch + c]


cdef double _poly(double* g, double* z, int d) nogil:
    # g[0] + r.z + z.A z / 2 + T3[z, z, z] / 6
    cdef int i, j, k
    cdef double out = g[0]
    cdef double* r = g + 1
    cdef double* A = g + 1 + d
    cdef double* T = g + 1 + d + d * d
    for i in range(d):
        out += r[i] * z[i]
        for j in range(d):
            out += 0.5 * A[i * d + j] * z[i] * z[j]
            for k in range(d):
                out += T[(i * d + j) * d + k] * z[i] * z[j] * z[k] / 6.0
    return out


cdef double _field(NF* f, double* y, double* rhs) nogil:
    cdef int i, j, k, d = f.d, h = d // 2
    cdef double* z = y + 2
    _tables(f, y[0], y[1])
    cdef double* r = f.val + 1
    cdef double* A = f.val + 1 + d
    cdef double* T = f.val + 1 + d + d * d
    cdef double gi, Az, L = 0.0
    rhs[0] = f.eps * _poly(f.dv, z, d)
    rhs[1] = -f.eps * _poly(f.du, z, d)
    for i in range(d):
        Az = 0.0
        gi = r[i]
        for j in range(d):
            Az += A[i * d + j] * z[j]
            for k in range(d):
                gi += 0.5 * T[(i * d + j) * d + k] * z[j] * z[k]
                L += T[(i * d + j) * d + k] * z[i] * z[j] * z[k] / 6.0
        gi += Az
        L += 0.5 * z[i] * Az
        if i < h:
            rhs[2 + h + i] = -gi
        else:
            rhs[2 + i - h] = gi
    return L


def rk4_normal_form(state0, C, double ua, double uL, double va, double vb, int d, double eps, double h,
                    long nsteps):
    cdef double[:, :, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef NF f
    f.Mu, f.Mv, f.nch, f.d = Cv.shape[0], Cv.shape[1], Cv.shape[2], d
    f.ua, f.uL, f.va, f.vb, f.eps = ua, uL, va, vb, eps
    f.C = &Cv[0, 0, 0]
    cdef int m = 2 + d
    cdef int size = 2 * f.Mu + 3 * f.Mv + 2 * f.Mv * f.nch + 3 * f.nch + 6 * m
    cdef double* buf = <double*> malloc(size * sizeof(double))
    f.bu = buf
    f.dbu = f.bu + f.Mu
    f.bv = f.dbu + f.Mu
    f.dbv = f.bv + f.Mv
    f.U = f.dbv + f.Mv
    f.t = f.U + f.Mv
    f.tu = f.t + f.Mv * f.nch
    f.val = f.tu + f.Mv * f.nch
    f.du = f.val + f.nch
    f.dv = f.du + f.nch
    cdef double* y = f.dv + f.nch
    cdef double* k1 = y + m
    cdef double* k2 = k1 + m
    cdef double* k3 = k2 + m
    cdef double* k4 = k3 + m
    cdef double* Q = k4 + m
    cdef int i
    cdef long step
    cdef double nz, L, q, sup_z, sup_L = 0.0, qmin = INFINITY, qmax = -INFINITY
    s0 = np.ascontiguousarray(state0, dtype=np.float64)
    cdef double[::1] s0v = s0
    try:
        for i in range(m):
            y[i] = s0v[i]
        nz = 0.0
        for i in range(d):
            nz += y[2 + i] * y[2 + i]
        sup_z = sqrt(nz)
        with nogil:
            for step in range(nsteps + 1):
                # L at the current state comes with the first stage
                L = _field(&f, y, k1)
                if step > 0:
                    nz = 0.0
                    for i in range(d):
                        nz += y[2 + i] * y[2 + i]
                    if sqrt(nz) > sup_z:
                        sup_z = sqrt(nz)
                    if L > sup_L:
                        sup_L = L
                    if nz > 0:
                        q = L / nz
                        if q < qmin:
                            qmin = q
                        if q > qmax:
                            qmax = q
                if step == nsteps:
                    break
                for i in range(m):
                    Q[i] = y[i] + 0.5 * h * k1[i]
                _field(&f, Q, k2)
                for i in range(m):
                    Q[i] = y[i] + 0.5 * h * k2[i]
                _field(&f, Q, k3)
                for i in range(m):
                    Q[i] = y[i] + h * k3[i]
                _field(&f, Q, k4)
                for i in range(m):
                    y[i] = y[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
        out = np.array([y[i] for i in range(m)])
    finally:
        free(buf)
    return out, sup_z, sup_L, qmin, qmax

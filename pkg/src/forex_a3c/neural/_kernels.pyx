# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM and Adam kernels.

Drop-in replacement for ``_kernels_py``: identical signatures, layouts and
gate order. Matrix products go through BLAS dgemm; elementwise gate work is
fused into single loops. All heavy sections run without the GIL so thread
workers can overlap.
"""
import numpy as np
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm

cdef extern from "_lstm_cell.h" nogil:
    void lstm_cell_forward(int B, int H, double *gates, const double *bias,
                           const double *c_prev, double *c_next, double *h_next)
    void lstm_cell_backward(int B, int H, const double *gates, const double *c_prev,
                            const double *c_next, const double *dh, double *dc, double *da)

BACKEND = "cython"


def lstm_forward(const double[:, :, ::1] x, const double[:, ::1] w_ih,
                 const double[:, ::1] w_hh, const double[::1] b):
    cdef int T = x.shape[0], B = x.shape[1], I = x.shape[2]
    cdef int H = w_hh.shape[1], G = 4 * H
    if w_ih.shape[0] != G or w_ih.shape[1] != I or w_hh.shape[0] != G or b.shape[0] != G:
        raise ValueError("LSTM weight shapes do not match input")
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    gates = np.empty((T, B, G))
    cdef double[:, :, ::1] hv = hs
    cdef double[:, :, ::1] cv = cs
    cdef double[:, :, ::1] gv = gates
    cdef int t, n = T * B
    cdef double alpha = 1.0, beta0 = 0.0, beta1 = 1.0
    cdef char tr = b'T'
    cdef char nt = b'N'
    if n == 0:
        return hs, cs, gates
    with nogil:
        dgemm(&tr, &nt, &G, &n, &I, &alpha, <double*>&w_ih[0, 0], &I,
              <double*>&x[0, 0, 0], &I, &beta0, &gv[0, 0, 0], &G)
        for t in range(T):
            if t > 0:
                dgemm(&tr, &nt, &G, &B, &H, &alpha, <double*>&w_hh[0, 0], &H,
                      &hv[t, 0, 0], &H, &beta1, &gv[t, 0, 0], &G)
            lstm_cell_forward(B, H, &gv[t, 0, 0], &b[0], &cv[t, 0, 0],
                              &cv[t + 1, 0, 0], &hv[t + 1, 0, 0])
    return hs, cs, gates


def lstm_backward(const double[:, :, ::1] x, const double[:, ::1] w_ih,
                  const double[:, ::1] w_hh, const double[:, :, ::1] hs,
                  const double[:, :, ::1] cs, const double[:, :, ::1] gates,
                  const double[:, ::1] dh_last):
    cdef int T = x.shape[0], B = x.shape[1], I = x.shape[2]
    cdef int H = w_hh.shape[1], G = 4 * H
    da = np.empty((T, B, G))
    dh = np.array(dh_last, dtype=np.float64, order="C")
    dc = np.zeros((B, H))
    dw_ih = np.zeros((G, I))
    dw_hh = np.zeros((G, H))
    db = np.zeros(G)
    cdef double[:, :, ::1] dav = da
    cdef double[:, ::1] dhv = dh
    cdef double[:, ::1] dcv = dc
    cdef double[:, ::1] dwi = dw_ih
    cdef double[:, ::1] dwh = dw_hh
    cdef double[::1] dbv = db
    cdef int t, bi, j, n = T * B
    cdef double alpha = 1.0, beta0 = 0.0
    cdef char tr = b'T'
    cdef char nt = b'N'
    if n == 0:
        return dw_ih, dw_hh, db
    with nogil:
        for t in range(T - 1, -1, -1):
            lstm_cell_backward(B, H, &gates[t, 0, 0], &cs[t, 0, 0], &cs[t + 1, 0, 0],
                               &dhv[0, 0], &dcv[0, 0], &dav[t, 0, 0])
            if t > 0:
                dgemm(&nt, &nt, &H, &B, &G, &alpha, <double*>&w_hh[0, 0], &H,
                      &dav[t, 0, 0], &G, &beta0, &dhv[0, 0], &H)
        dgemm(&nt, &tr, &I, &G, &n, &alpha, <double*>&x[0, 0, 0], &I,
              &dav[0, 0, 0], &G, &beta0, &dwi[0, 0], &I)
        dgemm(&nt, &tr, &H, &G, &n, &alpha, <double*>&hs[0, 0, 0], &H,
              &dav[0, 0, 0], &G, &beta0, &dwh[0, 0], &H)
        for t in range(T):
            for bi in range(B):
                for j in range(G):
                    dbv[j] += dav[t, bi, j]
    return dw_ih, dw_hh, db


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double b1, double b2, double eps, double bc1, double bc2):
    # one read and one 8-byte store per element of p, m and v
    cdef Py_ssize_t k, n = p.shape[0]
    cdef double gk, mk, vk
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_update: length mismatch")
    with nogil:
        for k in range(n):
            gk = g[k]
            mk = b1 * m[k] + (1.0 - b1) * gk
            vk = b2 * v[k] + (1.0 - b2) * (gk * gk)
            m[k] = mk
            v[k] = vk
            p[k] -= lr * (mk / bc1) / (sqrt(vk / bc2) + eps)

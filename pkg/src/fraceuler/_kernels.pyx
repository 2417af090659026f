# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.  Operation order mirrors ``_kernels_py`` so both
backends agree to rounding (and usually bit-for-bit)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def affine_scheme(const double[:, ::1] x0, const double[:, :, ::1] dB, double dt,
                  const double[:, ::1] A, const double[::1] a,
                  const double[:, :, ::1] S, const double[:, ::1] s, double corr):
    """Euler recursion for ``b = A x + a``, ``sigma^j = S_j x + s_j``.

    ``corr`` multiplies ``sum_j S_j (S_j x + s_j)``; pass 0 for the naive scheme.
    Returns states of shape ``(M, n+1, d)``.
    """
    cdef Py_ssize_t M = dB.shape[0], m = dB.shape[1], n = dB.shape[2]
    cdef Py_ssize_t d = x0.shape[1]
    cdef Py_ssize_t p, k, i, l, j
    out_arr = np.empty((M, n + 1, d))
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] x = np.empty(d), nx = np.empty(d), sig = np.empty(d * m)
    cdef double acc, noise, c
    cdef bint use_corr = corr != 0.0
    for p in range(M):
        for i in range(d):
            x[i] = x0[p, i]
            out[p, 0, i] = x[i]
        for k in range(n):
            for j in range(m):
                for i in range(d):
                    acc = s[j, i]
                    for l in range(d):
                        acc = acc + S[j, i, l] * x[l]
                    sig[j * d + i] = acc
            for i in range(d):
                acc = a[i]
                for l in range(d):
                    acc = acc + A[i, l] * x[l]
                noise = 0.0
                for j in range(m):
                    noise = noise + sig[j * d + i] * dB[p, j, k]
                nx[i] = x[i] + acc * dt + noise
                if use_corr:
                    c = 0.0
                    for j in range(m):
                        acc = 0.0
                        for l in range(d):
                            acc = acc + S[j, i, l] * sig[j * d + l]
                        c = c + acc
                    nx[i] = nx[i] + corr * c
            for i in range(d):
                x[i] = nx[i]
                out[p, k + 1, i] = x[i]
    return out_arr


def linear_variational(const double[:, :, ::1] dB, double dt,
                       const double[:, ::1] A, const double[:, :, ::1] S,
                       const double[:, ::1] C, double corr):
    """Euler steps of the Jacobian flow for constant ``grad b = A``, ``grad sigma^j = S_j``.

    A nonzero ``corr`` adds ``corr * C @ Lambda_k`` last (``C = sum_j S_j S_j``).
    """
    cdef Py_ssize_t M = dB.shape[0], m = dB.shape[1], n = dB.shape[2]
    cdef Py_ssize_t d = A.shape[0]
    cdef Py_ssize_t p, k, i, c, l, j
    out_arr = np.empty((M, n + 1, d, d))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double acc, drift, noise, v
    cdef bint use_corr = corr != 0.0
    for p in range(M):
        for i in range(d):
            for c in range(d):
                out[p, 0, i, c] = 1.0 if i == c else 0.0
        for k in range(n):
            for i in range(d):
                for c in range(d):
                    drift = 0.0
                    for l in range(d):
                        drift = drift + A[i, l] * out[p, k, l, c]
                    noise = 0.0
                    for j in range(m):
                        acc = 0.0
                        for l in range(d):
                            acc = acc + S[j, i, l] * out[p, k, l, c]
                        noise = noise + acc * dB[p, j, k]
                    v = out[p, k, i, c] + drift * dt + noise
                    if use_corr:
                        acc = 0.0
                        for l in range(d):
                            acc = acc + C[i, l] * out[p, k, l, c]
                        v = v + corr * acc
                    out[p, k + 1, i, c] = v
    return out_arr


def zeta_offdiag(const double[:, ::1] bi, const double[:, ::1] bj, Py_ssize_t sub, bint trapezoid):
    """Per-block sums of ``(B^i - B^i_{t_k}) dB^j`` on a subgrid of ``sub`` points per block."""
    cdef Py_ssize_t M = bi.shape[0], N = bi.shape[1] - 1
    cdef Py_ssize_t n = N // sub
    cdef Py_ssize_t p, k, r, q
    out_arr = np.empty((M, n))
    cdef double[:, ::1] out = out_arr
    cdef double base, acc, w
    for p in range(M):
        for k in range(n):
            q = k * sub
            base = bi[p, q]
            acc = 0.0
            for r in range(q, q + sub):
                if trapezoid:
                    w = 0.5 * (bi[p, r] + bi[p, r + 1]) - base
                else:
                    w = bi[p, r] - base
                acc = acc + w * (bj[p, r + 1] - bj[p, r])
            out[p, k] = acc
    return out_arr

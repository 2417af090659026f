"""Pure-numpy fallback for the compiled kernels.

Loops run over time and the (small) state indices; every arithmetic operation
is vectorized across paths and performed in the same order as the compiled
version.
"""

import numpy as np


def affine_scheme(x0, dB, dt, A, a, S, s, corr):
    M, m, n = dB.shape
    d = x0.shape[1]
    out = np.empty((M, n + 1, d))
    x = [x0[:, i].copy() for i in range(d)]
    for i in range(d):
        out[:, 0, i] = x[i]
    use_corr = corr != 0.0
    for k in range(n):
        sig = [[None] * d for _ in range(m)]
        for j in range(m):
            for i in range(d):
                acc = np.full(M, s[j, i])
                for l in range(d):
                    acc = acc + S[j, i, l] * x[l]
                sig[j][i] = acc
        nx = []
        for i in range(d):
            acc = np.full(M, a[i])
            for l in range(d):
                acc = acc + A[i, l] * x[l]
            noise = np.zeros(M)
            for j in range(m):
                noise = noise + sig[j][i] * dB[:, j, k]
            xi = x[i] + acc * dt + noise
            if use_corr:
                c = np.zeros(M)
                for j in range(m):
                    acc = np.zeros(M)
                    for l in range(d):
                        acc = acc + S[j, i, l] * sig[j][l]
                    c = c + acc
                xi = xi + corr * c
            nx.append(xi)
        x = nx
        for i in range(d):
            out[:, k + 1, i] = x[i]
    return out


def linear_variational(dB, dt, A, S, C, corr):
    M, m, n = dB.shape
    d = A.shape[0]
    out = np.empty((M, n + 1, d, d))
    out[:, 0] = np.eye(d)
    use_corr = corr != 0.0
    for k in range(n):
        cur = out[:, k]
        for i in range(d):
            for c in range(d):
                drift = np.zeros(M)
                for l in range(d):
                    drift = drift + A[i, l] * cur[:, l, c]
                noise = np.zeros(M)
                for j in range(m):
                    acc = np.zeros(M)
                    for l in range(d):
                        acc = acc + S[j, i, l] * cur[:, l, c]
                    noise = noise + acc * dB[:, j, k]
                v = cur[:, i, c] + drift * dt + noise
                if use_corr:
                    acc = np.zeros(M)
                    for l in range(d):
                        acc = acc + C[i, l] * cur[:, l, c]
                    v = v + corr * acc
                out[:, k + 1, i, c] = v
    return out


def zeta_offdiag(bi, bj, sub, trapezoid):
    M, N1 = bi.shape
    n = (N1 - 1) // sub
    base = bi[:, :-1:sub][:, :n, None]
    left = bi[:, :-1].reshape(M, n, sub)
    if trapezoid:
        w = 0.5 * (left + bi[:, 1:].reshape(M, n, sub)) - base
    else:
        w = left - base
    prod = w * np.diff(bj, axis=1).reshape(M, n, sub)
    # sequential left-to-right accumulation, matching the compiled loop
    acc = np.zeros((M, n))
    for r in range(sub):
        acc = acc + prod[:, :, r]
    return acc

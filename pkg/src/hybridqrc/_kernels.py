"""Numba kernels for the real-arithmetic master-equation RK4 stepper.

The state is split as rho = R + iI with R symmetric and I antisymmetric. The
generator is written as

    drho = -i(K rho - (K rho)^dag) + sum_s c_s L_s rho L_s^T

with K = A + iB and every L_s real, which holds for bosonic ladder operators in
the Fock basis. All sparse matrices are CSR triples (indptr, indices, data).
"""
import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _gather_set(indptr, indices, data, B, out):
    # out = S @ B
    n = B.shape[1]
    for r in range(indptr.shape[0] - 1):
        for k in range(n):
            out[r, k] = 0.0
        for p in range(indptr[r], indptr[r + 1]):
            c = indices[p]
            v = data[p]
            for k in range(n):
                out[r, k] += v * B[c, k]


@njit(cache=True, fastmath=True)
def _gather_add(indptr, indices, data, B, out, scale):
    # out += scale * S @ B
    n = B.shape[1]
    for r in range(indptr.shape[0] - 1):
        for p in range(indptr[r], indptr[r + 1]):
            c = indices[p]
            v = scale * data[p]
            for k in range(n):
                out[r, k] += v * B[c, k]


@njit(cache=True, fastmath=True)
def real_rhs(R, I, Ap, Ai, Ad, Bp, Bi, Bd, Jp, Ji, Jd, Jo, Jc, dR, dI, X, Y, T, TT):
    """Write d(R + iI)/dt into dR, dI. X, Y, T, TT are scratch buffers."""
    n = R.shape[0]
    # K rho = (A R - B I) + i(A I + B R); X holds A R, T holds B I
    _gather_set(Ap, Ai, Ad, R, X)
    _gather_set(Bp, Bi, Bd, I, T)
    _gather_set(Ap, Ai, Ad, I, Y)
    _gather_add(Bp, Bi, Bd, R, Y, 1.0)
    for i in range(n):
        for j in range(n):
            dR[i, j] = Y[i, j] + Y[j, i]
            dI[i, j] = (X[j, i] - T[j, i]) - (X[i, j] - T[i, j])
    for s in range(Jc.shape[0]):
        a = Jo[s]
        b = Jo[s + 1]
        ip = Jp[s]
        # L R L^T: (L R)^T = R L^T since R is symmetric
        _gather_set(ip, Ji[a:b], Jd[a:b], R, T)
        for i in range(n):
            for j in range(n):
                TT[i, j] = T[j, i]
        _gather_add(ip, Ji[a:b], Jd[a:b], TT, dR, Jc[s])
        # L I L^T: (L I)^T = -I L^T since I is antisymmetric
        _gather_set(ip, Ji[a:b], Jd[a:b], I, T)
        for i in range(n):
            for j in range(n):
                TT[i, j] = T[j, i]
        _gather_add(ip, Ji[a:b], Jd[a:b], TT, dI, -Jc[s])


@njit(cache=True, fastmath=True)
def rk4_real(R, I, Ap, Ai, Ad, Bp, Bi, Bd, Jp, Ji, Jd, Jo, Jc, h, nsteps):
    """Advance (R, I) by ``nsteps`` classical RK4 steps of size ``h``; returns new arrays."""
    n = R.shape[0]
    R = R.copy()
    I = I.copy()
    kR = np.zeros((4, n, n))
    kI = np.zeros((4, n, n))
    yR = np.zeros((n, n))
    yI = np.zeros((n, n))
    X = np.zeros((n, n))
    Y = np.zeros((n, n))
    T = np.zeros((n, n))
    TT = np.zeros((n, n))
    frac = (0.5 * h, 0.5 * h, h)
    w = h / 6.0
    for _ in range(nsteps):
        real_rhs(R, I, Ap, Ai, Ad, Bp, Bi, Bd, Jp, Ji, Jd, Jo, Jc, kR[0], kI[0], X, Y, T, TT)
        for m in range(3):
            f = frac[m]
            for i in range(n):
                for j in range(n):
                    yR[i, j] = R[i, j] + f * kR[m, i, j]
                    yI[i, j] = I[i, j] + f * kI[m, i, j]
            real_rhs(yR, yI, Ap, Ai, Ad, Bp, Bi, Bd, Jp, Ji, Jd, Jo, Jc, kR[m + 1], kI[m + 1], X, Y, T, TT)
        for i in range(n):
            for j in range(n):
                R[i, j] += w * (kR[0, i, j] + 2.0 * kR[1, i, j] + 2.0 * kR[2, i, j] + kR[3, i, j])
                I[i, j] += w * (kI[0, i, j] + 2.0 * kI[1, i, j] + 2.0 * kI[2, i, j] + kI[3, i, j])
    return R, I

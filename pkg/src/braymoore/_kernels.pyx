# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the spectral hot loops.

Signatures and semantics mirror :mod:`braymoore._kernels_py` exactly; each
routine handles one evaluation point at a time and loops over atoms in C.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite

cnp.import_array()

cdef double D_FLOOR = 1e-120


def stieltjes(loc, w, z):
    cdef const double[::1] L = np.ascontiguousarray(loc, dtype=np.float64)
    cdef const double[::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double complex[::1] Z = np.ascontiguousarray(np.asarray(z, dtype=np.complex128).ravel())
    cdef Py_ssize_t n = L.shape[0], p = Z.shape[0], i, j
    out = np.empty(p, dtype=np.complex128)
    cdef double complex[::1] O = out
    cdef double complex acc
    for i in range(p):
        acc = 0
        for j in range(n):
            acc = acc + W[j] / (L[j] - Z[i])
        O[i] = acc
    return out


cdef inline void _sums(const double[::1] L, const double[::1] W, Py_ssize_t n,
                       double complex omega, double complex* s1,
                       double complex* s2) nogil:
    cdef Py_ssize_t j
    cdef double complex inv, a1 = 0, a2 = 0
    for j in range(n):
        inv = 1.0 / (L[j] - omega)
        a1 = a1 + W[j] * inv
        a2 = a2 + W[j] * inv * inv
    s1[0] = a1
    s2[0] = a2


def subordinate(loc, w, double sigma2, z, m0, double tol, long max_iter,
                double newton_switch):
    cdef const double[::1] L = np.ascontiguousarray(loc, dtype=np.float64)
    cdef const double[::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double complex[::1] Z = np.ascontiguousarray(np.asarray(z, dtype=np.complex128).ravel())
    m_arr = np.array(m0, dtype=np.complex128).ravel().copy()
    cdef double complex[::1] M = m_arr
    cdef Py_ssize_t n = L.shape[0], p = Z.shape[0], i
    res_arr = np.full(p, np.inf)
    it_arr = np.zeros(p, dtype=np.int64)
    cdef double[::1] R = res_arr
    cdef long long[::1] IT = it_arr
    cdef double complex m, s1, s2, r, picard, step
    cdef double ar, best
    cdef long it
    cdef bint newton_ok
    with nogil:
        for i in range(p):
            m = M[i]
            best = 1e308
            newton_ok = True
            for it in range(max_iter + 1):
                _sums(L, W, n, Z[i] + sigma2 * m, &s1, &s2)
                r = m - s1
                ar = sqrt(r.real * r.real + r.imag * r.imag)
                if ar > best:
                    newton_ok = False
                else:
                    best = ar
                IT[i] = it
                if ar <= tol or it == max_iter:
                    break
                picard = 0.5 * m + 0.5 * s1
                if ar < newton_switch and newton_ok:
                    step = m - r / (1.0 - sigma2 * s2)
                    if not (isfinite(step.real) and isfinite(step.imag)) or step.imag <= 0.0:
                        step = picard
                else:
                    step = picard
                if it % 16 == 15:
                    newton_ok = True
                m = step
            M[i] = m
            R[i] = best
    return m_arr, res_arr, it_arr


cdef inline double _upsilon2(const double[::1] L, const double[::1] W, Py_ssize_t n,
                             double sigma2, double a) nogil:
    cdef Py_ssize_t j
    cdef double d, phi = 0, dphi, den, s = 0, step
    cdef int k
    for j in range(n):
        d = (L[j] - a) * (L[j] - a)
        if d < D_FLOOR:
            d = D_FLOOR
        phi = phi + W[j] / d
    if phi * sigma2 <= 1.0:
        return 0.0
    for k in range(200):
        phi = 0
        dphi = 0
        for j in range(n):
            d = (L[j] - a) * (L[j] - a)
            if d < D_FLOOR:
                d = D_FLOOR
            den = d + s
            phi = phi + W[j] / den
            dphi = dphi + W[j] / (den * den)
        step = (sigma2 - 1.0 / phi) * (phi * phi) / dphi
        s = s + step
        if s < 0:
            s = 0
        if fabs(step) <= 1e-15 * s + 1e-300:
            break
    return s


cdef inline void _biane_point(const double[::1] L, const double[::1] W, Py_ssize_t n,
                              double sigma2, double a, double* s_out,
                              double* psi_out, double* dpsi_out) nogil:
    cdef Py_ssize_t j
    cdef double s = _upsilon2(L, W, n, sigma2, a)
    cdef double d, den, diff, q, q2
    cdef double sq = 0, sdq = 0, sq2 = 0, sdq2 = 0, sddq2 = 0, ds
    for j in range(n):
        diff = a - L[j]
        d = diff * diff
        if d < D_FLOOR:
            d = D_FLOOR
        den = d + s
        q = W[j] / den
        q2 = q / den
        sq = sq + q
        sdq = sdq + diff * q
        sq2 = sq2 + q2
        sdq2 = sdq2 + diff * q2
        sddq2 = sddq2 + diff * diff * q2
    if s > 0:
        ds = -2.0 * sdq2 / (sq2 if sq2 > 1e-300 else 1e-300)
    else:
        ds = 0.0
    s_out[0] = s
    psi_out[0] = a + sigma2 * sdq
    dpsi_out[0] = 1.0 + sigma2 * (sq - 2.0 * sddq2 - ds * sdq2)


def biane_map(loc, w, double sigma2, a):
    cdef const double[::1] L = np.ascontiguousarray(loc, dtype=np.float64)
    cdef const double[::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] A = np.ascontiguousarray(np.asarray(a, dtype=np.float64).ravel())
    cdef Py_ssize_t n = L.shape[0], p = A.shape[0], i
    s_arr = np.empty(p)
    psi_arr = np.empty(p)
    dpsi_arr = np.empty(p)
    cdef double[::1] S = s_arr
    cdef double[::1] P = psi_arr
    cdef double[::1] DP = dpsi_arr
    with nogil:
        for i in range(p):
            _biane_point(L, W, n, sigma2, A[i], &S[i], &P[i], &DP[i])
    return s_arr, psi_arr, dpsi_arr


cdef inline double _psi(const double[::1] L, const double[::1] W, Py_ssize_t n,
                        double sigma2, double a) nogil:
    cdef double s, psi, dpsi
    _biane_point(L, W, n, sigma2, a, &s, &psi, &dpsi)
    return psi


def biane_invert(loc, w, double sigma2, x, long max_iter=200):
    cdef const double[::1] L = np.ascontiguousarray(loc, dtype=np.float64)
    cdef const double[::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] X = np.ascontiguousarray(np.asarray(x, dtype=np.float64).ravel())
    cdef Py_ssize_t n = L.shape[0], p = X.shape[0], i
    out = np.empty(p)
    cdef double[::1] O = out
    cdef double sigma = sqrt(sigma2)
    cdef double lo, hi, flo, fhi, a, fa, xtol, denom, sec
    cdef int side
    cdef long it
    with nogil:
        for i in range(p):
            lo = X[i] - sigma
            hi = X[i] + sigma
            flo = _psi(L, W, n, sigma2, lo) - X[i]
            fhi = _psi(L, W, n, sigma2, hi) - X[i]
            a = 0.5 * (lo + hi)
            side = 0
            xtol = 4e-16 * (1.0 + fabs(X[i]))
            for it in range(max_iter):
                denom = fhi - flo
                if denom != 0 and it % 4 != 3:
                    sec = hi - fhi * (hi - lo) / denom
                    if sec > lo and sec < hi:
                        a = sec
                    else:
                        a = 0.5 * (lo + hi)
                else:
                    a = 0.5 * (lo + hi)
                fa = _psi(L, W, n, sigma2, a) - X[i]
                if fa < 0:
                    lo = a
                    flo = fa
                    if side == 1:
                        fhi = 0.5 * fhi
                    side = 1
                else:
                    hi = a
                    fhi = fa
                    if side == -1:
                        flo = 0.5 * flo
                    side = -1
                if fabs(fa) <= xtol or hi - lo <= 4e-16 * (1.0 + fabs(a)):
                    break
            O[i] = a
    return out

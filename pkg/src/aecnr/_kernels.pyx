# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched Hermitian kernels (Cholesky, cyclic Jacobi, GEVD).

Drop-in replacement for ``_kernels_py``; identical signatures and return
conventions. Each matrix of the batch is processed independently with
plain C loops, which is what makes per-bin, per-frame designs affordable.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot

cnp.import_array()

ctypedef double complex cplx


cdef inline double cabs2(cplx z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef inline cplx cconj(cplx z) noexcept nogil:
    return z.real - 1j * z.imag


cdef int _chol(cplx[:, ::1] A, cplx[:, ::1] L, double piv_tol) noexcept nogil:
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t i, j, m
    cdef double scale = 0.0, d
    cdef cplx acc
    cdef int fail = -1
    for i in range(n):
        if fabs(A[i, i].real) > scale:
            scale = fabs(A[i, i].real)
        for j in range(n):
            L[i, j] = 0
    for j in range(n):
        d = A[j, j].real
        for m in range(j):
            d -= cabs2(L[j, m])
        if d <= piv_tol * scale:
            if fail < 0:
                fail = <int>j
            d = 1.0
        L[j, j] = sqrt(d)
        for i in range(j + 1, n):
            acc = A[i, j]
            for m in range(j):
                acc = acc - L[i, m] * cconj(L[j, m])
            L[i, j] = acc / L[j, j].real
    return fail


cdef void _fsub(cplx[:, ::1] L, cplx[:, ::1] X) noexcept nogil:
    # in place: X <- L^-1 X
    cdef Py_ssize_t n = L.shape[0]
    cdef Py_ssize_t r = X.shape[1]
    cdef Py_ssize_t i, m, c
    for c in range(r):
        for i in range(n):
            for m in range(i):
                X[i, c] = X[i, c] - L[i, m] * X[m, c]
            X[i, c] = X[i, c] / L[i, i]


cdef void _bsub_h(cplx[:, ::1] L, cplx[:, ::1] X) noexcept nogil:
    # in place: X <- L^-H X
    cdef Py_ssize_t n = L.shape[0]
    cdef Py_ssize_t r = X.shape[1]
    cdef Py_ssize_t i, m, c
    for c in range(r):
        for i in range(n - 1, -1, -1):
            for m in range(i + 1, n):
                X[i, c] = X[i, c] - cconj(L[m, i]) * X[m, c]
            X[i, c] = X[i, c] / cconj(L[i, i])


cdef double _off(cplx[:, ::1] A) noexcept nogil:
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t i, j
    cdef double s = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                s += cabs2(A[i, j])
    return sqrt(s)


cdef void _rotate_all(cplx[:, ::1] A, cplx[:, ::1] U) noexcept nogil:
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t p, q, i
    cdef double mag, tau, t, c, s
    cdef cplx ph, j00, j01, j10, j11, xp, xq
    for p in range(n - 1):
        for q in range(p + 1, n):
            # hypot: squaring tiny off-diagonals would go subnormal and break |ph| = 1
            mag = hypot(A[p, q].real, A[p, q].imag)
            if mag == 0.0:
                continue
            ph = cconj(A[p, q] / mag)
            tau = (A[q, q].real - A[p, p].real) / (2.0 * mag)
            if tau >= 0:
                t = 1.0 / (tau + hypot(1.0, tau))
            else:
                t = -1.0 / (-tau + hypot(1.0, tau))
            c = 1.0 / sqrt(1.0 + t * t)
            s = t * c
            j00 = c
            j01 = s
            j10 = -s * ph
            j11 = c * ph
            for i in range(n):
                xp = A[i, p]
                xq = A[i, q]
                A[i, p] = xp * j00 + xq * j10
                A[i, q] = xp * j01 + xq * j11
            for i in range(n):
                xp = A[p, i]
                xq = A[q, i]
                A[p, i] = cconj(j00) * xp + cconj(j10) * xq
                A[q, i] = cconj(j01) * xp + cconj(j11) * xq
            A[p, q] = 0
            A[q, p] = 0
            A[p, p] = A[p, p].real
            A[q, q] = A[q, q].real
            for i in range(n):
                xp = U[i, p]
                xq = U[i, q]
                U[i, p] = xp * j00 + xq * j10
                U[i, q] = xp * j01 + xq * j11


cdef int _jacobi(cplx[:, ::1] A, cplx[:, ::1] U, double tol, int max_sweeps) noexcept nogil:
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t i, j
    cdef double norm = 0.0
    cdef int sweeps = 0
    for i in range(n):
        for j in range(n):
            norm += cabs2(A[i, j])
            U[i, j] = 1.0 if i == j else 0.0
    norm = sqrt(norm)
    while _off(A) > tol * norm:
        if sweeps >= max_sweeps:
            return -1
        _rotate_all(A, U)
        sweeps += 1
    # one extra sweep after the threshold is met
    _rotate_all(A, U)
    return sweeps


cdef void _sort_desc(cplx[:, ::1] A, cplx[:, ::1] U, double[::1] lam) noexcept nogil:
    # stable insertion sort of the diagonal, permuting U columns alongside
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t i, j, r
    cdef double key
    cdef cplx tmp
    for i in range(n):
        lam[i] = A[i, i].real
    for i in range(1, n):
        j = i
        while j > 0 and lam[j - 1] < lam[j]:
            key = lam[j]
            lam[j] = lam[j - 1]
            lam[j - 1] = key
            for r in range(n):
                tmp = U[r, j]
                U[r, j] = U[r, j - 1]
                U[r, j - 1] = tmp
            j -= 1


def cholesky(A, double piv_tol):
    cdef cplx[:, :, ::1] a = np.ascontiguousarray(A, dtype=np.complex128)
    cdef Py_ssize_t K = a.shape[0], n = a.shape[1], k
    L_arr = np.zeros((K, n, n), dtype=np.complex128)
    fail_arr = np.empty(K, dtype=np.int64)
    cdef cplx[:, :, ::1] L = L_arr
    cdef cnp.int64_t[::1] fail = fail_arr
    with nogil:
        for k in range(K):
            fail[k] = _chol(a[k], L[k], piv_tol)
    return L_arr, fail_arr


def chol_solve(L, B):
    cdef cplx[:, :, ::1] l = np.ascontiguousarray(L, dtype=np.complex128)
    X_arr = np.array(B, dtype=np.complex128, order="C", copy=True)
    cdef cplx[:, :, ::1] X = X_arr
    cdef Py_ssize_t K = l.shape[0], k
    with nogil:
        for k in range(K):
            _fsub(l[k], X[k])
            _bsub_h(l[k], X[k])
    return X_arr


def forward_sub(L, B):
    cdef cplx[:, :, ::1] l = np.ascontiguousarray(L, dtype=np.complex128)
    X_arr = np.array(B, dtype=np.complex128, order="C", copy=True)
    cdef cplx[:, :, ::1] X = X_arr
    cdef Py_ssize_t K = l.shape[0], k
    with nogil:
        for k in range(K):
            _fsub(l[k], X[k])
    return X_arr


def eigh(A, double tol, int max_sweeps):
    a_arr = np.array(A, dtype=np.complex128, order="C", copy=True)
    cdef cplx[:, :, ::1] a = a_arr
    cdef Py_ssize_t K = a.shape[0], n = a.shape[1], k
    U_arr = np.empty((K, n, n), dtype=np.complex128)
    lam_arr = np.empty((K, n), dtype=np.float64)
    sw_arr = np.empty(K, dtype=np.int64)
    cdef cplx[:, :, ::1] U = U_arr
    cdef double[:, ::1] lam = lam_arr
    cdef cnp.int64_t[::1] sw = sw_arr
    with nogil:
        for k in range(K):
            sw[k] = _jacobi(a[k], U[k], tol, max_sweeps)
            _sort_desc(a[k], U[k], lam[k])
    return U_arr, lam_arr, sw_arr


def gevd(A, B, double piv_tol, double tol, int max_sweeps):
    cdef cplx[:, :, ::1] a = np.ascontiguousarray(A, dtype=np.complex128)
    cdef cplx[:, :, ::1] b = np.ascontiguousarray(B, dtype=np.complex128)
    cdef Py_ssize_t K = a.shape[0], n = a.shape[1], k, i, j, m
    L_arr = np.zeros((K, n, n), dtype=np.complex128)
    C_arr = np.empty((K, n, n), dtype=np.complex128)
    W_arr = np.empty((K, n, n), dtype=np.complex128)
    U_arr = np.empty((K, n, n), dtype=np.complex128)
    Q_arr = np.zeros((K, n, n), dtype=np.complex128)
    lam_arr = np.empty((K, n), dtype=np.float64)
    fail_arr = np.empty(K, dtype=np.int64)
    sw_arr = np.empty(K, dtype=np.int64)
    cdef cplx[:, :, ::1] L = L_arr
    cdef cplx[:, :, ::1] C = C_arr
    cdef cplx[:, :, ::1] W = W_arr
    cdef cplx[:, :, ::1] U = U_arr
    cdef cplx[:, :, ::1] Q = Q_arr
    cdef double[:, ::1] lam = lam_arr
    cdef cnp.int64_t[::1] fail = fail_arr
    cdef cnp.int64_t[::1] sw = sw_arr
    with nogil:
        for k in range(K):
            fail[k] = _chol(b[k], L[k], piv_tol)
            for i in range(n):
                for j in range(n):
                    W[k, i, j] = a[k, i, j]
            _fsub(L[k], W[k])
            for i in range(n):
                for j in range(n):
                    C[k, i, j] = cconj(W[k, j, i])
            _fsub(L[k], C[k])
            for i in range(n):
                for j in range(i, n):
                    C[k, i, j] = 0.5 * (C[k, i, j] + cconj(C[k, j, i]))
                    C[k, j, i] = cconj(C[k, i, j])
            sw[k] = _jacobi(C[k], U[k], tol, max_sweeps)
            _sort_desc(C[k], U[k], lam[k])
            for i in range(n):
                for j in range(n):
                    for m in range(i + 1):
                        Q[k, i, j] = Q[k, i, j] + L[k, i, m] * U[k, m, j]
    return Q_arr, lam_arr, fail_arr, sw_arr

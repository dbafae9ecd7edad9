"""Pure numpy versions of the batched Hermitian kernels.

Every function works on a stack of small matrices with shape ``(K, n, n)``
and loops over matrix indices, never over the batch. Signatures and return
conventions mirror the compiled ``_kernels`` module exactly, so callers can
swap one for the other.
"""

import numpy as np


def cholesky(A, piv_tol):
    """Batched lower Cholesky factor.

    Returns ``(L, fail)`` where ``fail[k]`` is the first pivot index that
    dropped to ``piv_tol * max(diag)`` or below, or -1 when matrix ``k``
    factorised cleanly.
    """
    A = np.asarray(A, dtype=np.complex128)
    K, n, _ = A.shape
    L = np.zeros_like(A)
    fail = np.full(K, -1, dtype=np.int64)
    scale = np.max(np.abs(A.real[:, np.arange(n), np.arange(n)]), axis=1) if n else np.zeros(K)
    for j in range(n):
        d = A[:, j, j].real - np.sum(np.abs(L[:, j, :j]) ** 2, axis=1)
        bad = (d <= piv_tol * scale) & (fail < 0)
        fail[bad] = j
        d = np.where(d > 0, d, 1.0)
        ljj = np.sqrt(d)
        L[:, j, j] = ljj
        if j + 1 < n:
            acc = A[:, j + 1:, j] - np.einsum("kim,km->ki", L[:, j + 1:, :j], np.conj(L[:, j, :j]))
            L[:, j + 1:, j] = acc / ljj[:, None]
    return L, fail


def forward_sub(L, B):
    """Solve ``L X = B`` for lower-triangular ``L``; ``B`` is ``(K, n, r)``."""
    K, n, _ = L.shape
    X = np.array(B, dtype=np.complex128, copy=True)
    for i in range(n):
        if i:
            X[:, i, :] -= np.einsum("km,kmr->kr", L[:, i, :i], X[:, :i, :])
        X[:, i, :] /= L[:, i, i][:, None]
    return X


def backward_sub_h(L, B):
    """Solve ``L^H X = B`` for lower-triangular ``L``."""
    K, n, _ = L.shape
    X = np.array(B, dtype=np.complex128, copy=True)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            X[:, i, :] -= np.einsum("km,kmr->kr", np.conj(L[:, i + 1:, i]), X[:, i + 1:, :])
        X[:, i, :] /= np.conj(L[:, i, i])[:, None]
    return X


def chol_solve(L, B):
    return backward_sub_h(L, forward_sub(L, B))


def _off_norm(A):
    n = A.shape[-1]
    mask = ~np.eye(n, dtype=bool)
    return np.sqrt(np.sum(np.abs(A[:, mask]) ** 2, axis=1))


def _sweep(A, U, active):
    n = A.shape[-1]
    for p in range(n - 1):
        for q in range(p + 1, n):
            apq = A[:, p, q]
            mag = np.abs(apq)
            rot = active & (mag > 0)
            if not rot.any():
                continue
            safe = np.where(rot, mag, 1.0)
            phase = np.where(rot, apq / safe, 1.0)
            tau = (A[:, q, q].real - A[:, p, p].real) / (2.0 * safe)
            sgn = np.where(tau >= 0, 1.0, -1.0)
            t = sgn / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            c = np.where(rot, c, 1.0)
            s = np.where(rot, s, 0.0)
            ph = np.conj(phase)
            # J = diag(1, e^{-i phi}) @ [[c, s], [-s, c]]
            j00 = c.astype(np.complex128)
            j01 = s.astype(np.complex128)
            j10 = -s * ph
            j11 = c * ph

            cp = A[:, :, p].copy()
            cq = A[:, :, q].copy()
            A[:, :, p] = cp * j00[:, None] + cq * j10[:, None]
            A[:, :, q] = cp * j01[:, None] + cq * j11[:, None]
            rp = A[:, p, :].copy()
            rq = A[:, q, :].copy()
            A[:, p, :] = np.conj(j00)[:, None] * rp + np.conj(j10)[:, None] * rq
            A[:, q, :] = np.conj(j01)[:, None] * rp + np.conj(j11)[:, None] * rq
            A[rot, p, q] = 0.0
            A[rot, q, p] = 0.0
            A[:, p, p] = A[:, p, p].real
            A[:, q, q] = A[:, q, q].real

            up = U[:, :, p].copy()
            uq = U[:, :, q].copy()
            U[:, :, p] = up * j00[:, None] + uq * j10[:, None]
            U[:, :, q] = up * j01[:, None] + uq * j11[:, None]


def eigh(A, tol, max_sweeps):
    """Cyclic complex Jacobi eigendecomposition of a Hermitian stack.

    Returns ``(U, lam, sweeps)`` with eigenvalues sorted in descending
    order. ``sweeps[k]`` is -1 when matrix ``k`` did not converge.
    """
    A = np.array(A, dtype=np.complex128, copy=True)
    K, n, _ = A.shape
    U = np.broadcast_to(np.eye(n, dtype=np.complex128), (K, n, n)).copy()
    norm = np.sqrt(np.sum(np.abs(A) ** 2, axis=(1, 2)))
    sweeps = np.zeros(K, dtype=np.int64)
    done = _off_norm(A) <= tol * norm
    polished = np.zeros(K, dtype=bool)
    while True:
        # one extra sweep after the threshold is met
        active = ~polished & (sweeps < max_sweeps)
        if not active.any():
            break
        _sweep(A, U, active)
        polished |= done & active
        sweeps[active & ~done] += 1
        done = done | (_off_norm(A) <= tol * norm)
    sweeps[~done] = -1
    lam = A[:, np.arange(n), np.arange(n)].real.copy()
    order = np.argsort(-lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1)
    U = np.take_along_axis(U, order[:, None, :], axis=2)
    return U, lam, sweeps


def gevd(A, B, piv_tol, tol, max_sweeps):
    """Generalised decomposition of the pencil ``(A, B)``.

    Whitens with the Cholesky factor of ``B`` and diagonalises
    ``L^-1 A L^-H``. Returns ``(Q, lam, fail, sweeps)`` where
    ``A = Q diag(lam) Q^H`` and ``B = Q Q^H``.
    """
    L, fail = cholesky(B, piv_tol)
    Y = forward_sub(L, A)
    C = forward_sub(L, np.conj(np.swapaxes(Y, 1, 2)))
    C = 0.5 * (C + np.conj(np.swapaxes(C, 1, 2)))
    U, lam, sweeps = eigh(C, tol, max_sweeps)
    Q = L @ U
    return Q, lam, fail, sweeps

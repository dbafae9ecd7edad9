"""Complex Hermitian matrix algebra for small per-bin problems.

All public functions accept a single matrix ``(n, n)`` or a stack
``(..., n, n)`` and process every matrix of the stack independently. The
heavy lifting is delegated to a batched kernel module: the compiled
``_kernels`` extension when it is importable, else ``_kernels_py``. Set
``AECNR_BACKEND=python`` to force the fallback.
"""

import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

_BACKENDS = {"python": _kernels_py}
try:
    from . import _kernels as _kernels_c
except ImportError:  # pragma: no cover - depends on the build
    _kernels_c = None
    warnings.warn("Compiled kernels unavailable, falling back to the numpy implementation.")
else:
    _BACKENDS["cython"] = _kernels_c

if os.environ.get("AECNR_BACKEND", "").lower() == "python" or _kernels_c is None:
    BACKEND = "python"
else:
    BACKEND = "cython"
_kern = _BACKENDS[BACKEND]

HERMITIAN_TOL = 1e-12
PIVOT_TOL = 1e-14
JACOBI_TOL = 1e-14
MAX_SWEEPS = 100
REG_DELTA = 1e-10


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot drops to the tolerance or below."""

    def __init__(self, pivot, index=None):
        self.pivot = int(pivot)
        self.index = index
        where = "" if index is None else f" (matrix {index})"
        super().__init__(f"matrix is not positive definite: pivot {self.pivot} failed{where}")


class ConvergenceError(np.linalg.LinAlgError):
    pass


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Switch the kernel backend; returns the previous backend name."""
    global BACKEND, _kern
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}, available: {available_backends()}")
    previous = BACKEND
    BACKEND, _kern = name, _BACKENDS[name]
    return previous


@dataclass(frozen=True)
class GevdResult:
    """Joint diagonalisation ``A = Q diag(lambda_a) Q^H``, ``B = Q diag(lambda_b) Q^H``.

    ``Q`` holds the generalised eigenvectors in its columns; arrays may carry
    leading batch dimensions.
    """

    Q: np.ndarray
    lambda_a: np.ndarray
    lambda_b: np.ndarray

    @property
    def ratios(self):
        return self.lambda_a / self.lambda_b


def _stack(H):
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("matrix contains non-finite entries")
    n = H.shape[-1]
    return H.reshape(-1, n, n), H.shape[:-2]


def hermitize(H):
    """Return ``(H + H^H) / 2``."""
    H = np.asarray(H)
    return 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))


def check_hermitian(H, tol=HERMITIAN_TOL):
    """Raise ``ValueError`` unless ``max|H - H^H| <= tol * max|H|`` for every matrix."""
    H = np.asarray(H)
    dev = np.abs(H - np.conj(np.swapaxes(H, -1, -2))).max(axis=(-1, -2))
    scale = np.abs(H).max(axis=(-1, -2))
    bad = dev > tol * scale
    if np.any(bad):
        idx = int(np.flatnonzero(bad.ravel())[0])
        raise ValueError(f"matrix is not Hermitian (matrix {idx}, deviation {dev.ravel()[idx]:.3e})")


def regularize(H, delta=REG_DELTA):
    """Add ``delta * trace(H)/dim * I`` (diagonal loading) to every matrix."""
    H = np.asarray(H, dtype=np.complex128)
    n = H.shape[-1]
    load = delta * np.trace(H, axis1=-2, axis2=-1).real / n
    return H + load[..., None, None] * np.eye(n)


def _raise_on_fail(fail):
    bad = np.flatnonzero(fail >= 0)
    if bad.size:
        k = int(bad[0])
        raise NotPositiveDefiniteError(fail[k], None if fail.size == 1 else k)


def _raise_on_sweeps(sweeps):
    bad = np.flatnonzero(sweeps < 0)
    if bad.size:
        raise ConvergenceError(f"Jacobi did not converge in {MAX_SWEEPS} sweeps (matrix {int(bad[0])})")


def cholesky(H):
    """Lower-triangular ``L`` with ``L L^H = H``."""
    check_hermitian(H)
    A, lead = _stack(H)
    L, fail = _kern.cholesky(hermitize(A), PIVOT_TOL)
    _raise_on_fail(fail)
    return L.reshape(lead + L.shape[1:])


def is_positive_definite(H):
    """Boolean per matrix: does the Cholesky factorisation succeed?"""
    A, lead = _stack(H)
    _, fail = _kern.cholesky(hermitize(A), PIVOT_TOL)
    return (fail < 0).reshape(lead)


def herm_eig(H):
    """Eigendecomposition ``H = U diag(lam) U^H`` with ``lam`` descending."""
    check_hermitian(H)
    A, lead = _stack(H)
    U, lam, sweeps = _kern.eigh(hermitize(A), JACOBI_TOL, MAX_SWEEPS)
    _raise_on_sweeps(sweeps)
    return U.reshape(lead + U.shape[1:]), lam.reshape(lead + lam.shape[1:])


def gevd(A, B):
    """Generalised eigendecomposition of the Hermitian pencil ``(A, B)``.

    ``B`` must be positive definite; ``A`` may be indefinite. Normalised so
    that ``Q^H B Q = I`` (``lambda_b`` all ones), pairs ordered by
    decreasing ratio.
    """
    check_hermitian(A)
    check_hermitian(B)
    a, lead = _stack(A)
    b, lead_b = _stack(B)
    if lead != lead_b or a.shape != b.shape:
        raise ValueError("pencil matrices must share a shape")
    Q, lam, fail, sweeps = _kern.gevd(hermitize(a), hermitize(b), PIVOT_TOL, JACOBI_TOL, MAX_SWEEPS)
    _raise_on_fail(fail)
    _raise_on_sweeps(sweeps)
    n = a.shape[-1]
    return GevdResult(
        Q.reshape(lead + (n, n)),
        lam.reshape(lead + (n,)),
        np.ones(lead + (n,)),
    )


def solve_hermitian(H, b):
    """Solve ``H x = b`` for Hermitian positive definite ``H``.

    ``b`` is a vector ``(..., n)`` or a block of right-hand sides ``(..., n, r)``
    matching the leading shape of ``H``.
    """
    check_hermitian(H)
    A, lead = _stack(H)
    n = A.shape[-1]
    b = np.asarray(b, dtype=np.complex128)
    vector = b.shape == lead + (n,)
    rhs = b[..., None] if vector else b
    rhs = np.broadcast_to(rhs, lead + (n, rhs.shape[-1])).reshape(-1, n, rhs.shape[-1])
    L, fail = _kern.cholesky(hermitize(A), PIVOT_TOL)
    _raise_on_fail(fail)
    x = _kern.chol_solve(L, rhs)
    x = x.reshape(lead + x.shape[1:])
    return x[..., 0] if vector else x


def ratio_sort(g):
    """Reorder pairs by non-increasing ``lambda_a / lambda_b`` (stable on ties)."""
    order = np.argsort(-g.ratios, axis=-1, kind="stable")
    return GevdResult(
        np.take_along_axis(g.Q, order[..., None, :], axis=-1),
        np.take_along_axis(g.lambda_a, order, axis=-1),
        np.take_along_axis(g.lambda_b, order, axis=-1),
    )

"""Dense symmetric linear algebra used throughout the solvers.

Symmetric matrices are plain ``numpy`` arrays of shape ``(n, n)``; the
helpers here check symmetry and finiteness where the data enters the
package, and the rest of the code relies on that contract.
"""

from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import InvalidInput


class EigenDecomp(NamedTuple):
    """Eigenvalues sorted non-increasing and matching orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray


def as_symmetric(M, name="matrix", atol=0.0):
    """Return ``M`` as a float array after checking it is square, finite and symmetric.

    With ``atol=0`` symmetry must hold exactly. A positive ``atol`` accepts
    small asymmetries and returns the symmetrized matrix ``(M + M.T) / 2``.
    """
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidInput(f"{name} must be a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} has non-finite entries")
    asym = np.max(np.abs(M - M.T))
    if asym > atol:
        raise InvalidInput(f"{name} is not symmetric (max asymmetry {asym:.3e})")
    if asym > 0:
        M = 0.5 * (M + M.T)
    return M


def sym(M):
    """Symmetric part of a square array."""
    return 0.5 * (M + M.T)


def _fix_signs(V):
    # make the largest-magnitude entry of each column nonnegative
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def eig_sym(M):
    """Full eigen-decomposition of a symmetric matrix.

    Eigenvalues come back sorted from largest to smallest. Each eigenvector
    is signed so that its largest-magnitude component is nonnegative, which
    keeps results reproducible across runs.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise InvalidInput("eig_sym: matrix has non-finite entries")
    w, V = scipy.linalg.eigh(M)
    w = w[::-1].copy()
    V = _fix_signs(V[:, ::-1])
    return EigenDecomp(w, V)


def top_eigvecs(M, r):
    """Orthonormal eigenvectors for the ``r`` largest eigenvalues of ``M``.

    Returns an ``(n, r)`` block, sign-normalized like :func:`eig_sym`.
    """
    vals, vecs = top_eigpairs(M, r)
    return vecs


def top_eigpairs(M, r):
    """The ``r`` largest eigenvalues of ``M`` with their eigenvectors."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    r = int(r)
    if r < 1 or r > n:
        raise InvalidInput(f"top_eigvecs: need 1 <= r <= n={n}, got r={r}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput("top_eigvecs: matrix has non-finite entries")
    w, V = scipy.linalg.eigh(M, subset_by_index=[n - r, n - 1])
    return w[::-1].copy(), _fix_signs(V[:, ::-1])


def lambda_max(M):
    """Largest eigenvalue of a symmetric matrix."""
    n = M.shape[0]
    return float(scipy.linalg.eigh(M, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])


def lambda_min(M):
    """Smallest eigenvalue of a symmetric matrix."""
    return float(scipy.linalg.eigh(M, eigvals_only=True, subset_by_index=[0, 0])[0])


def orth(B, rtol=1e-12):
    """Orthonormal basis for the column space of ``B``.

    Singular values at or below ``rtol`` times the largest are treated as
    zero, so rank-deficient inputs return fewer columns.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise InvalidInput("orth expects a 2-D block")
    if not np.all(np.isfinite(B)):
        raise InvalidInput("orth: block has non-finite entries")
    if B.shape[1] == 0:
        return B.copy()
    U, s, _ = scipy.linalg.svd(B, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return U[:, :0]
    k = int(np.sum(s > rtol * s[0]))
    return U[:, :k]


def inner(A, B):
    """Trace inner product ``<A, B>``."""
    return float(np.vdot(A, B))


def apply_A(p, X):
    """The constraint map ``A(X) = (<A_1, X>, ..., <A_m, X>)``."""
    X = np.asarray(X, dtype=float)
    if X.shape != (p.n, p.n):
        raise InvalidInput(f"apply_A: expected a {p.n}x{p.n} matrix, got {X.shape}")
    return p.A_flat @ X.ravel()


def apply_At(p, y):
    """The adjoint map ``A*(y) = sum_i y_i A_i``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (p.m,):
        raise InvalidInput(f"apply_At: expected a vector of length {p.m}, got {y.shape}")
    return (y @ p.A_flat).reshape(p.n, p.n)


@lru_cache(maxsize=64)
def _svec_index(n):
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    for a in (*iu, scale):
        a.setflags(write=False)
    return iu[0], iu[1], scale


def svec(M):
    """Symmetric vectorization with sqrt(2)-scaled off-diagonals.

    ``svec(A) @ svec(B) == <A, B>`` for symmetric ``A`` and ``B``. The upper
    triangle is stored row by row.
    """
    M = np.asarray(M)
    i, j, scale = _svec_index(M.shape[-1])
    return M[..., i, j] * scale


def smat(v, n=None):
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    d = v.shape[-1]
    if n is None:
        n = int(round((np.sqrt(8 * d + 1) - 1) / 2))
    if n * (n + 1) // 2 != d:
        raise InvalidInput(f"smat: length {d} is not a triangular number")
    i, j, scale = _svec_index(n)
    w = v / scale
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., i, j] = w
    out[..., j, i] = w
    return out

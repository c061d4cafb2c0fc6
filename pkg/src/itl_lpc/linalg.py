"""Dense symmetric linear-algebra primitives used throughout the package.

All operations are pure functions over immutable ndarray inputs and are safe
to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from itl_lpc.errors import DomainError, InvalidInputError

# Symmetry tolerance is absolute at unit scale and scales with the magnitude
# of the entries for larger matrices.
SYM_ATOL = 1e-10


def _sym_tol(a: np.ndarray) -> float:
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    return SYM_ATOL * max(1.0, scale)


def is_symmetric(a: np.ndarray, atol: float | None = None) -> bool:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    tol = _sym_tol(a) if atol is None else atol
    return bool(np.all(np.abs(a - a.T) <= tol))


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T)/2; suppresses round-off drift before factorisations."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def check_symmetric(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Validate symmetry and finiteness, then return the symmetrised matrix."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{what} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{what} has non-finite entries")
    if not is_symmetric(a):
        raise InvalidInputError(f"{what} is not symmetric within tolerance")
    return symmetrize(a)


@dataclass(frozen=True)
class SymMatrix:
    """A validated dense symmetric real matrix."""

    data: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        data = check_symmetric(self.data, "SymMatrix")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dim", data.shape[0])


def _as_matrix(m) -> np.ndarray:
    if isinstance(m, SymMatrix):
        return m.data
    return np.asarray(m, dtype=float)


def pseudo_inverse(m) -> np.ndarray:
    """Moore-Penrose inverse of a rectangular matrix."""
    m = _as_matrix(m)
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("pseudo_inverse: non-finite input")
    return np.linalg.pinv(m)


def sym_min_eig(s) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    s = check_symmetric(_as_matrix(s), "sym_min_eig input")
    if s.size == 0:
        raise InvalidInputError("sym_min_eig: empty matrix")
    return float(np.linalg.eigvalsh(s)[0])


def cholesky_lower(s) -> np.ndarray:
    """Lower-triangular factor L with L L^T = S for S positive semi-definite.

    Semidefinite inputs are handled through a diagonal shift of
    1e-12 * trace(S); matrices that stay indefinite beyond the shift are
    rejected.
    """
    s = check_symmetric(_as_matrix(s), "cholesky_lower input")
    if not np.any(s):
        return np.zeros_like(s)
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        pass
    shift = 1e-12 * max(abs(float(np.trace(s))), float(np.max(np.abs(s))))
    try:
        return np.linalg.cholesky(s + shift * np.eye(s.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise DomainError("cholesky_lower: matrix is indefinite beyond shift") from exc


def generalized_min_eig(p1, p2) -> float:
    """Smallest root of det(P1 - lambda * P2) = 0 for P2 positive definite.

    Computed by Cholesky reduction of the pencil to a standard symmetric
    eigenvalue problem: with P2 = L L^T the roots coincide with the
    eigenvalues of L^-1 P1 L^-T.
    """
    p1 = check_symmetric(_as_matrix(p1), "generalized_min_eig P1")
    p2 = check_symmetric(_as_matrix(p2), "generalized_min_eig P2")
    if p1.shape != p2.shape:
        raise InvalidInputError("generalized_min_eig: shape mismatch")
    try:
        low = np.linalg.cholesky(p2)
    except np.linalg.LinAlgError as exc:
        raise DomainError("generalized_min_eig: P2 is not positive definite") from exc
    # L^-1 P1 L^-T via two triangular solves.
    tmp = np.linalg.solve(low, p1)
    reduced = np.linalg.solve(low, tmp.T).T
    return float(np.linalg.eigvalsh(symmetrize(reduced))[0])


def psd_project(s) -> np.ndarray:
    """Nearest positive semi-definite matrix in Frobenius norm."""
    s = check_symmetric(_as_matrix(s), "psd_project input")
    w, v = np.linalg.eigh(s)
    w = np.maximum(w, 0.0)
    return symmetrize((v * w) @ v.T)


def vec(m) -> np.ndarray:
    """Column-stacking vectorisation."""
    m = _as_matrix(m)
    return m.flatten(order="F")


def kron(a, b) -> np.ndarray:
    """Kronecker product, satisfying vec(A X B) = (B^T kron A) vec(X)."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def spectral_radius(a) -> float:
    """Largest eigenvalue magnitude of a (not necessarily symmetric) matrix."""
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def sym_sqrt(s) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    s = check_symmetric(_as_matrix(s), "sym_sqrt input")
    w, v = np.linalg.eigh(s)
    w = np.sqrt(np.maximum(w, 0.0))
    return symmetrize((v * w) @ v.T)

"""Small dense linear-algebra helpers used across modules."""

import numpy as np

from .errors import NotHermitianError, NotUnitaryError

UNITARY_TOL = 1e-10
HERMITIAN_TOL = 1e-10


def as_square(a, name="matrix"):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def require_unitary(u, tol=UNITARY_TOL, name="U"):
    u = as_square(u, name)
    n = u.shape[0]
    err = np.linalg.norm(u.conj().T @ u - np.eye(n)) / np.sqrt(n)
    if err > tol:
        raise NotUnitaryError(f"{name} is not unitary (relative Frobenius error {err:.3e} > {tol:g})")
    return u


def require_hermitian(h, tol=HERMITIAN_TOL, name="H"):
    h = as_square(h, name)
    scale = max(np.linalg.norm(h), 1.0)
    err = np.linalg.norm(h - h.conj().T) / scale
    if err > tol:
        raise NotHermitianError(f"{name} is not Hermitian (relative Frobenius error {err:.3e} > {tol:g})")
    return h


def op_norm(x):
    """Operator (spectral) norm."""
    x = np.asarray(x)
    if x.size == 0:
        return 0.0
    return float(np.linalg.norm(x, 2))


def dagger(x):
    return np.conj(np.swapaxes(x, -1, -2))


def superop_from_sandwich(left, right):
    """Matrix of X -> left @ X @ right acting on row-major vec(X)."""
    return np.kron(left, right.T)


def vec(x):
    return np.asarray(x).reshape(-1)


def unvec(v, dim):
    return np.asarray(v).reshape(dim, dim)

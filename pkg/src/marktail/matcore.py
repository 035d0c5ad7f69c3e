"""Dense nonnegative-matrix kernel.

Spectral radius, Perron vectors, irreducibility and the Hadamard algebra
used throughout the package.  Matrices in this domain are small (a handful
of states), so a dense eigen-solver is the default; power iteration takes
over above ``DENSE_LIMIT`` states.
"""
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import breadth_first_order

from .errors import NumericalError, ReducibleMatrixError, ValidationError

DENSE_LIMIT = 64
ZERO_TOL = 1e-14
POWER_TOL = 1e-12
POWER_MAXITER = 10_000


@dataclass(frozen=True)
class PerronPair:
    """Perron root with right and left eigenvectors, each summing to one."""

    radius: float
    right: np.ndarray
    left: np.ndarray

    def residuals(self, A):
        A = np.asarray(A, dtype=float)
        r = np.max(np.abs(A @ self.right - self.radius * self.right))
        l = np.max(np.abs(self.left @ A - self.radius * self.left))
        return float(r), float(l)


def as_square(A, name="matrix"):
    """Validate and return ``A`` as a finite 2-d float array."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValidationError(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} has non-finite entries")
    return A


def _as_nonnegative(A, name="matrix"):
    A = as_square(A, name)
    if np.any(A < 0):
        i, j = np.argwhere(A < 0)[0]
        raise ValidationError(f"{name} has a negative entry at ({i}, {j}): {A[i, j]!r}")
    return A


def spectral_radius(A):
    """Largest eigenvalue modulus of a nonnegative matrix.

    For nonnegative ``A`` this is the Perron root.
    """
    A = _as_nonnegative(A)
    n = A.shape[0]
    if n == 1:
        return float(A[0, 0])
    if n <= DENSE_LIMIT:
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    return _power_radius(A)


def _power_radius(A):
    # I + A shares the Perron vector and is primitive whenever A is
    # irreducible, so the iteration cannot cycle on periodic matrices.
    B = A + np.eye(A.shape[0]) * max(np.max(A), 1.0)
    shift = B[0, 0] - A[0, 0]
    x = np.full(A.shape[0], 1.0 / A.shape[0])
    est = 0.0
    for _ in range(POWER_MAXITER):
        y = B @ x
        new = float(x @ y / (x @ x))
        s = y.sum()
        if s == 0.0:
            return 0.0
        x = y / s
        if abs(new - est) <= POWER_TOL * max(abs(new), 1.0):
            return new - shift
        est = new
    raise NumericalError("power iteration did not converge")


def is_irreducible(A):
    """True iff the directed graph of entries above ``ZERO_TOL`` is strongly connected."""
    return _unreachable_pair(_as_nonnegative(A)) is None


def _unreachable_pair(A):
    G = (A > ZERO_TOL).astype(np.int8)
    n = G.shape[0]
    if n == 1:
        return None
    if n <= 32:
        # boolean closure by repeated squaring; cheaper than a graph library call here
        R = G.astype(bool) | np.eye(n, dtype=bool)
        for _ in range(int(np.ceil(np.log2(n)))):
            R = (R.astype(np.int32) @ R.astype(np.int32)) > 0
        if not R[0].all():
            return 0, int(np.argmin(R[0]))
        if not R[:, 0].all():
            return int(np.argmin(R[:, 0])), 0
        return None
    fwd = breadth_first_order(G, 0, directed=True, return_predecessors=False)
    if len(fwd) < n:
        missing = sorted(set(range(n)) - set(fwd.tolist()))[0]
        return 0, missing
    bwd = breadth_first_order(G.T, 0, directed=True, return_predecessors=False)
    if len(bwd) < n:
        missing = sorted(set(range(n)) - set(bwd.tolist()))[0]
        return missing, 0
    return None


def require_irreducible(A, name="matrix"):
    A = _as_nonnegative(A, name)
    pair = _unreachable_pair(A)
    if pair is not None:
        i, j = pair
        raise ReducibleMatrixError(
            f"{name} is reducible: state {i} cannot reach state {j}", source=i, target=j)
    return A


def perron_pair(A):
    """Perron root and positive right/left eigenvectors of an irreducible matrix."""
    A = require_irreducible(A)
    n = A.shape[0]
    if n == 1:
        one = np.ones(1)
        return PerronPair(float(A[0, 0]), one, one.copy())
    w, V = np.linalg.eig(A)
    k = int(np.argmax(w.real))
    radius = float(w[k].real)
    right = _positive(V[:, k])
    wl, U = np.linalg.eig(A.T)
    left = _positive(U[:, int(np.argmax(wl.real))])
    pair = PerronPair(radius, right, left)
    return _polish(A, pair)


def _positive(v):
    v = np.real_if_close(v, tol=1e6).real
    v = v / v.sum()
    return np.abs(v)


def _polish(A, pair, steps=3):
    # A few inverse-iteration sweeps clean up eig's last digits.
    n = A.shape[0]
    lam = pair.radius
    shift = lam * (1 + 1e-13) + 1e-300
    M = shift * np.eye(n) - A
    try:
        x, y = pair.right, pair.left
        for _ in range(steps):
            x = np.linalg.solve(M, x)
            x = np.abs(x / x.sum())
            y = np.linalg.solve(M.T, y)
            y = np.abs(y / y.sum())
    except np.linalg.LinAlgError:
        return pair
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        return pair
    lam = float((y @ A @ x) / (y @ x))
    return PerronPair(lam, x, y)


def hadamard(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValidationError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return A * B


def entrywise_pow(A, theta):
    """Entry-wise power ``A^(theta)`` of a nonnegative matrix (``0**0 = 1``)."""
    A = _as_nonnegative(A)
    return np.power(A, float(theta))


def stationary_distribution(P):
    """Stationary distribution of an irreducible row-stochastic matrix."""
    return perron_pair(P).left

"""Dense small-matrix kernels: Lyapunov/Riccati solvers, eigenvalues,
matrix exponential, pole placement.

Everything here targets the n <= 8 systems this package simulates, so
direct methods (Kronecker vectorization, Newton-Kleinman iteration) are
preferred over large-scale machinery.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NotHurwitz,
    NotStabilizable,
)

__all__ = [
    "as_matrix",
    "as_vector",
    "eigenvalues",
    "is_hurwitz",
    "matrix_exponential",
    "place_poles_siso",
    "solve_care",
    "solve_lyapunov",
]


def as_matrix(a, name="matrix", rows=None, cols=None, square=False):
    """Validate and return a 2-D float64 array.

    Raises DimensionMismatch on shape violations and ValueError on
    non-finite entries.
    """
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise DimensionMismatch(f"{name} must have {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionMismatch(f"{name} must have {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN/Inf entries")
    return m


def as_vector(a, name="vector", size=None):
    v = np.asarray(a, dtype=float).ravel()
    if size is not None and v.size != size:
        raise DimensionMismatch(f"{name} must have {size} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains NaN/Inf entries")
    return v


def eigenvalues(a):
    """Eigenvalues of a square matrix, sorted by (real, imag)."""
    m = as_matrix(a, "A", square=True)
    try:
        w = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NoConvergence(str(exc)) from exc
    order = np.lexsort((w.imag, w.real))
    return w[order]


def is_hurwitz(a, margin=0.0):
    """True when every eigenvalue satisfies Re(lambda) < -margin."""
    return bool(np.max(eigenvalues(a).real) < -margin)


def solve_lyapunov(a, q):
    """Solve A'P + PA = -Q for symmetric positive-definite P.

    Uses Kronecker vectorization, which is exact for the small systems
    handled here.  A must be Hurwitz and Q symmetric positive definite.
    """
    a = as_matrix(a, "A", square=True)
    n = a.shape[0]
    q = as_matrix(q, "Q", rows=n, cols=n)
    if np.linalg.norm(q - q.T) > 1e-10 * max(1.0, np.linalg.norm(q)):
        raise ValueError("Q must be symmetric")
    if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) <= 0.0:
        raise ValueError("Q must be positive definite")
    if not is_hurwitz(a):
        raise NotHurwitz("A has an eigenvalue with nonnegative real part")
    eye = np.eye(n)
    # row-major vec: vec(A'P) = kron(A', I) vec(P); vec(PA) = kron(I, A') vec(P)
    coeff = np.kron(a.T, eye) + np.kron(eye, a.T)
    p = np.linalg.solve(coeff, -q.ravel()).reshape(n, n)
    p = 0.5 * (p + p.T)
    return p


def _lyapunov_general(c, rhs):
    """Solve C X + X C' = rhs (no definiteness assumptions)."""
    n = c.shape[0]
    eye = np.eye(n)
    coeff = np.kron(c, eye) + np.kron(eye, c)
    x = np.linalg.solve(coeff, rhs.ravel()).reshape(n, n)
    return 0.5 * (x + x.T)


def _pbh_stabilizable(a, b):
    """Popov-Belevitch-Hautus test on the closed right half plane."""
    n = a.shape[0]
    scale = np.linalg.norm(a) + np.linalg.norm(b) + 1.0
    for lam in np.linalg.eigvals(a):
        if lam.real < -1e-10:
            continue
        pencil = np.hstack([a - lam * np.eye(n), b.astype(complex)])
        if np.linalg.matrix_rank(pencil, tol=1e-10 * scale) < n:
            return False
    return True


def _stabilizing_gain(a, b):
    """Initial stabilizing gain via Bass's construction.

    Solves (A + beta I) X + X (A + beta I)' = 2 B B' with beta beyond the
    spectral radius; K = B' X^{-1} then renders A - B K Hurwitz whenever
    (A, B) is controllable.
    """
    n = a.shape[0]
    if is_hurwitz(a):
        return np.zeros((b.shape[1], n))
    beta = np.linalg.norm(a, "fro") + 1.0
    x = _lyapunov_general(a + beta * np.eye(n), 2.0 * (b @ b.T))
    cond = np.linalg.cond(x)
    if not np.isfinite(cond) or cond > 1e12:
        raise NotStabilizable("could not construct an initial stabilizing gain")
    k0 = np.linalg.solve(x.T, b).T
    if not is_hurwitz(a - b @ k0):
        raise NotStabilizable("Bass initialization failed to stabilize")
    return k0


def _care_residual(a, b, q, r, p):
    return np.linalg.norm(
        a.T @ p + p @ a - p @ b @ np.linalg.solve(r, b.T @ p) + q, "fro"
    )


def solve_care(a, b, q, r, tol=1e-10, max_iter=100):
    """Solve the continuous algebraic Riccati equation by Newton-Kleinman.

    Returns (P, K) with K = R^{-1} B' P and A - B K Hurwitz.  The iteration
    starts from a stabilizing gain (zero when A is already Hurwitz, Bass's
    construction otherwise) and refines until the Riccati residual falls
    below tol or max_iter sweeps elapse.
    """
    a = as_matrix(a, "A", square=True)
    n = a.shape[0]
    b = as_matrix(b, "B", rows=n)
    m = b.shape[1]
    q = as_matrix(q, "Q", rows=n, cols=n)
    r = as_matrix(r, "R", rows=m, cols=m)
    if np.min(np.linalg.eigvalsh(0.5 * (r + r.T))) <= 0.0:
        raise ValueError("R must be positive definite")
    if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -1e-12 * max(1.0, np.linalg.norm(q)):
        raise ValueError("Q must be positive semidefinite")
    if not _pbh_stabilizable(a, b):
        raise NotStabilizable("(A, B) fails the PBH stabilizability test")

    k = _stabilizing_gain(a, b)
    p = None
    for _ in range(max_iter):
        acl = a - b @ k
        if not is_hurwitz(acl):
            raise NoConvergence("Newton-Kleinman iterate lost stability")
        qk = q + k.T @ r @ k
        p = _lyapunov_general((a - b @ k).T, -qk)
        k_next = np.linalg.solve(r, b.T @ p)
        step = np.linalg.norm(k_next - k)
        k = k_next
        if step <= 1e-13 * max(1.0, np.linalg.norm(k)):
            break
    res = _care_residual(a, b, q, r, p)
    if res > max(tol, 1e-8):
        raise NoConvergence(f"Riccati residual {res:.3e} above tolerance")
    if not is_hurwitz(a - b @ k):
        raise NotStabilizable("closed loop not Hurwitz at convergence")
    return p, k


def matrix_exponential(a, t=1.0):
    """e^{A t} via scipy's scaling-and-squaring Pade implementation."""
    m = as_matrix(a, "A", square=True)
    return sla.expm(m * float(t))


def place_poles_siso(a, b, poles):
    """Single-input pole placement (Ackermann's formula).

    Returns K such that eig(A - B K) = poles.  Requires a controllable
    (A, b) pair; adequate for the small, well-conditioned models used here.
    """
    a = as_matrix(a, "A", square=True)
    n = a.shape[0]
    b = as_matrix(b, "B", rows=n, cols=1)
    ctrb = np.hstack([np.linalg.matrix_power(a, j) @ b for j in range(n)])
    if np.linalg.cond(ctrb) > 1e10:
        raise NotStabilizable("(A, B) is not controllable enough to place poles")
    coeffs = np.real(np.poly(np.asarray(poles, dtype=complex)))
    phi = np.zeros_like(a)
    for c in coeffs:
        phi = phi @ a + c * np.eye(n)
    selector = np.zeros((1, n))
    selector[0, -1] = 1.0
    return selector @ np.linalg.solve(ctrb, phi)

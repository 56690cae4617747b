"""Uncertain plant, reference model, and the inner adaptive controller."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .linalg import as_matrix
from .projection import proj

__all__ = [
    "InnerLoopState",
    "PlantParams",
    "inner_adaptation",
    "inner_control",
    "plant_derivative",
    "reference_derivative",
]


@dataclass(frozen=True)
class PlantParams:
    """True plant data: A_p is unknown to both controllers, B_p is known,
    and the diagonal effectiveness matrix has entries in (0, 1]."""

    A_p: np.ndarray
    B_p: np.ndarray
    lam_diag: np.ndarray
    C_1: np.ndarray
    C_2: np.ndarray

    def __post_init__(self):
        a_p = as_matrix(self.A_p, "A_p", square=True)
        n = a_p.shape[0]
        b_p = as_matrix(self.B_p, "B_p", rows=n)
        m = b_p.shape[1]
        lam = np.asarray(self.lam_diag, dtype=float).ravel()
        if lam.size != m:
            raise DimensionMismatch("effectiveness diagonal size mismatch")
        if np.any(lam <= 0.0) or np.any(lam > 1.0):
            raise ValidationError("effectiveness entries must lie in (0, 1]")
        c_1 = as_matrix(self.C_1, "C_1", rows=n, cols=m)
        c_2 = as_matrix(self.C_2, "C_2", rows=n, cols=m)
        ctrb = np.hstack([np.linalg.matrix_power(a_p, j) @ b_p for j in range(n)])
        if np.linalg.matrix_rank(ctrb, tol=1e-10 * max(1.0, np.linalg.norm(ctrb))) < n:
            raise ValidationError("(A_p, B_p) must be controllable")
        object.__setattr__(self, "A_p", a_p)
        object.__setattr__(self, "B_p", b_p)
        object.__setattr__(self, "lam_diag", lam)
        object.__setattr__(self, "C_1", c_1)
        object.__setattr__(self, "C_2", c_2)

    @property
    def n_p(self):
        return self.A_p.shape[0]

    @property
    def m(self):
        return self.B_p.shape[1]

    def with_effectiveness(self, lam_diag):
        return PlantParams(self.A_p, self.B_p, lam_diag, self.C_1, self.C_2)

    def y_1(self, x_p):
        return self.C_1.T @ x_p

    def y_2(self, x_p):
        return self.C_2.T @ x_p


@dataclass
class InnerLoopState:
    """Plant and reference states plus the inner adaptive parameters."""

    x_p: np.ndarray
    x_r: np.ndarray
    K_hat_x: np.ndarray
    lambda_hat: np.ndarray

    @classmethod
    def initial(cls, n_p, m, lambda_hat0=None):
        lam0 = np.ones(m) if lambda_hat0 is None else np.asarray(lambda_hat0, float)
        return cls(np.zeros(n_p), np.zeros(n_p), np.zeros((m, n_p)), lam0.copy())

    @property
    def e_1(self):
        return self.x_p - self.x_r


def plant_derivative(x_p, u_p, plant):
    """x_p_dot = A_p x_p + B_p diag(lam) u_p."""
    x_p = np.asarray(x_p, dtype=float)
    u_p = np.asarray(u_p, dtype=float)
    if x_p.size != plant.n_p or u_p.size != plant.m:
        raise DimensionMismatch("plant state/input dimension mismatch")
    return plant.A_p @ x_p + plant.B_p @ (plant.lam_diag * u_p)


def reference_derivative(x_r, y_h_delayed, gains):
    """x_r_dot = A_r x_r + B_r y_h(t - tau)."""
    x_r = np.asarray(x_r, dtype=float)
    if x_r.size != gains.A_r.shape[0]:
        raise DimensionMismatch("reference state dimension mismatch")
    return gains.A_r @ x_r + gains.B_r @ np.asarray(y_h_delayed, dtype=float)


def inner_control(x_p, k_hat_x, lambda_hat, y_h_delayed, gains):
    """u_p = -K_hat x_p + diag(lambda_hat) L_r y_h(t - tau)."""
    return -(k_hat_x @ x_p) + lambda_hat * (gains.L_r @ y_h_delayed)


def inner_adaptation(x_p, e_1, y_h_delayed, p_1, b_p, gains, gamma_x,
                     gamma_lambda, lambda_hat, lambda_bounds):
    """Adaptation-law derivatives (K_hat_x_dot, lambda_hat_dot).

    The feedback gain integrates the raw correlation (no projection); the
    effectiveness estimate is projected so diag(lambda_hat) stays
    invertible with a positive floor.
    """
    w1 = (p_1 @ b_p).T @ e_1                       # B_p' P_1 e_1
    k_dot = gamma_x * np.outer(w1, x_p)            # transpose of gamma x_p e_1' P_1 B_p
    drive = -(gains.L_r @ y_h_delayed) * w1        # -diag(L_r y_h) B_p' P_1 e_1
    lam_dot = gamma_lambda * proj(lambda_hat, drive, lambda_bounds)
    return k_dot, lam_dot

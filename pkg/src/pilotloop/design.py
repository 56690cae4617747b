"""Offline gain design shared by both loops.

Builds the feed-forward gains that give unity DC tracking, the LQR-based
outer reference model, and the Lyapunov matrices the adaptive laws weight
their errors with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotHurwitz, SingularDCGain
from .linalg import as_matrix, eigenvalues, is_hurwitz, solve_care, solve_lyapunov

__all__ = [
    "GainSet",
    "compute_Lr",
    "compute_theta_r",
    "design_crossover",
    "design_gains",
    "solve_matching",
]


def _dc_feedforward(a, b, c, what):
    """-(C' A^{-1} B)^{-1}, the gain that makes the closed DC map identity."""
    a = as_matrix(a, "A", square=True)
    n = a.shape[0]
    b = as_matrix(b, "B", rows=n)
    c = as_matrix(c, "C", rows=n, cols=b.shape[1])
    dc = c.T @ np.linalg.solve(a, b)
    scale = np.linalg.norm(c) * np.linalg.norm(b) * np.linalg.norm(np.linalg.inv(a))
    if np.linalg.cond(dc) > 1e10 or np.abs(np.linalg.det(dc)) <= 1e-14 * max(1.0, scale):
        raise SingularDCGain(f"{what}: steady-state gain is singular")
    return -np.linalg.inv(dc)


def compute_Lr(a_r, b_p, c_1):
    """Inner feed-forward gain: constant commands map to unity output."""
    return _dc_feedforward(a_r, b_p, c_1, "inner feed-forward")


def compute_theta_r(a_m, b_r, c_2):
    """Outer feed-forward gain for the crossover reference model."""
    return _dc_feedforward(a_m, b_r, c_2, "outer feed-forward")


def solve_matching(a_p, a_r, b_p, lam_diag):
    """Least-squares ideal feedback gain for B_p diag(lam) K = A_p - A_r.

    Returns (K, residual).  A residual above ~1e-8 means the uncertainty is
    not matched through the input channel and the scenario is ill posed;
    this is reported, never raised, because the routine doubles as a test
    oracle on perturbed scenarios.
    """
    a_p = as_matrix(a_p, "A_p", square=True)
    n = a_p.shape[0]
    a_r = as_matrix(a_r, "A_r", rows=n, cols=n)
    b_p = as_matrix(b_p, "B_p", rows=n)
    lam = np.asarray(lam_diag, dtype=float).ravel()
    if np.any(lam <= 0.0):
        raise ValueError("effectiveness entries must be positive")
    bl = b_p * lam[None, :]
    k, *_ = np.linalg.lstsq(bl, a_p - a_r, rcond=None)
    residual = float(np.linalg.norm(a_p - bl @ k - a_r, "fro"))
    return k, residual


def design_crossover(a_r, b_p, l_r, q_lqr, r_lqr):
    """LQR state gain for the outer reference model.

    Returns (theta_x, A_m) with A_m = A_r - B_p L_r theta_x Hurwitz.
    """
    b_r = as_matrix(b_p, "B_p") @ as_matrix(l_r, "L_r")
    _, theta_x = solve_care(a_r, b_r, q_lqr, r_lqr)
    a_m = np.asarray(a_r, dtype=float) - b_r @ theta_x
    if not is_hurwitz(a_m, margin=1e-9):
        raise NotHurwitz("crossover reference model is not Hurwitz")
    return theta_x, a_m


@dataclass(frozen=True)
class GainSet:
    """All constant design matrices shared by a simulation run."""

    L_x: np.ndarray
    L_r: np.ndarray
    theta_x: np.ndarray
    theta_r: np.ndarray
    A_r: np.ndarray
    A_m: np.ndarray
    B_r: np.ndarray
    B_m: np.ndarray
    P_1: np.ndarray
    P_2: np.ndarray

    def __post_init__(self):
        for name in ("A_r", "A_m"):
            if not is_hurwitz(getattr(self, name)):
                raise NotHurwitz(f"{name} must be Hurwitz")

    @property
    def L_r_inv(self):
        return np.linalg.inv(self.L_r)

    def eig_A_m(self):
        return eigenvalues(self.A_m)


def design_gains(a_n, b_p, c_1, c_2, l_x, q_lqr, r_lqr, q_1, q_2,
                 short_period=None):
    """Assemble the full GainSet from the nominal model.

    ``short_period`` is an optional (A_sp, B_sp, C_sp) triple used to design
    the inner feed-forward gain when the full-order DC gain is singular
    (for example a rate output with a differentiator zero at the origin).
    """
    a_n = as_matrix(a_n, "A_n", square=True)
    n = a_n.shape[0]
    b_p = as_matrix(b_p, "B_p", rows=n)
    m = b_p.shape[1]
    l_x = as_matrix(l_x, "L_x", rows=m, cols=n)
    a_r = a_n - b_p @ l_x
    if not is_hurwitz(a_r):
        raise NotHurwitz("A_r = A_n - B_p L_x must be Hurwitz")
    if short_period is not None:
        a_sp, b_sp, c_sp = short_period
        l_r = compute_Lr(a_sp, b_sp, c_sp)
    else:
        l_r = compute_Lr(a_r, b_p, c_1)
    b_r = b_p @ l_r
    theta_x, a_m = design_crossover(a_r, b_p, l_r, q_lqr, r_lqr)
    theta_r = compute_theta_r(a_m, b_r, c_2)
    b_m = b_r @ theta_r
    p_1 = solve_lyapunov(a_r, q_1)
    p_2 = solve_lyapunov(a_m, q_2)
    return GainSet(
        L_x=l_x, L_r=l_r, theta_x=theta_x, theta_r=theta_r,
        A_r=a_r, A_m=a_m, B_r=b_r, B_m=b_m, P_1=p_1, P_2=p_2,
    )

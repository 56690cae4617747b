"""Delayed adaptive human-pilot model.

The pilot drives the plant toward a crossover-style reference model using
a predictor-motivated control law: state feedback, reference feed-forward,
and a distributed-delay integral over its own recent commands, discretized
on N left-anchored nodes.  Commands saturate element-wise; the resulting
control deficiency feeds an auxiliary error filter so adaptation sees an
augmented error that stays meaningful under saturation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .projection import proj

__all__ = [
    "OuterLoopState",
    "PilotCommand",
    "aux_error_derivative",
    "crossover_derivative",
    "node_offsets",
    "outer_adaptation",
    "outer_adaptation_terms",
    "pilot_command",
    "pilot_command_from_nodes",
]


def node_offsets(tau, n_nodes):
    """Left-anchored rectangle nodes eta_k = -tau + (k-1) tau/N, k = 1..N."""
    if n_nodes < 1:
        raise ValueError("need at least one node")
    return -tau + (tau / n_nodes) * np.arange(n_nodes)


@dataclass
class OuterLoopState:
    """Crossover-model state, auxiliary error, and outer adaptive
    parameters (one feedback matrix per integral node)."""

    x_m: np.ndarray
    e_delta: np.ndarray
    lambda2_hat: np.ndarray
    lambda3_hat: np.ndarray
    phi1_hat: np.ndarray          # (m, n_p)
    phi2_hat_nodes: np.ndarray    # (N, m, m)

    @classmethod
    def initial(cls, n_p, m, n_nodes, phi1_init):
        return cls(
            x_m=np.zeros(n_p),
            e_delta=np.zeros(n_p),
            lambda2_hat=np.ones(m),
            lambda3_hat=np.ones(m),
            phi1_hat=np.asarray(phi1_init, dtype=float).reshape(m, n_p).copy(),
            phi2_hat_nodes=np.zeros((n_nodes, m, m)),
        )


@dataclass(frozen=True)
class PilotCommand:
    """Pre-gain command, raw command, saturated command, and deficiency."""

    G: np.ndarray
    v: np.ndarray
    y_h: np.ndarray
    delta_y: np.ndarray


def crossover_derivative(x_m, r_delayed, gains):
    """x_m_dot = A_m x_m + B_m r(t - tau)."""
    x_m = np.asarray(x_m, dtype=float)
    if x_m.size != gains.A_m.shape[0]:
        raise DimensionMismatch("crossover state dimension mismatch")
    return gains.A_m @ x_m + gains.B_m @ np.asarray(r_delayed, dtype=float)


def aux_error_derivative(e_delta, delta_y_delayed, lambda3_hat, b_p, gains):
    """e_delta_dot = A_m e_delta + B_p diag(lambda3_hat) L_r dy(t - tau)."""
    e_delta = np.asarray(e_delta, dtype=float)
    if e_delta.size != gains.A_m.shape[0]:
        raise DimensionMismatch("auxiliary state dimension mismatch")
    forced = lambda3_hat * (gains.L_r @ np.asarray(delta_y_delayed, dtype=float))
    return gains.A_m @ e_delta + b_p @ forced


def pilot_command_from_nodes(x_p, r, outer, y_h_nodes, gains, y_o, node_weight):
    """Pilot command given the already-sampled y_h(t + eta_k) node values."""
    lr_nodes = y_h_nodes @ gains.L_r.T                     # (N, m)
    integral = node_weight * np.einsum("kij,kj->i", outer.phi2_hat_nodes, lr_nodes)
    g = outer.phi1_hat @ x_p + gains.theta_r @ r + integral
    v = gains.L_r_inv @ (outer.lambda2_hat * (gains.L_r @ g))
    y_h = np.clip(v, -y_o, y_o)
    return PilotCommand(G=g, v=v, y_h=y_h, delta_y=y_h - v)


def pilot_command(x_p, r, outer, y_h_history, gains, y_o, tau, n_nodes):
    """Pilot command sampling the integral nodes from a history buffer."""
    if n_nodes != outer.phi2_hat_nodes.shape[0]:
        raise DimensionMismatch("node count does not match Phi_2 grid")
    nodes = node_offsets(tau, n_nodes)
    y_h_nodes = np.array([y_h_history.lookup(-eta) for eta in nodes])
    return pilot_command_from_nodes(
        x_p, r, outer, y_h_nodes, gains, y_o, tau / n_nodes
    )


def outer_adaptation_terms(e_y, g_delayed, delta_y_delayed, x_p_delayed,
                           y_h_nodes_delayed, p_2, b_p, gains, rates, bounds,
                           outer):
    """Outer adaptive-law derivatives from pre-sampled delayed signals.

    rates: mapping with gamma_2, gamma_3, gamma_phi1, gamma_phi2 (scalar or
    per-element arrays; gamma_phi1 may be one entry per plant state).
    bounds: mapping with lambda2, lambda3, phi1, phi2 ProjectionBounds.
    Returns (lambda2_dot, lambda3_dot, phi1_dot, phi2_dot_nodes).
    """
    w3 = (p_2 @ b_p).T @ e_y                               # B_p' P_2 e_y
    w2 = (p_2 @ (b_p @ gains.L_r)).T @ e_y                 # (P_2 B_p L_r)' e_y
    l2_dot = rates["gamma_2"] * proj(
        outer.lambda2_hat, -(gains.L_r @ g_delayed) * w3, bounds["lambda2"]
    )
    l3_dot = rates["gamma_3"] * proj(
        outer.lambda3_hat, (gains.L_r @ delta_y_delayed) * w3, bounds["lambda3"]
    )
    # transpose convention: phi1_dot' = gamma proj(phi1', -x_p(t-tau) e_y' P_2 B_p L_r)
    phi1_dot = proj(outer.phi1_hat, -np.outer(w2, x_p_delayed), bounds["phi1"])
    phi1_dot = phi1_dot * np.asarray(rates["gamma_phi1"], dtype=float)
    lr_nodes = y_h_nodes_delayed @ gains.L_r.T             # (N, m)
    drive2 = -(lr_nodes[:, None, :] * w2[None, :, None])   # (N, m, m) outer products
    phi2_dot = rates["gamma_phi2"] * proj(outer.phi2_hat_nodes, drive2, bounds["phi2"])
    return l2_dot, l3_dot, phi1_dot, phi2_dot


def outer_adaptation(e_y, g_history, delta_y_history, x_p_history,
                     y_h_history, p_2, b_p, gains, rates, bounds, outer,
                     tau, n_nodes):
    """Outer adaptive laws with history-buffer lookups.

    Lag tau is used for G, dy, and x_p; the command integral nodes need
    y_h(t + eta_k - tau), reaching back as far as 2 tau.
    """
    nodes = node_offsets(tau, n_nodes)
    y_h_nodes_del = np.array([y_h_history.lookup(tau - eta) for eta in nodes])
    return outer_adaptation_terms(
        e_y,
        g_history.lookup(tau),
        delta_y_history.lookup(tau),
        x_p_history.lookup(tau),
        y_h_nodes_del,
        p_2, b_p, gains, rates, bounds, outer,
    )

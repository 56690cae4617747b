"""Truth oracles and run metrics computed from simulation logs.

These tools reconstruct the time-varying inner loop from logged data plus
the scenario's true effectiveness schedule, so they can verify quantities
(transition matrices, state predictions, ideal parameter values) that the
online controllers never see.  They are test-side instruments and never
feed back into the control path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import solve_matching
from .errors import EmptyWindow, RangeNotLogged
from .pilot_model import node_offsets

__all__ = [
    "RunMetrics",
    "TransitionOracle",
    "compute_metrics",
    "ideal_values",
    "predict_state",
]


@dataclass(frozen=True)
class RunMetrics:
    """Scalar performance summary over a time window."""

    rms_tracking_error: float
    saturation_duty_cycle: float
    control_effort: float
    pilot_effort: float
    peak_e_y: float

    def as_row(self):
        return [
            self.rms_tracking_error, self.saturation_duty_cycle,
            self.control_effort, self.pilot_effort, self.peak_e_y,
        ]

    @staticmethod
    def row_header():
        return ["rms_tracking_error", "saturation_duty_cycle",
                "control_effort", "pilot_effort", "peak_e_y"]


class TransitionOracle:
    """State-transition matrices of the logged time-varying inner loop.

    The loop matrix is A(t) = A_r + B_p H'(t) with H'(t) = -Lam(t) Ktilde(t),
    where Ktilde is the logged feedback gain minus the matching-condition
    ideal for the effectiveness in force at that instant.  Gains between
    log samples interpolate linearly.
    """

    def __init__(self, log):
        cfg = log.meta["config"]
        gains = log.meta["gains"]
        self.log = log
        self.h = log.sample_period
        if self.h <= 0.0:
            raise RangeNotLogged("log holds fewer than two samples")
        self.t0 = float(log.t[0])
        self.t1 = float(log.t[-1])
        self.a_r = gains.A_r
        self.b_p = cfg.plant.B_p
        self.gains = gains
        self.plant = cfg.plant
        n, m = cfg.plant.n_p, cfg.plant.m
        self._k_log = log.k_hat_x.reshape(-1, m, n)
        self._lam_log = log.lam_diag
        self._lamhat_log = log.lambda_hat
        # ideal gain per distinct effectiveness regime
        self._k_star_cache = {}

    def _k_star(self, lam):
        key = tuple(np.round(lam, 12))
        if key not in self._k_star_cache:
            k, _ = solve_matching(self.plant.A_p, self.a_r, self.b_p, lam)
            self._k_star_cache[key] = k
        return self._k_star_cache[key]

    def _check(self, t):
        if t < self.t0 - 1e-9 or t > self.t1 + 1e-9:
            raise RangeNotLogged(f"t={t} outside logged span [{self.t0}, {self.t1}]")

    def _sample(self, arr, t):
        j = (t - self.t0) / self.h
        j0 = int(np.floor(j))
        fr = j - j0
        j0 = min(max(j0, 0), arr.shape[0] - 1)
        j1 = min(j0 + 1, arr.shape[0] - 1)
        return (1.0 - fr) * arr[j0] + fr * arr[j1]

    def lam_diag(self, t):
        """Effectiveness diagonal in force at time t (right-continuous)."""
        self._check(t)
        j = int(np.floor((t - self.t0) / self.h + 1e-9))
        return self._lam_log[min(max(j, 0), self._lam_log.shape[0] - 1)]

    def lambda2_diag(self, t):
        """diag of Lam(t) diag(lambda_hat(t)), the effective input gain."""
        return self.lam_diag(t) * self._sample(self._lamhat_log, t)

    def loop_matrix(self, t):
        """A(t) = A_r + B_p H'(t)."""
        self._check(t)
        lam = self.lam_diag(t)
        k_tilde = self._sample(self._k_log, t) - self._k_star(lam)
        h_t = -(lam[:, None] * k_tilde)          # H'(t), shape (m, n)
        return self.a_r + self.b_p @ h_t

    def phi(self, t_end, t_start):
        """Phi(t_end, t_start), integrating dPhi/ds = A(s) Phi with the same
        fixed-step scheme as the simulation (backward in s when t_end <
        t_start, which yields the inverse propagator)."""
        self._check(t_start)
        self._check(t_end)
        n = self.a_r.shape[0]
        phi = np.eye(n)
        steps = int(round(abs(t_end - t_start) / self.h))
        if steps == 0:
            return phi
        hh = self.h if t_end >= t_start else -self.h
        s = t_start
        for i in range(steps):
            k1 = self.loop_matrix(s) @ phi
            k2 = self.loop_matrix(s + 0.5 * hh) @ (phi + 0.5 * hh * k1)
            k3 = self.loop_matrix(s + 0.5 * hh) @ (phi + 0.5 * hh * k2)
            k4 = self.loop_matrix(s + hh) @ (phi + hh * k3)
            phi = phi + (hh / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            s = t_start + (i + 1) * hh
        return phi

    def phi_back(self, t_end, node_times):
        """One backward sweep giving Phi(t_end, s) at each requested s.

        Node times may fall between log samples; values interpolate
        linearly along the sweep.
        """
        for s in node_times:
            self._check(s)
        self._check(t_end)
        t_lo = min(node_times)
        n = self.a_r.shape[0]
        m_mat = np.eye(n)
        s = t_end
        out = [None] * len(node_times)
        steps = int(np.ceil((t_end - t_lo) / self.h - 1e-9))
        for i in range(steps + 1):
            s_new = t_end - (i + 1) * self.h
            for k, tn in enumerate(node_times):
                if out[k] is None and abs(s - tn) <= 1e-9:
                    out[k] = m_mat.copy()
            if i == steps:
                break
            hh = -self.h
            k1 = -(m_mat @ self.loop_matrix(s))
            k2 = -((m_mat + 0.5 * hh * k1) @ self.loop_matrix(s + 0.5 * hh))
            k3 = -((m_mat + 0.5 * hh * k2) @ self.loop_matrix(s + 0.5 * hh))
            k4 = -((m_mat + hh * k3) @ self.loop_matrix(s + hh))
            m_new = m_mat + (hh / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            for k, tn in enumerate(node_times):
                if out[k] is None and s_new - 1e-12 <= tn < s - 1e-12:
                    fr = (s - tn) / self.h
                    out[k] = (1.0 - fr) * m_mat + fr * m_new
            m_mat, s = m_new, s_new
        for k, tn in enumerate(node_times):
            if out[k] is None:
                if abs(s - tn) <= 1e-9:
                    out[k] = m_mat.copy()
                else:  # pragma: no cover - guarded by _check above
                    raise RangeNotLogged(f"node time {tn} not reached")
        return out


def _log_sample(log, arr, t):
    h = log.sample_period
    j = (t - log.t[0]) / h
    j0 = int(np.floor(j))
    fr = j - j0
    j0 = min(max(j0, 0), arr.shape[0] - 1)
    j1 = min(j0 + 1, arr.shape[0] - 1)
    return (1.0 - fr) * arr[j0] + fr * arr[j1]


def predict_state(oracle, t, n_nodes=None):
    """Plant state one delay ahead, from data available up to time t.

    Propagates x_p(t) with the transition oracle and adds the delayed-input
    convolution discretized on the same left-anchored rectangle nodes the
    pilot uses.  Requires the log to cover [t, t + tau].
    """
    log = oracle.log
    cfg = log.meta["config"]
    tau = cfg.tau
    n_nodes = n_nodes or cfg.n_nodes
    oracle._check(t + tau)
    etas = node_offsets(tau, n_nodes)
    node_times = [t + eta + tau for eta in etas]
    phis = oracle.phi_back(t + tau, node_times + [t])
    phi_full = phis[-1]                       # Phi(t+tau, t)
    acc = np.zeros(cfg.plant.n_p)
    l_r = log.meta["gains"].L_r
    for k, eta in enumerate(etas):
        lam2 = oracle.lambda2_diag(node_times[k])
        y_h = _log_sample(log, log.y_h, t + eta)
        acc = acc + phis[k] @ (cfg.plant.B_p @ (lam2 * (l_r @ y_h)))
    x_p_t = _log_sample(log, log.x_p, t)
    return phi_full @ x_p_t + (tau / n_nodes) * acc


def ideal_values(oracle, t, n_nodes=None):
    """Ideal outer-loop parameter values at time t.

    Returns (phi1_star, phi2_star_nodes, lambda2_star, lambda3_star); the
    log must cover [t, t + tau].
    """
    log = oracle.log
    cfg = log.meta["config"]
    gains = log.meta["gains"]
    tau = cfg.tau
    n_nodes = n_nodes or cfg.n_nodes
    oracle._check(t + tau)
    lam = oracle.lam_diag(t + tau)
    k_tilde = oracle._sample(oracle._k_log, t + tau) - oracle._k_star(lam)
    h_t_tau = -(lam[:, None] * k_tilde)       # H'(t + tau)
    h_bar = -(gains.theta_x + np.linalg.solve(gains.L_r, h_t_tau))
    etas = node_offsets(tau, n_nodes)
    node_times = [t + eta + tau for eta in etas]
    phis = oracle.phi_back(t + tau, node_times + [t])
    phi1_star = h_bar @ phis[-1]
    phi2_star = []
    for k in range(n_nodes):
        lam2_k = oracle.lambda2_diag(node_times[k])
        phi2_star.append(h_bar @ (phis[k] @ (cfg.plant.B_p * lam2_k[None, :])))
    lambda2_star = 1.0 / oracle.lambda2_diag(t + tau)
    lambda3_star = oracle.lambda2_diag(t)
    return phi1_star, phi2_star, lambda2_star, lambda3_star


def compute_metrics(log, window=None):
    """RunMetrics over [window[0], window[1]] (full span by default).

    Tracking error is the tracked output minus the command; saturation duty
    cycle is the fraction of samples with any channel clipped; efforts are
    trapezoidal time integrals of the squared signals.
    """
    t = log.t
    if window is None:
        window = (float(t[0]), float(t[-1]))
    lo, hi = float(window[0]), float(window[1])
    mask = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if not np.any(mask):
        raise EmptyWindow(f"no samples in [{lo}, {hi}]")
    tw = t[mask]
    err = log.y_2[mask] - log.r[mask]
    rms = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    saturated = np.any(np.abs(log.delta_y[mask]) > 0.0, axis=1)
    duty = float(np.mean(saturated))
    if tw.size > 1:
        u2 = np.sum(log.u_p[mask] ** 2, axis=1)
        yh2 = np.sum(log.y_h[mask] ** 2, axis=1)
        control_effort = float(np.trapezoid(u2, tw))
        pilot_effort = float(np.trapezoid(yh2, tw))
    else:
        control_effort = pilot_effort = 0.0
    peak = float(np.linalg.norm(log.e_y[mask], axis=1).max())
    return RunMetrics(
        rms_tracking_error=rms,
        saturation_duty_cycle=duty,
        control_effort=control_effort,
        pilot_effort=pilot_effort,
        peak_e_y=peak,
    )

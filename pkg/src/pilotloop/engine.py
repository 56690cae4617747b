"""Coupled fixed-step simulation of both loops.

Every continuous quantity (plant, reference, crossover, auxiliary error,
and all adaptive parameters) advances in one joint RK4 step.  Delayed
terms read ring buffers of past outputs; because the smallest lookup lag
is one integral-node spacing (>= h), every stage evaluation lands at or
before the newest stored sample.  One ring append happens per step.

Two equivalent backends exist: a compiled kernel (default, see
``_kernel``) and a plain numpy reference path whose stage math mirrors the
per-module operation functions.  ``backend="numpy"`` selects the latter;
the test suite checks both against each other.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteState, StepTooLarge, ValidationError
from .simlog import SimLog

__all__ = ["run_simulation"]

_EXACT, _MID, _END = 0, 1, 2


class _Layout:
    """Slices of the flat joint state vector."""

    def __init__(self, n, m, n_nodes):
        o = 0

        def nxt(k):
            nonlocal o
            s = slice(o, o + k)
            o += k
            return s

        self.x_p = nxt(n)
        self.x_r = nxt(n)
        self.x_m = nxt(n)
        self.e_delta = nxt(n)
        self.k_hat = nxt(m * n)
        self.lam = nxt(m)
        self.lam2 = nxt(m)
        self.lam3 = nxt(m)
        self.phi1 = nxt(m * n)
        self.phi2 = nxt(n_nodes * m * m)
        self.size = o
        self.blocks = [
            ("x_p", self.x_p), ("x_r", self.x_r), ("x_m", self.x_m),
            ("e_delta", self.e_delta), ("k_hat_x", self.k_hat),
            ("lambda_hat", self.lam), ("lambda2_hat", self.lam2),
            ("lambda3_hat", self.lam3), ("phi1_hat", self.phi1),
            ("phi2_hat", self.phi2),
        ]

    def name_of_index(self, q):
        for name, sl in self.blocks:
            if sl.start <= q < sl.stop:
                return name
        return "state"

    def name_of(self, x):
        bad = np.flatnonzero(~np.isfinite(x))
        return self.name_of_index(int(bad[0])) if bad.size else "state"


def _proj_fast(theta, y, lo, hi, inv_mg):
    up_scale = np.minimum(np.maximum((hi - theta) * inv_mg, 0.0), 1.0)
    lo_scale = np.minimum(np.maximum((theta - lo) * inv_mg, 0.0), 1.0)
    return np.where(y > 0.0, y * up_scale, y * lo_scale)


def _full(value, size):
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        return np.full(size, arr[0])
    if arr.size != size:
        raise ValidationError(f"rate has {arr.size} entries, expected {size}")
    return arr.copy()


class _Prep:
    """Precomputed constants shared by both backends."""

    def __init__(self, config):
        config.validate()
        self.config = config
        self.gains = config.gains()
        plant = config.plant
        self.n, self.m = plant.n_p, plant.m
        n, m = self.n, self.m
        self.n_nodes = config.n_nodes
        self.tau, self.h = config.tau, config.h
        self.lay = _Layout(n, m, self.n_nodes)
        self.adaptive = config.pilot_mode == "adaptive"

        g = self.gains
        self.a_p, self.b_p = plant.A_p, plant.B_p
        self.a_r, self.a_m = g.A_r, g.A_m
        self.b_r, self.b_m = g.B_r, g.B_m
        self.l_r = g.L_r
        self.l_r_inv = np.linalg.inv(g.L_r)
        self.theta_r = g.theta_r
        self.p1b = g.P_1 @ plant.B_p
        self.p2b = g.P_2 @ plant.B_p
        self.p2bl = g.P_2 @ (plant.B_p @ g.L_r)
        self.lam0 = plant.lam_diag.copy()

        self.g_x = _full(config.gamma_x, n)
        self.g_lam = _full(config.gamma_lambda, m)
        self.g_2 = _full(config.gamma_2, m)
        self.g_3 = _full(config.gamma_3, m)
        self.g_p1 = _full(config.gamma_phi1, n)
        self.g_p2 = _full(config.gamma_phi2, m)

        boxes = config.bounds()

        def arrs(key):
            b = boxes[key]
            return b.lower, b.upper, 1.0 / b.margin

        self.lam_box = arrs("lambda")
        self.l2_box = arrs("lambda2")
        self.l3_box = arrs("lambda3")
        self.f1_box = arrs("phi1")
        self.f2_box = arrs("phi2")
        self.y_o = config.y_o

        if self.tau > 0.0:
            p_samp = int(round(self.tau / self.n_nodes / self.h))
            if p_samp < 1 or abs(p_samp * self.n_nodes * self.h - self.tau) \
                    > 1e-9 * max(self.tau, 1.0):
                raise ValidationError("h must divide tau/N exactly")
            if self.h > self.tau / self.n_nodes * (1.0 + 1e-12):
                raise StepTooLarge("h exceeds the integral-node spacing tau/N")
        else:
            p_samp = 0
        self.p_samp = p_samp
        self.np_samp = self.n_nodes * p_samp
        self.w_node = self.tau / self.n_nodes
        # node k=1..N sits at eta_k = -tau + (k-1) tau/N: entry 0 is the
        # full-tau lag
        self.node_lags = np.array(
            [p_samp * (self.n_nodes - k) for k in range(self.n_nodes)],
            dtype=np.int64,
        )
        self.cap = 2 * self.np_samp + 4

        init = config.initial_values(g)
        x0 = np.zeros(self.lay.size)
        x0[self.lay.lam] = init["lambda_hat"]
        x0[self.lay.lam2] = init["lambda2_hat"]
        x0[self.lay.lam3] = init["lambda3_hat"]
        x0[self.lay.k_hat] = init["k_hat_x"].ravel()
        x0[self.lay.phi1] = init["phi1_hat"].ravel()
        x0[self.lay.phi2] = init["phi2_hat"].ravel()
        self.x0 = x0

        self.steps = int(round(config.duration / self.h))
        self.n_log = self.steps // config.log_every + 1
        ev = sorted(config.events, key=lambda e: e.time)
        self.ev_times = np.array([e.time for e in ev])
        self.ev_lams = (np.array([e.new_lambda for e in ev], dtype=float)
                        if ev else np.zeros((0, m)))

    def alloc_log(self):
        n, m, n_nodes, n_log = self.n, self.m, self.n_nodes, self.n_log
        return {
            "t": np.zeros(n_log),
            "x_p": np.zeros((n_log, n)), "x_r": np.zeros((n_log, n)),
            "x_m": np.zeros((n_log, n)), "e_delta": np.zeros((n_log, n)),
            "e_1": np.zeros((n_log, n)), "e_2": np.zeros((n_log, n)),
            "e_y": np.zeros((n_log, n)),
            "y_h": np.zeros((n_log, m)), "v": np.zeros((n_log, m)),
            "delta_y": np.zeros((n_log, m)), "u_p": np.zeros((n_log, m)),
            "y_1": np.zeros((n_log, m)), "y_2": np.zeros((n_log, m)),
            "r": np.zeros((n_log, m)),
            "lambda_hat": np.zeros((n_log, m)),
            "lambda2_hat": np.zeros((n_log, m)),
            "lambda3_hat": np.zeros((n_log, m)),
            "phi1_fro": np.zeros(n_log),
            "phi2_fro": np.zeros((n_log, n_nodes)),
            "phi1_hat": np.zeros((n_log, m * n)),
            "phi2_hat": np.zeros((n_log, n_nodes * m * m)),
            "k_hat_x": np.zeros((n_log, m * n)),
            "lam_diag": np.zeros((n_log, m)),
            "G": np.zeros((n_log, m)),
        }

    def finish(self, logv, rows):
        data = {k: v[:rows] for k, v in logv.items()}
        return SimLog(
            meta={"config": self.config, "gains": self.gains, "h": self.h,
                  "log_every": self.config.log_every},
            **data,
        )


def _run_numba(prep):
    from ._kernel import run_kernel

    cfg = prep.config
    logv = prep.alloc_log()
    ref = cfg.reference
    n_seg = len(ref.segments)
    r_starts = ref._starts if n_seg else np.zeros(0)
    r_ends = ref._ends if n_seg else np.zeros(0)
    r_levels = (np.array(ref._levels, dtype=float).reshape(n_seg, prep.m)
                if n_seg else np.zeros((0, prep.m)))
    x = prep.x0.copy()
    status, logged, bad_q, bad_t = run_kernel(
        x, prep.steps, prep.h, cfg.log_every,
        prep.n, prep.m, prep.n_nodes, prep.p_samp, prep.w_node, prep.adaptive,
        prep.a_p, prep.a_r, prep.a_m, prep.b_p, prep.b_r, prep.b_m,
        prep.l_r, prep.l_r_inv, prep.theta_r,
        prep.p1b, prep.p2b, prep.p2bl,
        prep.lam0.copy(), prep.g_x, prep.g_lam, prep.g_2, prep.g_3,
        prep.g_p1, prep.g_p2,
        *prep.lam_box, *prep.l2_box, *prep.l3_box, *prep.f1_box, *prep.f2_box,
        prep.y_o,
        r_starts, r_ends, r_levels,
        prep.ev_times, prep.ev_lams,
        np.zeros((prep.cap, prep.m)), np.zeros((prep.cap, 2 * prep.m + prep.n)),
        prep.node_lags,
        logv["t"], logv["x_p"], logv["x_r"], logv["x_m"], logv["e_delta"],
        logv["e_1"], logv["e_2"], logv["e_y"], logv["y_h"], logv["v"],
        logv["delta_y"], logv["u_p"], logv["y_1"], logv["y_2"], logv["r"],
        logv["lambda_hat"], logv["lambda2_hat"], logv["lambda3_hat"],
        logv["phi1_fro"], logv["phi2_fro"], logv["phi1_hat"],
        logv["phi2_hat"], logv["k_hat_x"], logv["lam_diag"], logv["G"],
        cfg.plant.C_1, cfg.plant.C_2,
    )
    if status != 0:
        exc = NonFiniteState(bad_t, prep.lay.name_of_index(bad_q))
        exc.partial = prep.finish(logv, logged)
        raise exc
    return prep.finish(logv, logged)


def _run_numpy(prep):
    cfg = prep.config
    lay = prep.lay
    n, m, n_nodes = prep.n, prep.m, prep.n_nodes
    tau, h = prep.tau, prep.h
    adaptive = prep.adaptive
    a_p, b_p = prep.a_p, prep.b_p
    a_r, a_m, b_r, b_m = prep.a_r, prep.a_m, prep.b_r, prep.b_m
    l_r, l_r_inv, theta_r = prep.l_r, prep.l_r_inv, prep.theta_r
    p1b, p2b, p2bl = prep.p1b, prep.p2b, prep.p2bl
    g_x, g_lam, g_2, g_3 = prep.g_x, prep.g_lam, prep.g_2, prep.g_3
    g_p1, g_p2 = prep.g_p1, prep.g_p2
    lam_lo, lam_hi, lam_im = prep.lam_box
    l2_lo, l2_hi, l2_im = prep.l2_box
    l3_lo, l3_hi, l3_im = prep.l3_box
    f1_lo, f1_hi, f1_im = prep.f1_box
    f2_lo, f2_hi, f2_im = prep.f2_box
    y_o = prep.y_o
    r_eval = cfg.reference.value
    p_samp, np_samp, w_node = prep.p_samp, prep.np_samp, prep.w_node
    cap = prep.cap
    lam_cur = prep.lam0.copy()
    bp_lam = b_p * lam_cur[None, :]

    use_rings = adaptive and p_samp > 0
    yh_ring = np.zeros((cap, m))
    co_ring = np.zeros((cap, 2 * m + n))
    head = 0
    count = 0
    yh_offs = np.concatenate([prep.node_lags, prep.node_lags + np_samp])

    def yh_take(offs):
        vals = yh_ring[(head - offs) % cap]
        if count <= offs.max():
            vals = np.where((offs >= count)[:, None], 0.0, vals)
        return vals

    def co_back(k):
        if k >= count:
            return np.zeros(2 * m + n)
        return co_ring[(head - k) % cap]

    sl_xp, sl_xr, sl_xm, sl_ed = lay.x_p, lay.x_r, lay.x_m, lay.e_delta
    sl_k, sl_l, sl_l2, sl_l3 = lay.k_hat, lay.lam, lay.lam2, lay.lam3
    sl_f1, sl_f2 = lay.phi1, lay.phi2

    def direct_yh(ts):
        if ts < 0.0:
            return np.zeros(m)
        return np.clip(r_eval(ts), -y_o, y_o)

    def stage(ts, xs, kind):
        dx = np.zeros(lay.size)
        xp = xs[sl_xp]
        xr = xs[sl_xr]
        k_hat = xs[sl_k].reshape(m, n)
        lam_hat = xs[sl_l]
        e1 = xp - xr

        if not adaptive:
            yh_now = direct_yh(ts)
            yh_tau = direct_yh(ts - tau)
            u_p = -(k_hat @ xp) + lam_hat * (l_r @ yh_tau)
            dx[sl_xp] = a_p @ xp + bp_lam @ u_p
            dx[sl_xr] = a_r @ xr + b_r @ yh_tau
            w1 = p1b.T @ e1
            np.multiply(w1[:, None], (g_x * xp)[None, :], out=dx[sl_k].reshape(m, n))
            dx[sl_l] = g_lam * _proj_fast(
                lam_hat, -(l_r @ yh_tau) * w1, lam_lo, lam_hi, lam_im
            )
            return dx, (yh_now, yh_now, yh_now, np.zeros(m), u_p)

        xm = xs[sl_xm]
        ed = xs[sl_ed]
        lam2 = xs[sl_l2]
        lam3 = xs[sl_l3]
        phi1 = xs[sl_f1].reshape(m, n)
        phi2 = xs[sl_f2].reshape(n_nodes, m, m)

        if p_samp > 0:
            if kind == _EXACT:
                yh_all = yh_take(yh_offs)
                co = co_back(np_samp)
            elif kind == _END:
                yh_all = yh_take(yh_offs - 1)
                co = co_back(np_samp - 1)
            else:
                yh_all = 0.5 * (yh_take(yh_offs) + yh_take(yh_offs - 1))
                co = 0.5 * (co_back(np_samp) + co_back(np_samp - 1))
            yh_nodes = yh_all[:n_nodes]
            yh_nodes_del = yh_all[n_nodes:]
            yh_tau = yh_nodes[0]
            g_tau = co[:m]
            dy_tau = co[m:2 * m]
            xp_tau = co[2 * m:]

        g_now = phi1 @ xp + theta_r @ r_eval(ts)
        if p_samp > 0:
            lr_nodes = yh_nodes @ l_r.T
            g_now = g_now + w_node * np.einsum("kij,kj->i", phi2, lr_nodes)
        v_now = l_r_inv @ (lam2 * (l_r @ g_now))
        yh_now = np.clip(v_now, -y_o, y_o)
        dy_now = yh_now - v_now
        if p_samp == 0:
            yh_tau, g_tau, dy_tau, xp_tau = yh_now, g_now, dy_now, xp
            yh_nodes_del = np.broadcast_to(yh_now, (n_nodes, m))

        u_p = -(k_hat @ xp) + lam_hat * (l_r @ yh_tau)
        e2 = xp - xm
        ey = e2 - ed

        dx[sl_xp] = a_p @ xp + bp_lam @ u_p
        dx[sl_xr] = a_r @ xr + b_r @ yh_tau
        dx[sl_xm] = a_m @ xm + b_m @ r_eval(ts - tau)
        dx[sl_ed] = a_m @ ed + b_p @ (lam3 * (l_r @ dy_tau))

        w1 = p1b.T @ e1
        np.multiply(w1[:, None], (g_x * xp)[None, :], out=dx[sl_k].reshape(m, n))
        dx[sl_l] = g_lam * _proj_fast(
            lam_hat, -(l_r @ yh_tau) * w1, lam_lo, lam_hi, lam_im
        )
        w3 = p2b.T @ ey
        w2 = p2bl.T @ ey
        dx[sl_l2] = g_2 * _proj_fast(
            lam2, -(l_r @ g_tau) * w3, l2_lo, l2_hi, l2_im
        )
        dx[sl_l3] = g_3 * _proj_fast(
            lam3, (l_r @ dy_tau) * w3, l3_lo, l3_hi, l3_im
        )
        dx[sl_f1].reshape(m, n)[:] = _proj_fast(
            phi1, -np.outer(w2, xp_tau), f1_lo, f1_hi, f1_im
        ) * g_p1
        lr_nodes_del = yh_nodes_del @ l_r.T
        drive2 = -(lr_nodes_del[:, None, :] * w2[None, :, None])
        dx[sl_f2].reshape(n_nodes, m, m)[:] = g_p2 * _proj_fast(
            phi2, drive2, f2_lo, f2_hi, f2_im
        )
        return dx, (g_now, v_now, yh_now, dy_now, u_p)

    x = prep.x0.copy()
    logv = prep.alloc_log()
    c1t, c2t = cfg.plant.C_1.T, cfg.plant.C_2.T

    def log_row(j, ts, xs, outs):
        g_now, v_now, yh_now, dy_now, u_p = outs
        xp = xs[sl_xp]
        e1 = xp - xs[sl_xr]
        e2 = xp - xs[sl_xm]
        logv["t"][j] = ts
        logv["x_p"][j] = xp
        logv["x_r"][j] = xs[sl_xr]
        logv["x_m"][j] = xs[sl_xm]
        logv["e_delta"][j] = xs[sl_ed]
        logv["e_1"][j] = e1
        logv["e_2"][j] = e2
        logv["e_y"][j] = e2 - xs[sl_ed]
        logv["y_h"][j] = yh_now
        logv["v"][j] = v_now
        logv["delta_y"][j] = dy_now
        logv["u_p"][j] = u_p
        logv["y_1"][j] = c1t @ xp
        logv["y_2"][j] = c2t @ xp
        logv["r"][j] = r_eval(ts)
        logv["lambda_hat"][j] = xs[sl_l]
        logv["lambda2_hat"][j] = xs[sl_l2]
        logv["lambda3_hat"][j] = xs[sl_l3]
        logv["phi1_fro"][j] = np.linalg.norm(xs[sl_f1])
        f2 = xs[sl_f2].reshape(n_nodes, m * m)
        logv["phi2_fro"][j] = np.sqrt((f2 * f2).sum(axis=1))
        logv["phi1_hat"][j] = xs[sl_f1]
        logv["phi2_hat"][j] = xs[sl_f2]
        logv["k_hat_x"][j] = xs[sl_k]
        logv["lam_diag"][j] = lam_cur
        logv["G"][j] = g_now

    ev_idx = 0
    n_ev = prep.ev_times.size

    def apply_events(ts):
        nonlocal ev_idx, lam_cur, bp_lam
        while ev_idx < n_ev and prep.ev_times[ev_idx] <= ts + 1e-9:
            lam_cur = prep.ev_lams[ev_idx].copy()
            bp_lam = b_p * lam_cur[None, :]
            ev_idx += 1

    apply_events(0.0)
    dx1, outs = stage(0.0, x, _END)
    if use_rings:
        yh_ring[head] = outs[2]
        co_ring[head] = np.concatenate([outs[0], outs[3], x[sl_xp]])
        count = 1
    log_row(0, 0.0, x, outs)

    h2 = 0.5 * h
    h6 = h / 6.0
    logged = 1
    for i in range(prep.steps):
        t = i * h
        k1 = dx1
        k2, _ = stage(t + h2, x + h2 * k1, _MID)
        k3, _ = stage(t + h2, x + h2 * k2, _MID)
        k4, _ = stage(t + h, x + h * k3, _END)
        x = x + h6 * (k1 + 2.0 * (k2 + k3) + k4)
        # keep adaptive parameters inside their boxes against float noise
        np.clip(x[sl_l], lam_lo, lam_hi, out=x[sl_l])
        np.clip(x[sl_l2], l2_lo, l2_hi, out=x[sl_l2])
        np.clip(x[sl_l3], l3_lo, l3_hi, out=x[sl_l3])
        np.clip(x[sl_f1].reshape(m, n), f1_lo, f1_hi, out=x[sl_f1].reshape(m, n))
        np.clip(x[sl_f2].reshape(n_nodes, m, m), f2_lo, f2_hi,
                out=x[sl_f2].reshape(n_nodes, m, m))
        t_new = (i + 1) * h
        if not np.all(np.isfinite(x)):
            exc = NonFiniteState(t_new, lay.name_of(x))
            exc.partial = prep.finish(logv, logged)
            raise exc
        apply_events(t_new)
        dx1, outs = stage(t_new, x, _END)
        if use_rings:
            head = (head + 1) % cap
            yh_ring[head] = outs[2]
            co_ring[head] = np.concatenate([outs[0], outs[3], x[sl_xp]])
            count += 1
        if (i + 1) % cfg.log_every == 0:
            log_row(logged, t_new, x, outs)
            logged += 1
    return prep.finish(logv, logged)


def run_simulation(config, backend="auto"):
    """Integrate a scenario and return its SimLog.

    Raises NonFiniteState (with the partial log attached as ``.partial``)
    if any state entry leaves the finite range.  ``backend`` selects the
    compiled kernel ("numba"), the reference path ("numpy"), or whichever
    is available ("auto").
    """
    prep = _Prep(config)
    if backend == "auto":
        try:
            from . import _kernel  # noqa: F401
            backend = "numba"
        except ImportError:  # pragma: no cover - numba is a hard dependency
            backend = "numpy"
    if backend == "numba":
        return _run_numba(prep)
    if backend == "numpy":
        return _run_numpy(prep)
    raise ValueError(f"unknown backend '{backend}'")

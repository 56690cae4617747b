"""Compiled integration kernel.

Same math as the reference stage in ``engine._run_numpy`` (which mirrors
the per-module operation functions), written with explicit small-dimension
loops so a 70 s run costs well under a second.  No BLAS calls, so results
are bit-reproducible for a given build.  ``tests/test_engine.py`` checks
this kernel against the numpy reference path.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["run_kernel"]

_EXACT, _MID, _END = 0, 1, 2


@njit(cache=True)
def _r_eval(t, r_starts, r_ends, r_levels, r_zero):
    for s in range(r_starts.shape[0]):
        if r_starts[s] <= t < r_ends[s]:
            return r_levels[s]
    return r_zero


@njit(cache=True)
def _ring_get(ring, head, cap, count, off, j):
    if off >= count:
        return 0.0
    return ring[(head - off) % cap, j]


@njit(cache=True)
def _stage(
    ts, xs, kind, dx, outs, head, count,
    n, m, n_nodes, p_samp, np_samp, w_node, tau, adaptive,
    a_p, a_r, a_m, b_p, b_r, b_m, bp_lam, l_r, l_r_inv, theta_r,
    p1b, p2b, p2bl,
    g_x, g_lam, g_2, g_3, g_p1, g_p2,
    lam_lo, lam_hi, lam_im, l2_lo, l2_hi, l2_im, l3_lo, l3_hi, l3_im,
    f1_lo, f1_hi, f1_im, f2_lo, f2_hi, f2_im,
    y_o,
    r_starts, r_ends, r_levels, r_zero,
    yh_ring, co_ring, node_lags,
):
    nx = xs.shape[0]
    cap = yh_ring.shape[0]
    o_xp = 0
    o_xr = n
    o_xm = 2 * n
    o_ed = 3 * n
    o_k = 4 * n
    o_l = o_k + m * n
    o_l2 = o_l + m
    o_l3 = o_l2 + m
    o_f1 = o_l3 + m
    o_f2 = o_f1 + m * n

    for q in range(nx):
        dx[q] = 0.0
    e1 = np.empty(n)
    for i in range(n):
        e1[i] = xs[o_xp + i] - xs[o_xr + i]

    yh_tau = np.zeros(m)
    g_now = np.empty(m)
    v_now = np.empty(m)
    yh_now = np.empty(m)
    dy_now = np.empty(m)
    yh_nodes = np.zeros((n_nodes, m))
    yh_nodes_del = np.zeros((n_nodes, m))
    g_tau = np.zeros(m)
    dy_tau = np.zeros(m)
    xp_tau = np.zeros(n)

    if not adaptive:
        rv = _r_eval(ts, r_starts, r_ends, r_levels, r_zero)
        if ts - tau >= 0.0:
            rv_tau = _r_eval(ts - tau, r_starts, r_ends, r_levels, r_zero)
        else:
            rv_tau = r_zero
        for j in range(m):
            c = rv[j]
            if c > y_o[j]:
                c = y_o[j]
            elif c < -y_o[j]:
                c = -y_o[j]
            yh_now[j] = c
            g_now[j] = c
            v_now[j] = c
            dy_now[j] = 0.0
            c2 = rv_tau[j]
            if c2 > y_o[j]:
                c2 = y_o[j]
            elif c2 < -y_o[j]:
                c2 = -y_o[j]
            yh_tau[j] = c2
    else:
        if p_samp > 0:
            if kind == _EXACT:
                d0 = 0
                d1 = 0
                wgt = 1.0
            elif kind == _END:
                d0 = -1
                d1 = -1
                wgt = 1.0
            else:
                d0 = 0
                d1 = -1
                wgt = 0.5
            for k in range(n_nodes):
                base = node_lags[k]
                for j in range(m):
                    va = _ring_get(yh_ring, head, cap, count, base + d0, j)
                    vb = _ring_get(yh_ring, head, cap, count, base + d1, j)
                    yh_nodes[k, j] = va if d0 == d1 else wgt * (va + vb)
                    va = _ring_get(yh_ring, head, cap, count, base + np_samp + d0, j)
                    vb = _ring_get(yh_ring, head, cap, count, base + np_samp + d1, j)
                    yh_nodes_del[k, j] = va if d0 == d1 else wgt * (va + vb)
            for j in range(2 * m + n):
                va = _ring_get(co_ring, head, cap, count, np_samp + d0, j)
                vb = _ring_get(co_ring, head, cap, count, np_samp + d1, j)
                val = va if d0 == d1 else wgt * (va + vb)
                if j < m:
                    g_tau[j] = val
                elif j < 2 * m:
                    dy_tau[j - m] = val
                else:
                    xp_tau[j - 2 * m] = val
            for j in range(m):
                yh_tau[j] = yh_nodes[0, j]

        rv = _r_eval(ts, r_starts, r_ends, r_levels, r_zero)
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc += xs[o_f1 + i * n + j] * xs[o_xp + j]
            for j in range(m):
                acc += theta_r[i, j] * rv[j]
            g_now[i] = acc
        if p_samp > 0:
            for k in range(n_nodes):
                for i in range(m):
                    acc = 0.0
                    for j in range(m):
                        lr_y = 0.0
                        for q in range(m):
                            lr_y += l_r[j, q] * yh_nodes[k, q]
                        acc += xs[o_f2 + (k * m + i) * m + j] * lr_y
                    g_now[i] += w_node * acc
        for i in range(m):
            acc = 0.0
            for j in range(m):
                lr_g = 0.0
                for q in range(m):
                    lr_g += l_r[j, q] * g_now[q]
                acc += l_r_inv[i, j] * xs[o_l2 + j] * lr_g
            v_now[i] = acc
            c = acc
            if c > y_o[i]:
                c = y_o[i]
            elif c < -y_o[i]:
                c = -y_o[i]
            yh_now[i] = c
            dy_now[i] = c - acc
        if p_samp == 0:
            for j in range(m):
                yh_tau[j] = yh_now[j]
                g_tau[j] = g_now[j]
                dy_tau[j] = dy_now[j]
            for j in range(n):
                xp_tau[j] = xs[o_xp + j]
            for k in range(n_nodes):
                for j in range(m):
                    yh_nodes_del[k, j] = yh_now[j]

    u_p = np.empty(m)
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc -= xs[o_k + i * n + j] * xs[o_xp + j]
        lr_y = 0.0
        for q in range(m):
            lr_y += l_r[i, q] * yh_tau[q]
        u_p[i] = acc + xs[o_l + i] * lr_y

    for i in range(n):
        acc_p = 0.0
        acc_r = 0.0
        for j in range(n):
            acc_p += a_p[i, j] * xs[o_xp + j]
            acc_r += a_r[i, j] * xs[o_xr + j]
        for j in range(m):
            acc_p += bp_lam[i, j] * u_p[j]
            acc_r += b_r[i, j] * yh_tau[j]
        dx[o_xp + i] = acc_p
        dx[o_xr + i] = acc_r

    w1 = np.empty(m)
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += p1b[j, i] * e1[j]
        w1[i] = acc
    for i in range(m):
        for j in range(n):
            dx[o_k + i * n + j] = g_x[j] * w1[i] * xs[o_xp + j]
    for i in range(m):
        lr_y = 0.0
        for q in range(m):
            lr_y += l_r[i, q] * yh_tau[q]
        y_drive = -lr_y * w1[i]
        th = xs[o_l + i]
        s = (lam_hi[i] - th) * lam_im[i] if y_drive > 0.0 else (th - lam_lo[i]) * lam_im[i]
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
        dx[o_l + i] = g_lam[i] * y_drive * s

    if adaptive:
        rv_tau = _r_eval(ts - tau, r_starts, r_ends, r_levels, r_zero)
        e2 = np.empty(n)
        ey = np.empty(n)
        for i in range(n):
            e2[i] = xs[o_xp + i] - xs[o_xm + i]
            ey[i] = e2[i] - xs[o_ed + i]
        for i in range(n):
            acc_m = 0.0
            acc_d = 0.0
            for j in range(n):
                acc_m += a_m[i, j] * xs[o_xm + j]
                acc_d += a_m[i, j] * xs[o_ed + j]
            for j in range(m):
                acc_m += b_m[i, j] * rv_tau[j]
                lr_dy = 0.0
                for q in range(m):
                    lr_dy += l_r[j, q] * dy_tau[q]
                acc_d += b_p[i, j] * xs[o_l3 + j] * lr_dy
            dx[o_xm + i] = acc_m
            dx[o_ed + i] = acc_d
        w3 = np.empty(m)
        w2 = np.empty(m)
        for i in range(m):
            acc3 = 0.0
            acc2 = 0.0
            for j in range(n):
                acc3 += p2b[j, i] * ey[j]
                acc2 += p2bl[j, i] * ey[j]
            w3[i] = acc3
            w2[i] = acc2
        for i in range(m):
            lr_g = 0.0
            lr_dy = 0.0
            for q in range(m):
                lr_g += l_r[i, q] * g_tau[q]
                lr_dy += l_r[i, q] * dy_tau[q]
            y2d = -lr_g * w3[i]
            th = xs[o_l2 + i]
            s = (l2_hi[i] - th) * l2_im[i] if y2d > 0.0 else (th - l2_lo[i]) * l2_im[i]
            if s < 0.0:
                s = 0.0
            elif s > 1.0:
                s = 1.0
            dx[o_l2 + i] = g_2[i] * y2d * s
            y3d = lr_dy * w3[i]
            th = xs[o_l3 + i]
            s = (l3_hi[i] - th) * l3_im[i] if y3d > 0.0 else (th - l3_lo[i]) * l3_im[i]
            if s < 0.0:
                s = 0.0
            elif s > 1.0:
                s = 1.0
            dx[o_l3 + i] = g_3[i] * y3d * s
        for i in range(m):
            for j in range(n):
                yd = -w2[i] * xp_tau[j]
                th = xs[o_f1 + i * n + j]
                s = (f1_hi[i, j] - th) * f1_im[i, j] if yd > 0.0 else (th - f1_lo[i, j]) * f1_im[i, j]
                if s < 0.0:
                    s = 0.0
                elif s > 1.0:
                    s = 1.0
                dx[o_f1 + i * n + j] = g_p1[j] * yd * s
        for k in range(n_nodes):
            for j in range(m):
                lr_yd = 0.0
                for q in range(m):
                    lr_yd += l_r[j, q] * yh_nodes_del[k, q]
                for i in range(m):
                    yd = -w2[i] * lr_yd
                    th = xs[o_f2 + (k * m + i) * m + j]
                    s = (f2_hi[i, j] - th) * f2_im[i, j] if yd > 0.0 else (th - f2_lo[i, j]) * f2_im[i, j]
                    if s < 0.0:
                        s = 0.0
                    elif s > 1.0:
                        s = 1.0
                    dx[o_f2 + (k * m + i) * m + j] = g_p2[j] * yd * s

    for j in range(m):
        outs[0, j] = g_now[j]
        outs[1, j] = v_now[j]
        outs[2, j] = yh_now[j]
        outs[3, j] = dy_now[j]
        outs[4, j] = u_p[j]


@njit(cache=True)
def _log_row(
    row, ts, xs, outs, lam_cur,
    n, m, n_nodes,
    r_starts, r_ends, r_levels, r_zero,
    lt, lxp, lxr, lxm, led, le1, le2, ley, lyh, lv, ldy, lup, ly1, ly2,
    lr_log, llam, ll2, ll3, lf1n, lf2n, lf1v, lf2v, lkh, llamd, lg, c_1, c_2,
):
    o_xp = 0
    o_xr = n
    o_xm = 2 * n
    o_ed = 3 * n
    o_k = 4 * n
    o_l = o_k + m * n
    o_l2 = o_l + m
    o_l3 = o_l2 + m
    o_f1 = o_l3 + m
    o_f2 = o_f1 + m * n
    lt[row] = ts
    for i in range(n):
        lxp[row, i] = xs[o_xp + i]
        lxr[row, i] = xs[o_xr + i]
        lxm[row, i] = xs[o_xm + i]
        led[row, i] = xs[o_ed + i]
        le1[row, i] = xs[o_xp + i] - xs[o_xr + i]
        le2[row, i] = xs[o_xp + i] - xs[o_xm + i]
        ley[row, i] = le2[row, i] - xs[o_ed + i]
    rv = _r_eval(ts, r_starts, r_ends, r_levels, r_zero)
    for j in range(m):
        lg[row, j] = outs[0, j]
        lv[row, j] = outs[1, j]
        lyh[row, j] = outs[2, j]
        ldy[row, j] = outs[3, j]
        lup[row, j] = outs[4, j]
        lr_log[row, j] = rv[j]
        llam[row, j] = xs[o_l + j]
        ll2[row, j] = xs[o_l2 + j]
        ll3[row, j] = xs[o_l3 + j]
        llamd[row, j] = lam_cur[j]
        acc1 = 0.0
        acc2 = 0.0
        for i in range(n):
            acc1 += c_1[i, j] * xs[o_xp + i]
            acc2 += c_2[i, j] * xs[o_xp + i]
        ly1[row, j] = acc1
        ly2[row, j] = acc2
    acc = 0.0
    for q in range(m * n):
        lkh[row, q] = xs[o_k + q]
        lf1v[row, q] = xs[o_f1 + q]
        acc += xs[o_f1 + q] * xs[o_f1 + q]
    lf1n[row] = np.sqrt(acc)
    for k in range(n_nodes):
        acc = 0.0
        for q in range(m * m):
            z = xs[o_f2 + k * m * m + q]
            lf2v[row, k * m * m + q] = z
            acc += z * z
        lf2n[row, k] = np.sqrt(acc)


@njit(cache=True)
def run_kernel(
    x, steps, h, log_every,
    n, m, n_nodes, p_samp, w_node, adaptive,
    a_p, a_r, a_m, b_p, b_r, b_m, l_r, l_r_inv, theta_r,
    p1b, p2b, p2bl,
    lam_cur, g_x, g_lam, g_2, g_3, g_p1, g_p2,
    lam_lo, lam_hi, lam_im, l2_lo, l2_hi, l2_im, l3_lo, l3_hi, l3_im,
    f1_lo, f1_hi, f1_im, f2_lo, f2_hi, f2_im,
    y_o,
    r_starts, r_ends, r_levels,
    ev_times, ev_lams,
    yh_ring, co_ring, node_lags,
    lt, lxp, lxr, lxm, led, le1, le2, ley, lyh, lv, ldy, lup, ly1, ly2,
    lr_log, llam, ll2, ll3, lf1n, lf2n, lf1v, lf2v, lkh, llamd, lg,
    c_1, c_2,
):
    np_samp = n_nodes * p_samp
    cap = yh_ring.shape[0]
    nx = x.shape[0]
    tau = w_node * n_nodes
    o_k = 4 * n
    o_l = o_k + m * n
    o_l2 = o_l + m
    o_l3 = o_l2 + m
    o_f1 = o_l3 + m
    o_f2 = o_f1 + m * n
    o_xp = 0
    r_zero = np.zeros(m)

    bp_lam = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            bp_lam[i, j] = b_p[i, j] * lam_cur[j]

    head = 0
    count = 0
    n_ev = ev_times.shape[0]
    ev_idx = 0
    while ev_idx < n_ev and ev_times[ev_idx] <= 1e-9:
        for j in range(m):
            lam_cur[j] = ev_lams[ev_idx, j]
        for i in range(n):
            for j in range(m):
                bp_lam[i, j] = b_p[i, j] * lam_cur[j]
        ev_idx += 1

    outs = np.zeros((5, m))
    dx1 = np.zeros(nx)
    _stage(0.0, x, _END, dx1, outs, head, count,
           n, m, n_nodes, p_samp, np_samp, w_node, tau, adaptive,
           a_p, a_r, a_m, b_p, b_r, b_m, bp_lam, l_r, l_r_inv, theta_r,
           p1b, p2b, p2bl, g_x, g_lam, g_2, g_3, g_p1, g_p2,
           lam_lo, lam_hi, lam_im, l2_lo, l2_hi, l2_im, l3_lo, l3_hi, l3_im,
           f1_lo, f1_hi, f1_im, f2_lo, f2_hi, f2_im, y_o,
           r_starts, r_ends, r_levels, r_zero, yh_ring, co_ring, node_lags)
    if adaptive and p_samp > 0:
        for j in range(m):
            yh_ring[head, j] = outs[2, j]
            co_ring[head, j] = outs[0, j]
            co_ring[head, m + j] = outs[3, j]
        for i in range(n):
            co_ring[head, 2 * m + i] = x[o_xp + i]
        count = 1
    _log_row(0, 0.0, x, outs, lam_cur, n, m, n_nodes,
             r_starts, r_ends, r_levels, r_zero,
             lt, lxp, lxr, lxm, led, le1, le2, ley, lyh, lv, ldy, lup,
             ly1, ly2, lr_log, llam, ll2, ll3, lf1n, lf2n, lf1v, lf2v,
             lkh, llamd, lg, c_1, c_2)
    logged = 1

    k2 = np.zeros(nx)
    k3 = np.zeros(nx)
    k4 = np.zeros(nx)
    xtmp = np.zeros(nx)
    h2 = 0.5 * h
    h6 = h / 6.0

    for istep in range(steps):
        t = istep * h
        for q in range(nx):
            xtmp[q] = x[q] + h2 * dx1[q]
        _stage(t + h2, xtmp, _MID, k2, outs, head, count,
               n, m, n_nodes, p_samp, np_samp, w_node, tau, adaptive,
               a_p, a_r, a_m, b_p, b_r, b_m, bp_lam, l_r, l_r_inv, theta_r,
               p1b, p2b, p2bl, g_x, g_lam, g_2, g_3, g_p1, g_p2,
               lam_lo, lam_hi, lam_im, l2_lo, l2_hi, l2_im,
               l3_lo, l3_hi, l3_im, f1_lo, f1_hi, f1_im,
               f2_lo, f2_hi, f2_im, y_o,
               r_starts, r_ends, r_levels, r_zero, yh_ring, co_ring, node_lags)
        for q in range(nx):
            xtmp[q] = x[q] + h2 * k2[q]
        _stage(t + h2, xtmp, _MID, k3, outs, head, count,
               n, m, n_nodes, p_samp, np_samp, w_node, tau, adaptive,
               a_p, a_r, a_m, b_p, b_r, b_m, bp_lam, l_r, l_r_inv, theta_r,
               p1b, p2b, p2bl, g_x, g_lam, g_2, g_3, g_p1, g_p2,
               lam_lo, lam_hi, lam_im, l2_lo, l2_hi, l2_im,
               l3_lo, l3_hi, l3_im, f1_lo, f1_hi, f1_im,
               f2_lo, f2_hi, f2_im, y_o,
               r_starts, r_ends, r_levels, r_zero, yh_ring, co_ring, node_lags)
        for q in range(nx):
            xtmp[q] = x[q] + h * k3[q]
        _stage(t + h, xtmp, _END, k4, outs, head, count,
               n, m, n_nodes, p_samp, np_samp, w_node, tau, adaptive,
               a_p, a_r, a_m, b_p, b_r, b_m, bp_lam, l_r, l_r_inv, theta_r,
               p1b, p2b, p2bl, g_x, g_lam, g_2, g_3, g_p1, g_p2,
               lam_lo, lam_hi, lam_im, l2_lo, l2_hi, l2_im,
               l3_lo, l3_hi, l3_im, f1_lo, f1_hi, f1_im,
               f2_lo, f2_hi, f2_im, y_o,
               r_starts, r_ends, r_levels, r_zero, yh_ring, co_ring, node_lags)
        for q in range(nx):
            x[q] = x[q] + h6 * (dx1[q] + 2.0 * (k2[q] + k3[q]) + k4[q])
        # clamp adaptive parameters against float-level overshoot
        for i in range(m):
            if x[o_l + i] < lam_lo[i]:
                x[o_l + i] = lam_lo[i]
            elif x[o_l + i] > lam_hi[i]:
                x[o_l + i] = lam_hi[i]
            if x[o_l2 + i] < l2_lo[i]:
                x[o_l2 + i] = l2_lo[i]
            elif x[o_l2 + i] > l2_hi[i]:
                x[o_l2 + i] = l2_hi[i]
            if x[o_l3 + i] < l3_lo[i]:
                x[o_l3 + i] = l3_lo[i]
            elif x[o_l3 + i] > l3_hi[i]:
                x[o_l3 + i] = l3_hi[i]
            for j in range(n):
                if x[o_f1 + i * n + j] < f1_lo[i, j]:
                    x[o_f1 + i * n + j] = f1_lo[i, j]
                elif x[o_f1 + i * n + j] > f1_hi[i, j]:
                    x[o_f1 + i * n + j] = f1_hi[i, j]
        for k in range(n_nodes):
            for i in range(m):
                for j in range(m):
                    q = o_f2 + (k * m + i) * m + j
                    if x[q] < f2_lo[i, j]:
                        x[q] = f2_lo[i, j]
                    elif x[q] > f2_hi[i, j]:
                        x[q] = f2_hi[i, j]
        t_new = (istep + 1) * h
        for q in range(nx):
            if not np.isfinite(x[q]):
                return 1, logged, q, t_new
        while ev_idx < n_ev and ev_times[ev_idx] <= t_new + 1e-9:
            for j in range(m):
                lam_cur[j] = ev_lams[ev_idx, j]
            for i in range(n):
                for j in range(m):
                    bp_lam[i, j] = b_p[i, j] * lam_cur[j]
            ev_idx += 1
        _stage(t_new, x, _END, dx1, outs, head, count,
               n, m, n_nodes, p_samp, np_samp, w_node, tau, adaptive,
               a_p, a_r, a_m, b_p, b_r, b_m, bp_lam, l_r, l_r_inv, theta_r,
               p1b, p2b, p2bl, g_x, g_lam, g_2, g_3, g_p1, g_p2,
               lam_lo, lam_hi, lam_im, l2_lo, l2_hi, l2_im,
               l3_lo, l3_hi, l3_im, f1_lo, f1_hi, f1_im,
               f2_lo, f2_hi, f2_im, y_o,
               r_starts, r_ends, r_levels, r_zero, yh_ring, co_ring, node_lags)
        if adaptive and p_samp > 0:
            head = (head + 1) % cap
            for j in range(m):
                yh_ring[head, j] = outs[2, j]
                co_ring[head, j] = outs[0, j]
                co_ring[head, m + j] = outs[3, j]
            for i in range(n):
                co_ring[head, 2 * m + i] = x[o_xp + i]
            count += 1
        if (istep + 1) % log_every == 0:
            _log_row(logged, t_new, x, outs, lam_cur, n, m, n_nodes,
                     r_starts, r_ends, r_levels, r_zero,
                     lt, lxp, lxr, lxm, led, le1, le2, ley, lyh, lv, ldy,
                     lup, ly1, ly2, lr_log, llam, ll2, ll3, lf1n, lf2n,
                     lf1v, lf2v, lkh, llamd, lg, c_1, c_2)
            logged += 1
    return 0, logged, -1, 0.0

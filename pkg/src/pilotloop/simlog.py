"""Time-indexed run record and its CSV serialization."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SimLog", "write_rows_atomic"]


def _fmt(v):
    return format(float(v), ".17g")


def write_rows_atomic(path, header, rows):
    """Write a CSV via temp-file + rename so readers never see a torn file."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class SimLog:
    """Uniform-grid record of a run.

    Committed samples are always finite; a run that hits a non-finite state
    aborts before logging the offending step.  The error identities
    e_1 = x_p - x_r, e_2 = x_p - x_m, e_y = e_2 - e_delta hold bitwise per
    sample because the logger stores exactly those differences.

    Beyond the CSV columns, the log keeps the full gain trace (k_hat_x),
    the effectiveness schedule, and the pre-gain pilot command G, which the
    diagnostics oracles need to reconstruct the time-varying inner loop.
    """

    t: np.ndarray
    x_p: np.ndarray
    x_r: np.ndarray
    x_m: np.ndarray
    e_delta: np.ndarray
    e_1: np.ndarray
    e_2: np.ndarray
    e_y: np.ndarray
    y_h: np.ndarray
    v: np.ndarray
    delta_y: np.ndarray
    u_p: np.ndarray
    y_1: np.ndarray
    y_2: np.ndarray
    r: np.ndarray
    lambda_hat: np.ndarray
    lambda2_hat: np.ndarray
    lambda3_hat: np.ndarray
    phi1_fro: np.ndarray
    phi2_fro: np.ndarray
    phi1_hat: np.ndarray
    phi2_hat: np.ndarray
    k_hat_x: np.ndarray
    lam_diag: np.ndarray
    G: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.t.size

    @property
    def sample_period(self):
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def e_y_norm(self):
        return np.linalg.norm(self.e_y, axis=1)

    def peak_e_y(self):
        return float(self.e_y_norm.max()) if self.n_samples else 0.0

    def csv_header(self):
        n = self.x_p.shape[1]
        m = self.y_h.shape[1]
        n_nodes = self.phi2_fro.shape[1]
        cols = ["t"]
        cols += [f"x_p{i + 1}" for i in range(n)]
        cols += [f"x_r{i + 1}" for i in range(n)]
        cols += [f"x_m{i + 1}" for i in range(n)]
        cols += ["e_y_norm"]
        cols += [f"y_h{i + 1}" for i in range(m)]
        cols += [f"v{i + 1}" for i in range(m)]
        cols += [f"u_p{i + 1}" for i in range(m)]
        if m == 1:
            cols += ["y_2", "r"]
        else:
            cols += [f"y_2_{i + 1}" for i in range(m)]
            cols += [f"r{i + 1}" for i in range(m)]
        cols += [f"lambda_hat{i + 1}" for i in range(m)]
        cols += [f"lambda2_hat{i + 1}" for i in range(m)]
        cols += [f"lambda3_hat{i + 1}" for i in range(m)]
        cols += ["phi1_fro"]
        cols += [f"phi2_fro_{k + 1}" for k in range(n_nodes)]
        return cols

    def csv_matrix(self):
        blocks = [
            self.t[:, None], self.x_p, self.x_r, self.x_m,
            self.e_y_norm[:, None], self.y_h, self.v, self.u_p,
            self.y_2, self.r, self.lambda_hat, self.lambda2_hat,
            self.lambda3_hat, self.phi1_fro[:, None], self.phi2_fro,
        ]
        return np.hstack(blocks)

    def write_csv(self, path):
        write_rows_atomic(path, self.csv_header(), self.csv_matrix())

"""Scenario definition, JSON round-trip, and the built-in 747 case study."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .design import GainSet, design_gains
from .errors import ParseError, ValidationError
from .inner_loop import PlantParams
from .linalg import as_matrix, matrix_exponential, place_poles_siso
from .projection import ProjectionBounds

__all__ = [
    "DEG_TO_CRAD",
    "FailureEvent",
    "ReferenceSignal",
    "ScenarioConfig",
    "apply_overrides",
    "builtin_747",
    "load_config",
    "save_config",
]

# 1 deg = (pi/180) rad = (pi/1.8) crad
DEG_TO_CRAD = math.pi / 1.8


@dataclass(frozen=True)
class FailureEvent:
    """Actuator-effectiveness change applied at an exact grid time."""

    time: float
    new_lambda: tuple

    def to_dict(self):
        return {"time": self.time, "new_lambda": list(self.new_lambda)}


class ReferenceSignal:
    """Piecewise-constant command; zero outside the declared segments.

    Levels are stored in their configured unit ("crad" or "deg") so a
    save/load round trip is exact; evaluation always returns crad.
    """

    def __init__(self, segments, unit="crad", m=1):
        if unit not in ("crad", "deg"):
            raise ValidationError(f"unknown reference unit '{unit}'")
        self.unit = unit
        self.m = int(m)
        segs = []
        for s in segments:
            start, end, level = float(s[0]), float(s[1]), np.atleast_1d(
                np.asarray(s[2], dtype=float)
            )
            if level.size != self.m:
                raise ValidationError("reference level dimension mismatch")
            if end <= start:
                raise ValidationError("reference segment must have end > start")
            segs.append((start, end, level))
        segs.sort(key=lambda s: s[0])
        for a, b in zip(segs, segs[1:]):
            if b[0] < a[1] - 1e-12:
                raise ValidationError("reference segments overlap")
        self.segments = segs
        scale = DEG_TO_CRAD if unit == "deg" else 1.0
        self._starts = np.array([s[0] for s in segs])
        self._ends = np.array([s[1] for s in segs])
        self._levels = [scale * s[2] for s in segs]
        self._zero = np.zeros(self.m)

    def value(self, t):
        """Command in crad at time t (m-vector)."""
        i = int(np.searchsorted(self._starts, t, side="right")) - 1
        if i >= 0 and t < self._ends[i]:
            return self._levels[i]
        return self._zero

    def to_dict(self):
        return {
            "unit": self.unit,
            "segments": [
                {"start": s[0], "end": s[1], "level": list(s[2])}
                for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, d, m):
        _expect_keys(d, {"unit", "segments"}, "reference")
        segs = []
        for s in d["segments"]:
            _expect_keys(s, {"start", "end", "level"}, "reference.segments[]")
            segs.append((s["start"], s["end"], s["level"]))
        return cls(segs, unit=d["unit"], m=m)


def _expect_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown key(s) {sorted(unknown)}")


def _rate(v):
    """Learning rates may be scalars or per-element diagonals."""
    arr = np.asarray(v, dtype=float)
    if np.any(arr <= 0.0):
        raise ValidationError("learning rates must be positive")
    return float(arr) if arr.ndim == 0 else arr


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one simulation run."""

    name: str
    plant: PlantParams
    A_n: np.ndarray
    L_x: np.ndarray
    short_period: tuple | None
    Q_lqr: np.ndarray
    R_lqr: np.ndarray
    Q_1: np.ndarray
    Q_2: np.ndarray
    tau: float
    n_nodes: int
    y_o_deg: np.ndarray
    gamma_x: float | np.ndarray
    gamma_lambda: float | np.ndarray
    gamma_2: float | np.ndarray
    gamma_3: float | np.ndarray
    gamma_phi1: float | np.ndarray
    gamma_phi2: float | np.ndarray
    lambda_bounds: tuple
    lambda2_bounds: tuple
    lambda3_bounds: tuple
    phi1_bounds: tuple
    phi2_bounds: tuple
    margin_frac: float
    h: float
    duration: float
    log_every: int
    ey_cap: float
    reference: ReferenceSignal
    pilot_mode: str
    events: list
    init_lambda_hat: np.ndarray
    init_lambda2_hat: np.ndarray
    init_lambda3_hat: np.ndarray
    init_k_hat_x: np.ndarray
    init_phi1: object          # "nominal" or an (m, n_p) array
    init_phi2: object          # "zero" or an (N, m, m) array
    _gains: GainSet = field(default=None, repr=False, compare=False)

    @property
    def y_o(self):
        """Saturation limits in crad/s."""
        return self.y_o_deg * DEG_TO_CRAD

    def gains(self):
        if self._gains is None:
            self._gains = design_gains(
                self.A_n, self.plant.B_p, self.plant.C_1, self.plant.C_2,
                self.L_x, self.Q_lqr, self.R_lqr, self.Q_1, self.Q_2,
                short_period=self.short_period,
            )
        return self._gains

    def bounds(self):
        n, m = self.plant.n_p, self.plant.m

        def box(b, shape):
            lo, hi = b
            return ProjectionBounds.box(
                lo, hi, shape, margin=self.margin_frac * (hi - lo)
            )

        return {
            "lambda": box(self.lambda_bounds, (m,)),
            "lambda2": box(self.lambda2_bounds, (m,)),
            "lambda3": box(self.lambda3_bounds, (m,)),
            "phi1": box(self.phi1_bounds, (m, n)),
            "phi2": box(self.phi2_bounds, (m, m)),
        }

    def initial_values(self, gains=None):
        gains = gains or self.gains()
        n, m = self.plant.n_p, self.plant.m
        if isinstance(self.init_phi1, str):
            if self.init_phi1 != "nominal":
                raise ValidationError("init.phi1 must be 'nominal' or a matrix")
            phi1 = -gains.theta_x @ matrix_exponential(gains.A_r, self.tau)
        else:
            phi1 = as_matrix(self.init_phi1, "init.phi1", rows=m, cols=n)
        if isinstance(self.init_phi2, str):
            if self.init_phi2 != "zero":
                raise ValidationError("init.phi2 must be 'zero' or an array")
            phi2 = np.zeros((self.n_nodes, m, m))
        else:
            phi2 = np.asarray(self.init_phi2, dtype=float).reshape(
                self.n_nodes, m, m
            )
        return {
            "lambda_hat": np.asarray(self.init_lambda_hat, float).ravel(),
            "lambda2_hat": np.asarray(self.init_lambda2_hat, float).ravel(),
            "lambda3_hat": np.asarray(self.init_lambda3_hat, float).ravel(),
            "k_hat_x": as_matrix(self.init_k_hat_x, "init.k_hat_x", rows=m, cols=n),
            "phi1_hat": phi1,
            "phi2_hat": phi2,
        }

    def validate(self):
        m = self.plant.m
        if self.h <= 0.0:
            raise ValidationError("h must be positive")
        if self.duration <= 0.0:
            raise ValidationError("duration must be positive")
        if self.tau < 0.0:
            raise ValidationError("tau must be nonnegative")
        if self.n_nodes < 1:
            raise ValidationError("need at least one integral node")
        if self.log_every < 1:
            raise ValidationError("log_every must be >= 1")
        if self.ey_cap <= 0.0:
            raise ValidationError("ey_cap must be positive")
        if not 0.0 < self.margin_frac <= 0.5:
            raise ValidationError("margin_frac must lie in (0, 0.5]")
        if self.pilot_mode not in ("adaptive", "direct"):
            raise ValidationError(f"unknown pilot_mode '{self.pilot_mode}'")
        if self.tau > 0.0:
            spacing = self.tau / self.n_nodes
            ratio = spacing / self.h
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                raise ValidationError("h must divide tau/N exactly")
        if np.any(self.y_o_deg <= 0.0):
            raise ValidationError("saturation limits must be positive")
        for nm in ("lambda_bounds", "lambda2_bounds", "lambda3_bounds",
                   "phi1_bounds", "phi2_bounds"):
            lo, hi = getattr(self, nm)
            if not lo < hi:
                raise ValidationError(f"{nm}: lower must be below upper")
        for nm in ("lambda_bounds", "lambda2_bounds", "lambda3_bounds"):
            if getattr(self, nm)[0] <= 0.0:
                raise ValidationError(f"{nm}: lower bound must be positive")
        for g in ("gamma_x", "gamma_lambda", "gamma_2", "gamma_3",
                  "gamma_phi1", "gamma_phi2"):
            _rate(getattr(self, g))
        for ev in self.events:
            if not 0.0 <= ev.time <= self.duration:
                raise ValidationError("event time outside [0, duration]")
            steps = ev.time / self.h
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ValidationError("event time must fall on the step grid")
            lam = np.asarray(ev.new_lambda, dtype=float)
            if lam.size != m or np.any(lam <= 0.0) or np.any(lam > 1.0):
                raise ValidationError("event effectiveness must lie in (0, 1]")
        init = self.initial_values()
        boxes = self.bounds()
        pairs = [
            ("lambda_hat", "lambda"), ("lambda2_hat", "lambda2"),
            ("lambda3_hat", "lambda3"), ("phi1_hat", "phi1"),
            ("phi2_hat", "phi2"),
        ]
        for key, box in pairs:
            if not boxes[box].contains(init[key]):
                raise ValidationError(f"initial {key} outside its projection box")
        return self

    # ---- serialization ------------------------------------------------

    def to_dict(self):
        def mat(a):
            return np.asarray(a, dtype=float).tolist()

        def rate(v):
            a = np.asarray(v, dtype=float)
            return float(a) if a.ndim == 0 else a.tolist()

        sp = None
        if self.short_period is not None:
            a_sp, b_sp, c_sp = self.short_period
            sp = {"A_sp": mat(a_sp), "B_sp": mat(b_sp), "C_sp": mat(c_sp)}
        return {
            "name": self.name,
            "plant": {
                "A_n": mat(self.A_n),
                "A_p": mat(self.plant.A_p),
                "B_p": mat(self.plant.B_p),
                "Lambda": list(map(float, self.plant.lam_diag)),
                "C_1": mat(self.plant.C_1),
                "C_2": mat(self.plant.C_2),
            },
            "design": {
                "L_x": mat(self.L_x),
                "short_period": sp,
                "Q_lqr": mat(self.Q_lqr),
                "R_lqr": mat(self.R_lqr),
                "Q_1": mat(self.Q_1),
                "Q_2": mat(self.Q_2),
            },
            "inner": {
                "gamma_x": rate(self.gamma_x),
                "gamma_lambda": rate(self.gamma_lambda),
                "lambda_bounds": list(self.lambda_bounds),
            },
            "outer": {
                "tau": self.tau,
                "intervals": self.n_nodes,
                "y_o_deg_per_s": list(map(float, self.y_o_deg)),
                "gamma_2": rate(self.gamma_2),
                "gamma_3": rate(self.gamma_3),
                "gamma_phi1": rate(self.gamma_phi1),
                "gamma_phi2": rate(self.gamma_phi2),
                "lambda2_bounds": list(self.lambda2_bounds),
                "lambda3_bounds": list(self.lambda3_bounds),
                "phi1_bounds": list(self.phi1_bounds),
                "phi2_bounds": list(self.phi2_bounds),
                "margin_frac": self.margin_frac,
            },
            "sim": {
                "h": self.h,
                "duration": self.duration,
                "log_every": self.log_every,
                "ey_cap": self.ey_cap,
            },
            "reference": self.reference.to_dict(),
            "pilot_mode": self.pilot_mode,
            "events": [ev.to_dict() for ev in self.events],
            "init": {
                "lambda_hat": list(map(float, np.atleast_1d(self.init_lambda_hat))),
                "lambda2_hat": list(map(float, np.atleast_1d(self.init_lambda2_hat))),
                "lambda3_hat": list(map(float, np.atleast_1d(self.init_lambda3_hat))),
                "k_hat_x": mat(self.init_k_hat_x),
                "phi1": self.init_phi1 if isinstance(self.init_phi1, str)
                else mat(self.init_phi1),
                "phi2": self.init_phi2 if isinstance(self.init_phi2, str)
                else np.asarray(self.init_phi2, dtype=float).tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d):
        _expect_keys(d, {"name", "plant", "design", "inner", "outer", "sim",
                         "reference", "pilot_mode", "events", "init"}, "config")
        pd = d["plant"]
        _expect_keys(pd, {"A_n", "A_p", "B_p", "Lambda", "C_1", "C_2"}, "plant")
        plant = PlantParams(
            A_p=np.array(pd["A_p"], dtype=float),
            B_p=np.array(pd["B_p"], dtype=float),
            lam_diag=np.array(pd["Lambda"], dtype=float),
            C_1=np.array(pd["C_1"], dtype=float),
            C_2=np.array(pd["C_2"], dtype=float),
        )
        dd = d["design"]
        _expect_keys(dd, {"L_x", "short_period", "Q_lqr", "R_lqr", "Q_1", "Q_2"},
                     "design")
        sp = None
        if dd["short_period"] is not None:
            spd = dd["short_period"]
            _expect_keys(spd, {"A_sp", "B_sp", "C_sp"}, "design.short_period")
            sp = (np.array(spd["A_sp"], float), np.array(spd["B_sp"], float),
                  np.array(spd["C_sp"], float))
        ind = d["inner"]
        _expect_keys(ind, {"gamma_x", "gamma_lambda", "lambda_bounds"}, "inner")
        od = d["outer"]
        _expect_keys(od, {"tau", "intervals", "y_o_deg_per_s", "gamma_2",
                          "gamma_3", "gamma_phi1", "gamma_phi2",
                          "lambda2_bounds", "lambda3_bounds", "phi1_bounds",
                          "phi2_bounds", "margin_frac"}, "outer")
        sd = d["sim"]
        _expect_keys(sd, {"h", "duration", "log_every", "ey_cap"}, "sim")
        idd = d["init"]
        _expect_keys(idd, {"lambda_hat", "lambda2_hat", "lambda3_hat",
                           "k_hat_x", "phi1", "phi2"}, "init")
        events = []
        for ev in d["events"]:
            _expect_keys(ev, {"time", "new_lambda"}, "events[]")
            events.append(FailureEvent(float(ev["time"]),
                                       tuple(map(float, ev["new_lambda"]))))
        return cls(
            name=str(d["name"]),
            plant=plant,
            A_n=np.array(pd["A_n"], dtype=float),
            L_x=np.array(dd["L_x"], dtype=float),
            short_period=sp,
            Q_lqr=np.array(dd["Q_lqr"], float),
            R_lqr=np.array(dd["R_lqr"], float),
            Q_1=np.array(dd["Q_1"], float),
            Q_2=np.array(dd["Q_2"], float),
            tau=float(od["tau"]),
            n_nodes=int(od["intervals"]),
            y_o_deg=np.array(od["y_o_deg_per_s"], dtype=float),
            gamma_x=_rate(ind["gamma_x"]),
            gamma_lambda=_rate(ind["gamma_lambda"]),
            gamma_2=_rate(od["gamma_2"]),
            gamma_3=_rate(od["gamma_3"]),
            gamma_phi1=_rate(od["gamma_phi1"]),
            gamma_phi2=_rate(od["gamma_phi2"]),
            lambda_bounds=tuple(ind["lambda_bounds"]),
            lambda2_bounds=tuple(od["lambda2_bounds"]),
            lambda3_bounds=tuple(od["lambda3_bounds"]),
            phi1_bounds=tuple(od["phi1_bounds"]),
            phi2_bounds=tuple(od["phi2_bounds"]),
            margin_frac=float(od["margin_frac"]),
            h=float(sd["h"]),
            duration=float(sd["duration"]),
            log_every=int(sd["log_every"]),
            ey_cap=float(sd["ey_cap"]),
            reference=ReferenceSignal.from_dict(d["reference"], plant.m),
            pilot_mode=str(d["pilot_mode"]),
            events=events,
            init_lambda_hat=np.array(idd["lambda_hat"], float),
            init_lambda2_hat=np.array(idd["lambda2_hat"], float),
            init_lambda3_hat=np.array(idd["lambda3_hat"], float),
            init_k_hat_x=np.array(idd["k_hat_x"], float),
            init_phi1=idd["phi1"] if isinstance(idd["phi1"], str)
            else np.array(idd["phi1"], float),
            init_phi2=idd["phi2"] if isinstance(idd["phi2"], str)
            else np.array(idd["phi2"], float),
        )


def load_config(path):
    """Parse and validate a scenario file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    cfg = ScenarioConfig.from_dict(raw)
    cfg.validate()
    return cfg


def save_config(config, path):
    """Serialize a scenario atomically (temp file + rename)."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def apply_overrides(d, overrides):
    """Apply dotted-path key=value overrides to a config dict.

    Values parse as JSON fragments (bare words fall back to strings); the
    addressed key must already exist in the schema.  Later overrides win.
    """
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override '{item}' is not KEY=VALUE")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = d
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ValidationError(f"override path '{path}' not in schema")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ValidationError(f"override path '{path}' not in schema")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return d


def builtin_747():
    """The longitudinal cruise case study.

    Nominal matrices are the classic 747 perturbation model at 40 kft /
    774 ft/s; states are (forward speed, vertical speed, pitch rate, pitch
    angle) in (ft/s, ft/s, crad/s, crad), input is elevator deflection in
    crad.  The plant uncertainty is a matched feedback perturbation placing
    the open-loop eigenvalues at {0.1, 0.2, 0.3, 0.4}; actuator
    effectiveness drops to 0.6 at t = 35 s.
    """
    a_n = np.array([
        [-0.0030, 0.0390, 0.0000, -0.3220],
        [-0.0650, -0.3190, 7.7400, 0.0000],
        [0.0200, -0.1010, -0.4290, 0.0000],
        [0.0000, 0.0000, 1.0000, 0.0000],
    ])
    b_p = np.array([[0.0100], [-0.1800], [-1.1600], [0.0000]])
    k_unc = -place_poles_siso(a_n, b_p, [0.1, 0.2, 0.3, 0.4])
    a_p = a_n + b_p @ k_unc
    a_sp = np.array([[-0.3190, 7.7400], [-0.1010, -0.4290]])
    b_sp = np.array([[-0.1800], [-1.1600]])
    c_sp = np.array([[0.0], [1.0]])
    c_1 = np.array([[0.0], [0.0], [1.0], [0.0]])   # pitch rate
    c_2 = np.array([[0.0], [0.0], [0.0], [1.0]])   # pitch angle
    plant = PlantParams(A_p=a_p, B_p=b_p, lam_diag=np.array([1.0]),
                        C_1=c_1, C_2=c_2)
    reference = ReferenceSignal(
        segments=[
            (5.0, 20.0, [5.0]),
            (20.0, 35.0, [-5.0]),
            (35.0, 50.0, [5.0]),
        ],
        unit="crad", m=1,
    )
    return ScenarioConfig(
        name="boeing747-longitudinal-cruise",
        plant=plant,
        A_n=a_n,
        L_x=np.zeros((1, 4)),
        short_period=(a_sp, b_sp, c_sp),
        Q_lqr=np.diag([0.0, 0.0, 0.0, 3.0]),
        R_lqr=np.array([[3.0]]),
        Q_1=0.001 * np.eye(4),
        Q_2=0.001 * np.eye(4),
        tau=0.3,
        n_nodes=5,
        y_o_deg=np.array([10.0]),
        gamma_x=1.0,
        gamma_lambda=1.0,
        gamma_2=1.0,
        gamma_3=5.0,
        gamma_phi1=np.array([0.01, 0.001, 0.01, 0.01]),
        gamma_phi2=0.1,
        lambda_bounds=(0.1, 10.0),
        lambda2_bounds=(0.1, 10.0),
        lambda3_bounds=(0.1, 10.0),
        phi1_bounds=(-50.0, 50.0),
        phi2_bounds=(-50.0, 50.0),
        margin_frac=0.01,
        h=1e-3,
        duration=70.0,
        log_every=10,
        ey_cap=1e3,
        reference=reference,
        pilot_mode="adaptive",
        events=[FailureEvent(35.0, (0.6,))],
        init_lambda_hat=np.array([1.0]),
        init_lambda2_hat=np.array([1.0]),
        init_lambda3_hat=np.array([1.0]),
        init_k_hat_x=np.zeros((1, 4)),
        init_phi1="nominal",
        init_phi2="zero",
    )

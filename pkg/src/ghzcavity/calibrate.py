"""Pulse calibration: equalize the Raman detunings and photon-conditional phase rates.

All quantities are in the model's angular units (usually units of ``g``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .hamiltonians import DeviceModel, PulseSpec, effective_rate, raman_strength

EQUAL_TOL = 1e-9


class InfeasibleCalibration(ValueError):
    """No pulse settings satisfy the request; ``binding`` names the limiting constraint."""

    def __init__(self, message, binding=None, qubits=()):
        super().__init__(message)
        self.binding = binding
        self.qubits = tuple(qubits)


@dataclass(frozen=True)
class Margins:
    """Lower bounds on the separation-of-scales ratios (all dimensionless)."""

    pulse_detuning_ratio: float = 10.0   # Delta_j / Omega_j
    cavity_detuning_ratio: float = 10.0  # Delta_c,j / g_j
    raman_ratio: float = 10.0            # delta / chi_j
    cavity_stark_ratio: float = 10.0     # delta * Delta_c,j / g_j^2
    pulse_stark_ratio: float = 10.0      # delta * Delta_j / Omega_j^2

    @classmethod
    def uniform(cls, value):
        return cls(value, value, value, value, value)


@dataclass
class CalibrationResult:
    """Solved carriers and Rabi frequencies for spectators 2..n (index k = j - 2)."""

    delta: float
    lam: float
    carriers: np.ndarray
    rabi: np.ndarray
    pulse_detuning: np.ndarray
    cavity_detuning: np.ndarray
    g_j: np.ndarray

    @property
    def chi(self) -> np.ndarray:
        return raman_strength(self.rabi, self.g_j, self.pulse_detuning, self.cavity_detuning)

    @property
    def delta_j(self) -> np.ndarray:
        return self.cavity_detuning - self.pulse_detuning

    @property
    def lam_j(self) -> np.ndarray:
        return effective_rate(self.rabi, self.g_j, self.pulse_detuning, self.cavity_detuning, self.delta_j)

    @property
    def stark_floor(self) -> np.ndarray:
        return self.g_j**2 / self.cavity_detuning

    def margins(self) -> dict:
        with np.errstate(divide="ignore"):
            return {
                "pulse_detuning_ratio": self.pulse_detuning / self.rabi,
                "cavity_detuning_ratio": self.cavity_detuning / self.g_j,
                "raman_ratio": self.delta / self.chi,
                "cavity_stark_ratio": self.delta * self.cavity_detuning / self.g_j**2,
                "pulse_stark_ratio": self.delta * self.pulse_detuning / self.rabi**2,
            }

    def pulses(self, window=(0.0, math.inf)) -> list:
        return [
            PulseSpec(qubit=k + 2, transition=(2, 3), rabi=float(r), carrier=float(c), window=window)
            for k, (r, c) in enumerate(zip(self.rabi, self.carriers))
        ]

    def to_dict(self) -> dict:
        out = {
            "delta": self.delta,
            "lambda": self.lam,
            "qubits": [],
        }
        margins = self.margins()
        for k in range(len(self.rabi)):
            out["qubits"].append({
                "qubit": k + 2,
                "carrier": float(self.carriers[k]),
                "rabi": float(self.rabi[k]),
                "pulse_detuning": float(self.pulse_detuning[k]),
                "cavity_detuning": float(self.cavity_detuning[k]),
                "delta_j": float(self.delta_j[k]),
                "chi": float(self.chi[k]),
                "lambda_j": float(self.lam_j[k]),
                "margins": {name: float(v[k]) for name, v in margins.items()},
            })
        return out


def solve_carriers(model: DeviceModel, delta: float) -> np.ndarray:
    """Pulse carriers giving every spectator the detuning ``delta`` exactly."""
    if not delta > 0:
        raise InfeasibleCalibration(f"delta must be > 0, got {delta}", binding="delta")
    dc = model.cavity_detunings
    bad = np.flatnonzero(dc - delta <= 0)
    if bad.size:
        raise InfeasibleCalibration(
            f"delta = {delta:g} leaves a nonpositive pulse detuning for qubits {[int(k) + 2 for k in bad]}",
            binding="pulse_detuning", qubits=[int(k) + 2 for k in bad],
        )
    omega_32 = np.array([q.omega_32 for q in model.spectators])
    return omega_32 - dc + delta


def solve_rabi(model: DeviceModel, delta: float, lam: float) -> np.ndarray:
    """Rabi frequencies giving every spectator the phase rate ``lam``."""
    dc = model.cavity_detunings
    gj = model.g_j
    dp = dc - delta
    if np.any(dp <= 0):
        raise InfeasibleCalibration("pulse detuning must be positive", binding="pulse_detuning")
    floor = gj**2 / dc
    bad = np.flatnonzero(lam <= floor)
    if bad.size:
        raise InfeasibleCalibration(
            f"lambda = {lam:g} is not above the cavity Stark floor g_j^2/Delta_c,j of qubits {[int(k) + 2 for k in bad]}",
            binding="stark_floor", qubits=[int(k) + 2 for k in bad],
        )
    return np.sqrt((lam - floor) * 4 * delta) / (gj * (1 / dp + 1 / dc))


def calibrate(model: DeviceModel, delta: float, lam: float) -> CalibrationResult:
    """Explicit calibration for a chosen common ``delta`` and ``lam``."""
    carriers = solve_carriers(model, delta)
    rabi = solve_rabi(model, delta, lam)
    dc = model.cavity_detunings
    omega_32 = np.array([q.omega_32 for q in model.spectators])
    return CalibrationResult(
        delta=float(delta), lam=float(lam), carriers=carriers, rabi=rabi,
        pulse_detuning=omega_32 - carriers, cavity_detuning=dc, g_j=model.g_j,
    )


def _max_rabi(gj, dc, delta, m: Margins):
    """Largest Rabi frequency per spectator allowed by the drive-dependent margins."""
    dp = dc - delta
    lim_pulse = dp / m.pulse_detuning_ratio
    lim_raman = 2 * delta / (m.raman_ratio * gj * (1 / dp + 1 / dc))
    lim_stark = np.sqrt(delta * dp / m.pulse_stark_ratio)
    stacked = np.vstack([lim_pulse, lim_raman, lim_stark])
    return stacked.min(axis=0), stacked.argmin(axis=0)


_RABI_LIMITS = ("pulse_detuning_ratio", "raman_ratio", "pulse_stark_ratio")


def feasibility_search(model: DeviceModel, margins: Margins | None = None, n_grid: int = 400) -> CalibrationResult:
    """Largest common ``lambda`` compatible with every margin.

    Scans ``delta`` on a uniform grid over its admissible interval, keeps the
    best point (ties broken towards smaller ``delta``), then polishes it with
    a bounded scalar search inside the neighbouring grid cells.
    """
    m = margins or Margins()
    gj, dc = model.g_j, model.cavity_detunings
    ratio = dc / gj
    bad = np.flatnonzero(ratio < m.cavity_detuning_ratio)
    if bad.size:
        raise InfeasibleCalibration(
            f"cavity detuning ratio Delta_c,j/g_j below {m.cavity_detuning_ratio:g} for qubits {[int(k) + 2 for k in bad]}",
            binding="cavity_detuning_ratio", qubits=[int(k) + 2 for k in bad],
        )
    lo = float(np.max(m.cavity_stark_ratio * gj**2 / dc))
    hi = float(np.min(dc))
    if not lo < hi:
        raise InfeasibleCalibration(
            f"cavity Stark margin needs delta >= {lo:g} but delta must stay below min Delta_c,j = {hi:g}",
            binding="cavity_stark_ratio",
        )
    floor_max = float(np.max(gj**2 / dc))

    def common_rate(delta):
        rabi, _ = _max_rabi(gj, dc, delta, m)
        return float(np.min(effective_rate(rabi, gj, dc - delta, dc, delta)))

    # open interval: delta == hi would zero a pulse detuning
    grid = lo + (hi - lo) * np.arange(n_grid) / n_grid
    values = np.array([common_rate(d) for d in grid])
    best = int(np.flatnonzero(values == values.max())[0])
    a = grid[max(best - 1, 0)]
    b = grid[best + 1] if best + 1 < n_grid else hi - 1e-9 * (hi - lo)
    res = minimize_scalar(lambda d: -common_rate(d), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12 * max(hi, 1.0)})
    delta, lam = grid[best], values[best]
    if res.success and -res.fun > lam:
        delta, lam = float(res.x), float(-res.fun)
    if not lam > floor_max:
        rabi, which = _max_rabi(gj, dc, delta, m)
        k = int(np.argmin(effective_rate(rabi, gj, dc - delta, dc, delta)))
        raise InfeasibleCalibration(
            f"best common rate {lam:g} does not exceed the largest Stark floor {floor_max:g}; "
            f"qubit {k + 2} limited by {_RABI_LIMITS[which[k]]}",
            binding=_RABI_LIMITS[which[k]], qubits=[k + 2],
        )
    return calibrate(model, delta, lam)


# -- condition audit ---------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    warn: float = 10.0
    fail: float = 3.0

    def flag(self, ratio: float) -> str:
        if ratio >= self.warn:
            return "pass"
        return "warn" if ratio >= self.fail else "fail"


def occupation_probability(pulse_ratio, cavity_ratio):
    """Time-averaged level-|3> occupation ``2/(4 + r_p^2) + 2/(4 + r_c^2)``."""
    pulse_ratio = np.asarray(pulse_ratio, float)
    cavity_ratio = np.asarray(cavity_ratio, float)
    return 2 / (4 + pulse_ratio**2) + 2 / (4 + cavity_ratio**2)


@dataclass
class ConditionReport:
    occupation: np.ndarray            # p_j per spectator
    phase_error: np.ndarray           # phi_j per spectator (rad)
    ratios: dict = field(default_factory=dict)
    exposures: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    thresholds: Thresholds = field(default_factory=Thresholds)

    @property
    def worst_flag(self) -> str:
        order = {"pass": 0, "warn": 1, "fail": 2}
        return max(self.flags.values(), key=order.__getitem__, default="pass")

    def to_dict(self) -> dict:
        return {
            "occupation_p": [float(x) for x in self.occupation],
            "phase_error_phi": [float(x) for x in self.phase_error],
            "ratios": {k: float(v) for k, v in self.ratios.items()},
            "exposures": {k: float(v) for k, v in self.exposures.items()},
            "flags": dict(self.flags),
            "thresholds": asdict(self.thresholds),
        }


def condition_report(model: DeviceModel, calib: CalibrationResult, schedule, thresholds: Thresholds | None = None):
    """Audit every separation-of-scales condition for a built schedule.

    Each "much less than" condition is reported as the ratio of the large to
    the small side and flagged against ``thresholds``.
    """
    th = thresholds or Thresholds()
    d = schedule.durations
    with np.errstate(divide="ignore"):
        pulse_ratio = calib.pulse_detuning / calib.rabi
    cav_ratio = calib.cavity_detuning / calib.g_j
    p = occupation_probability(pulse_ratio, cav_ratio)
    phi = calib.g_j**2 * (d["1b"] + d["1c"]) / calib.cavity_detuning
    margins = calib.margins()

    exposures = {
        "tau_gamma_1r": schedule.tau * max([model.gamma_1r] + [q.gamma_1r for q in model.spectators]),
        "tau_gamma_1p": schedule.tau * max([model.gamma_1p] + [q.gamma_1p for q in model.spectators]),
        "t1ab_gamma_2r": (d["1a"] + d["1b"]) * model.gamma_2r,
        "t1ab_gamma_2p": (d["1a"] + d["1b"]) * model.gamma_2p,
        "tau_kappa": schedule.tau * model.kappa,
    }
    ratios = {name: float(np.min(v)) for name, v in margins.items()}
    ratios["t1b_over_t1a"] = d["1b"] / d["1a"]
    ratios["t1b_over_t1c"] = d["1b"] / d["1c"]
    with np.errstate(divide="ignore"):
        ratios["inverse_phase_error"] = float(np.min(1 / phi))
        for k, v in exposures.items():
            ratios["inverse_" + k] = math.inf if v == 0 else 1 / v
    flags = {k: th.flag(v) for k, v in ratios.items()}
    return ConditionReport(p, phi, ratios, exposures, flags, th)

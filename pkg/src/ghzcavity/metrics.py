"""Protocol success measures: GHZ fidelity (simulated and analytic), leakage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hilbert import BasisError, StateVector, overlap
from .protocol import ProtocolRun, Schedule, apply_qubit1_cavity, closed_form_step_maps, ideal_ghz, run_protocol


def fidelity_numeric(psi: StateVector, target: StateVector | None = None) -> float:
    """``|<GHZ (x) 0_c | psi>|^2``; the state is not renormalized."""
    target = ideal_ghz(psi.basis) if target is None else target
    if target.basis != psi.basis:
        raise BasisError("state and target live on different bases")
    return abs(overlap(psi, target)) ** 2


def fidelity_analytic(phases) -> float:
    """GHZ fidelity when each spectator ``j`` picks up ``exp(i phi_j)`` on |1>
    in the photon branch during both step (i) and step (iii).

    ``F = |1 + prod_j (1 + exp(2 i phi_j)) / 2|^2 / 4``, i.e. the product of the
    two complex-conjugate brackets.
    """
    phases = np.asarray(phases, dtype=float)
    prod = np.prod((1 + np.exp(2j * phases)) / 2) if phases.size else 1.0
    return float(abs(1 + prod) ** 2 / 4)


def state_error(a: StateVector, b: StateVector) -> float:
    """Global-phase-invariant distance ``sqrt(1 - |<a|b>|^2)`` between normalized states."""
    ov = abs(overlap(a, b)) / (a.norm() * b.norm())
    return float(np.sqrt(max(0.0, 1.0 - ov**2)))


@dataclass
class LeakageReport:
    photon_ge2: float
    level3: list
    level2: list
    level0_drift: list
    qubit1_level2_outside_windows: float

    def to_dict(self):
        return {
            "photon_ge2_max": self.photon_ge2,
            "level3_max": list(self.level3),
            "level2_max": list(self.level2),
            "level0_drift_max": list(self.level0_drift),
            "qubit1_level2_max_outside_1a1b_3b3a": self.qubit1_level2_outside_windows,
        }


def leakage_report(run: ProtocolRun) -> LeakageReport:
    """Maxima over all trace samples of the populations the protocol should not touch.

    ``level3``/``level2``/``level0_drift`` are per spectator (qubits 2..n);
    ``level0_drift`` is the largest deviation of the |0> population from its
    initial value.
    """
    tr = run.trace
    basis = run.final.basis
    photon = np.zeros(len(tr.times))
    for k in range(2, basis.cavity_dim):
        photon += tr.column(f"cav.n{k}")
    lvl3, lvl2, drift = [], [], []
    for j in range(2, basis.n_qubits + 1):
        lvl3.append(tr.max(f"q{j}.L3"))
        lvl2.append(tr.max(f"q{j}.L2"))
        p0 = tr.column(f"q{j}.L0")
        drift.append(float(np.max(np.abs(p0 - p0[0]))))
    q12 = tr.column("q1.L2")
    outside = [v for seg, v in zip(tr.segments, q12) if seg in ("1c", "2", "3c")]
    return LeakageReport(
        photon_ge2=float(np.max(photon)),
        level3=lvl3,
        level2=lvl2,
        level0_drift=drift,
        qubit1_level2_outside_windows=float(max(outside, default=0.0)),
    )


@dataclass
class FidelityReport:
    """Numeric and analytic fidelity plus diagnostics for one protocol run."""

    f_numeric: float
    f_analytic: float
    phases: list
    cavity_residual: float
    leakage: LeakageReport
    norm_drift: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "F_numeric": self.f_numeric,
            "F_analytic": self.f_analytic,
            "F_difference": abs(self.f_numeric - self.f_analytic),
            "phi": list(self.phases),
            "cavity_residual_photon_population": self.cavity_residual,
            "leakage": self.leakage.to_dict(),
            "norm_drift_per_segment": dict(self.norm_drift),
        }


def fidelity_report(run: ProtocolRun, phases) -> FidelityReport:
    """Assemble a :class:`FidelityReport`; ``phases`` are the calibrated ``phi_j``."""
    final = run.final
    probs = final.probabilities()
    cav = probs.sum(axis=tuple(range(final.basis.n_sites - 1)))
    drift, prev = {}, 1.0
    start_norm = run.trace.values[0][-1]
    prev = start_norm
    for label, snap in run.snapshots.items():
        n = snap.norm()
        drift[label] = abs(n - prev)
        prev = n
    return FidelityReport(
        f_numeric=fidelity_numeric(final),
        f_analytic=fidelity_analytic(phases),
        phases=[float(p) for p in phases],
        cavity_residual=float(1.0 - cav[0] / max(probs.sum(), 1e-300)),
        leakage=leakage_report(run),
        norm_drift=drift,
    )


def conditional_phases(schedule: Schedule, mode: str = "full", cfg=None, options=None) -> np.ndarray:
    """Photon-conditional phase on |1>_j accumulated over step (ii), per spectator.

    For spectator ``j`` (others in |0>) and qubit 1 prepared by the exact
    step-(i) map from |b>_1, ``A_bx`` is the return amplitude of the input
    with ``b`` photons and spectator level ``x``.  The result
    ``arg A_11 - arg A_10 - arg A_01 + arg A_00`` is wrapped to ``[0, 2 pi)``;
    the ideal value is ``lambda t_2 = pi``.
    """
    basis = schedule.model.basis()
    n = basis.n_qubits
    step_i = closed_form_step_maps("i", basis.n_max)
    out = []
    for j in range(2, n + 1):
        args = {}
        for b in (0, 1):
            for x in (0, 1):
                levels = [b] + [0] * (n - 1) + [0]
                levels[j - 1] = x
                psi = np.zeros(basis.dim, dtype=complex)
                psi[basis.index(levels)] = 1.0
                psi = apply_qubit1_cavity(psi, basis, step_i)
                run = run_protocol(schedule, StateVector(psi, basis), mode, cfg, samples_per_segment=1,
                                   options=options, segments=("2",))
                args[b, x] = np.angle(np.vdot(psi, run.final.amplitudes))
        phase = args[1, 1] - args[1, 0] - args[0, 1] + args[0, 0]
        out.append(float(np.mod(phase, 2 * np.pi)))
    return np.array(out)


def phase_error(schedule: Schedule, cfg=None, options=None) -> float:
    """Largest relative deviation of the full-model conditional phase from the effective one."""
    full = conditional_phases(schedule, "full", cfg, options)
    eff = conditional_phases(schedule, "effective", cfg, options)
    return float(np.max(np.abs(full - eff) / np.abs(eff)))

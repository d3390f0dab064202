"""Three-step GHZ preparation: schedule construction and execution.

Step (i) moves qubit 1's |1> population into a cavity photon, step (ii) imprints
a conditional pi phase on every spectator in |1> while the photon is present,
and step (iii) undoes step (i), returning the cavity to vacuum.

Three execution modes are supported:

``closed-form``
    exact rotation / swap / phase maps, no couplings beyond the ideal ones;
``effective``
    closed-form steps (i)/(iii), step (ii) propagated under the reduced
    photon-conditional phase Hamiltonian;
``full``
    every segment propagated under the complete interaction-picture
    Hamiltonian (qubit-1 pulses and cavity coupling, spectator dispersive
    coupling, Raman pulses), evaluated in an exact static rotating frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import hamiltonians as ham
from .calibrate import CalibrationResult
from .evolve import (
    PropagationError,
    PropagatorConfig,
    propagate_static_sampled,
    rk4_integrate,
    max_rk4_step,
)
from .hilbert import CompositeBasis, StateVector, initial_product_state, product_state

MODES = ("closed-form", "effective", "full")
SEGMENT_ORDER = ("1a", "1b", "1c", "2", "3c", "3b", "3a")


@dataclass(frozen=True)
class Segment:
    label: str
    duration: float
    start: float
    pulses: tuple = ()

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def step(self) -> str:
        return self.label[0]


@dataclass
class Schedule:
    """Ordered segments of the protocol; times in the model's inverse units."""

    segments: tuple
    model: ham.DeviceModel
    calibration: CalibrationResult
    rabi_r: float
    rabi_r_tilde: float

    @property
    def tau(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    @property
    def durations(self) -> dict:
        return {lab: self.segment(lab).duration for lab in ("1a", "1b", "1c", "2")}

    @property
    def lam(self) -> float:
        return self.calibration.lam

    def segment(self, label: str) -> Segment:
        for s in self.segments:
            if s.label == label:
                return s
        raise KeyError(label)


class ScheduleError(ValueError):
    pass


def build_ghz_schedule(model: ham.DeviceModel, calib: CalibrationResult, rabi_r: float, rabi_r_tilde: float) -> Schedule:
    """Seven square-pulse segments 1a, 1b, 1c, 2, 3c, 3b, 3a."""
    if calib is None:
        raise ScheduleError("a calibration is required")
    if not (rabi_r > 0 and rabi_r_tilde > 0):
        raise ScheduleError("Rabi frequencies of qubit-1 pulses must be positive")
    if len(calib.rabi) != len(model.spectators):
        raise ScheduleError("calibration does not match the number of spectators")
    if np.ptp(calib.lam_j) > 1e-9 * model.g or np.ptp(calib.delta_j) > 1e-9 * model.g:
        raise ScheduleError("calibration does not equalize delta_j and lambda_j")
    g = model.g
    t1a = math.pi / (2 * rabi_r)
    t1b = math.pi / (2 * g)
    t1c = math.pi / (2 * rabi_r_tilde)
    t2 = math.pi / calib.lam
    plan = [
        ("1a", t1a, [((1, 2), rabi_r, -math.pi / 2)]),
        ("1b", t1b, []),
        ("1c", t1c, [((0, 1), rabi_r_tilde, -math.pi / 2)]),
        ("2", t2, None),
        ("3c", t1c, [((0, 1), rabi_r_tilde, math.pi / 2)]),
        ("3b", t1b, []),
        ("3a", t1a, [((1, 2), rabi_r, math.pi / 2)]),
    ]
    segments, start = [], 0.0
    for label, dur, spec in plan:
        window = (start, start + dur)
        if spec is None:
            pulses = tuple(calib.pulses(window))
        else:
            pulses = tuple(ham.PulseSpec(1, tr, om, phase=ph, window=window) for tr, om, ph in spec)
        segments.append(Segment(label, dur, start, pulses))
        start += dur
    return Schedule(tuple(segments), model, calib, rabi_r, rabi_r_tilde)


# -- reference states and closed-form maps -------------------------------------


def ideal_ghz(basis: CompositeBasis) -> StateVector:
    """``(|0>_1 |+>...|+> - |1>_1 |->...|->) / sqrt(2)`` with the cavity in vacuum."""
    s = 1 / math.sqrt(2)

    def local(d, vec):
        v = np.zeros(d, dtype=complex)
        v[: len(vec)] = vec
        return v

    vac = local(basis.cavity_dim, [1.0])
    n = basis.n_qubits
    plus = [local(4, [s, s])] * (n - 1)
    minus = [local(4, [s, -s])] * (n - 1)
    a = product_state(basis, [local(3, [1.0])] + plus + [vac]).amplitudes
    b = product_state(basis, [local(3, [0.0, 1.0])] + minus + [vac]).amplitudes
    return StateVector(s * (a - b), basis)


def pulse_map(rabi, phase, transition, t) -> np.ndarray:
    """3x3 rotation of qubit 1 after a resonant pulse of duration ``t``."""
    lo, hi = transition
    c, s = math.cos(rabi * t), math.sin(rabi * t)
    u = np.eye(3, dtype=complex)
    u[lo, lo] = c
    u[hi, hi] = c
    u[hi, lo] = -1j * np.exp(-1j * phase) * s
    u[lo, hi] = -1j * np.exp(1j * phase) * s
    return u


def jc_map(g, t, cavity_dim) -> np.ndarray:
    """Resonant swap on qubit 1 (x) cavity, index ``level * cavity_dim + photons``."""
    d = 3 * cavity_dim
    u = np.eye(d, dtype=complex)
    for n in range(cavity_dim - 1):
        a = 2 * cavity_dim + n        # |2>|n>
        b = 1 * cavity_dim + n + 1    # |1>|n+1>
        w = g * math.sqrt(n + 1) * t
        u[a, a] = u[b, b] = math.cos(w)
        u[a, b] = u[b, a] = -1j * math.sin(w)
    return u


def closed_form_step_maps(step: str, n_max: int = 1) -> sp.csr_matrix:
    """Exact unitary of step (i) or (iii) on qubit 1 (x) cavity.

    Durations are quarter periods, so the maps do not depend on the rates.
    Index convention: ``level * (n_max + 1) + photons``.
    """
    cd = n_max + 1
    eye_c = np.eye(cd)
    quarter = math.pi / 2
    p12m = np.kron(pulse_map(1.0, -math.pi / 2, (1, 2), quarter), eye_c)
    p01m = np.kron(pulse_map(1.0, -math.pi / 2, (0, 1), quarter), eye_c)
    p12p = np.kron(pulse_map(1.0, math.pi / 2, (1, 2), quarter), eye_c)
    p01p = np.kron(pulse_map(1.0, math.pi / 2, (0, 1), quarter), eye_c)
    jc = jc_map(1.0, quarter, cd)
    if step in ("i", "1"):
        u = p01m @ jc @ p12m
    elif step in ("iii", "3"):
        u = p12p @ jc @ p01p
    else:
        raise ValueError(f"unknown step {step!r}; expected 'i' or 'iii'")
    u[np.abs(u) < 1e-15] = 0.0
    return sp.csr_matrix(u)


def apply_qubit1_cavity(amplitudes, basis: CompositeBasis, u) -> np.ndarray:
    """Apply a (3 * cavity_dim)-dimensional operator acting on qubit 1 and the cavity."""
    dims = basis.dims
    cd = basis.cavity_dim
    psi = amplitudes.reshape(dims)
    psi = np.moveaxis(psi, -1, 1)                      # (3, cd, spectators...)
    flat = psi.reshape(3 * cd, -1)
    flat = np.asarray(u @ flat)
    psi = flat.reshape((3, cd) + dims[1:-1])
    return np.moveaxis(psi, 1, -1).reshape(-1)


def apply_qubit1(amplitudes, basis: CompositeBasis, u) -> np.ndarray:
    psi = amplitudes.reshape(3, -1)
    return (u @ psi).reshape(-1)


# -- traces ----------------------------------------------------------------


def observable_labels(basis: CompositeBasis) -> list:
    labels = []
    for j, d in enumerate(basis.levels_per_site, start=1):
        labels += [f"q{j}.L{k}" for k in range(d)]
    labels += [f"cav.n{k}" for k in range(basis.cavity_dim)]
    labels.append("norm")
    return labels


def observables(amplitudes, basis: CompositeBasis) -> np.ndarray:
    probs = (np.abs(amplitudes) ** 2).reshape(basis.dims)
    vals = []
    for site in range(basis.n_sites):
        axes = tuple(a for a in range(basis.n_sites) if a != site)
        vals.append(probs.sum(axis=axes))
    vals.append([math.sqrt(probs.sum())])
    return np.concatenate(vals)


@dataclass
class Trace:
    """Population time series sampled inside every segment."""

    labels: list
    segments: list = field(default_factory=list)
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def record(self, segment: str, t: float, amplitudes, basis):
        self.segments.append(segment)
        self.times.append(float(t))
        self.values.append(observables(amplitudes, basis))

    def column(self, label: str) -> np.ndarray:
        k = self.labels.index(label)
        return np.array([v[k] for v in self.values])

    def max(self, label: str) -> float:
        return float(np.max(self.column(label)))

    def rows(self):
        for seg, t, vals in zip(self.segments, self.times, self.values):
            for lab, v in zip(self.labels, vals):
                yield seg, t, lab, float(v)


@dataclass
class ProtocolRun:
    final: StateVector
    trace: Trace
    snapshots: dict
    mode: str
    schedule: Schedule


@dataclass(frozen=True)
class CouplingOptions:
    """Which non-ideal couplings stay on in full mode.

    ``spectator_coupling`` only affects segments outside step (ii); the Raman
    step needs the spectator cavity terms by construction.
    """

    jc_during_pulses: bool = False
    jc_during_step2: bool = True
    spectator_coupling: bool = True


# -- segment Hamiltonians --------------------------------------------------------


def full_segment_hamiltonian(schedule: Schedule, seg: Segment, basis, options: CouplingOptions):
    """Complete interaction-picture Hamiltonian of one segment."""
    model = schedule.model
    if seg.label == "2":
        return ham.h_raman_full(model, list(seg.pulses), basis, include_jc=options.jc_during_step2)
    if options.spectator_coupling:
        h = ham.h_raman_full(model, None, basis)
    else:
        h = ham.TimeDependentHamiltonian(basis, sp.csr_matrix((basis.dim, basis.dim), dtype=complex))
    static = h.static
    if seg.pulses:
        for p in seg.pulses:
            static = static + ham.h_pulse_resonant(p.rabi, p.phase, p.transition, 1, basis)
        if options.jc_during_pulses:
            static = static + ham.h_jc_resonant(model.g, basis)
    else:
        static = static + ham.h_jc_resonant(model.g, basis)
    return ham.TimeDependentHamiltonian(basis, static, h.terms)


def protocol_frame(schedule: Schedule, basis) -> ham.FrameShift:
    """Rotating frame that makes every full-mode segment static."""
    h2 = ham.h_raman_full(schedule.model, list(schedule.segment("2").pulses), basis, include_jc=True)
    return ham.rotating_frame_static(h2)[1]


def ideal_segment_hamiltonian(schedule: Schedule, seg: Segment, basis) -> sp.csr_matrix:
    """Static Hamiltonian whose exponential is the segment's closed-form map."""
    if seg.label == "2":
        return ham.h_photon_phase(schedule.calibration.lam_j, basis)
    if seg.pulses:
        h = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
        for p in seg.pulses:
            h = h + ham.h_pulse_resonant(p.rabi, p.phase, p.transition, 1, basis)
        return h
    return ham.h_jc_resonant(schedule.model.g, basis)


def segment_hamiltonians(schedule: Schedule, basis, mode: str, options: CouplingOptions | None = None):
    """Static segment Hamiltonians and the frame shift they live in.

    ``closed-form`` / ``effective`` give the ideal generators (zero frame);
    ``full`` gives the complete Hamiltonians in the protocol rotating frame.
    """
    options = options or CouplingOptions()
    if mode == "full":
        frame = protocol_frame(schedule, basis)
        d = sp.diags(frame.diagonal.astype(complex), format="csr")
        hs = [(full_segment_hamiltonian(schedule, s, basis, options).at(0.0) - d).tocsr() for s in schedule.segments]
        return hs, frame
    if mode in ("closed-form", "effective"):
        hs = [ideal_segment_hamiltonian(schedule, s, basis) for s in schedule.segments]
        return hs, ham.FrameShift(np.zeros(basis.dim))
    raise ValueError(f"unknown mode {mode!r}")


# -- execution -------------------------------------------------------------------


def _closed_form_map(schedule: Schedule, seg: Segment, basis, amplitudes, s):
    model = schedule.model
    if seg.label == "2":
        h = ham.h_photon_phase(schedule.calibration.lam_j, basis)
        return np.exp(-1j * h.diagonal() * s) * amplitudes
    if seg.pulses:
        u = np.eye(3, dtype=complex)
        for p in seg.pulses:
            u = pulse_map(p.rabi, p.phase, p.transition, s) @ u
        return apply_qubit1(amplitudes, basis, u)
    return apply_qubit1_cavity(amplitudes, basis, jc_map(model.g, s, basis.cavity_dim))


def _sample_times(duration, n):
    return [duration * (k + 1) / n for k in range(n)]


def run_protocol(schedule: Schedule, psi0: StateVector | None = None, mode: str = "closed-form",
                 cfg: PropagatorConfig | None = None, samples_per_segment: int = 10,
                 options: CouplingOptions | None = None, segments=None) -> ProtocolRun:
    """Execute the schedule and record populations inside every segment.

    ``segments`` optionally restricts execution to a subset of segment labels
    (in schedule order), e.g. ``("1a", "1b", "1c")`` for step (i) alone.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    cfg = cfg or PropagatorConfig()
    options = options or CouplingOptions()
    basis = schedule.model.basis() if psi0 is None else psi0.basis
    psi0 = psi0 or initial_product_state(basis)
    trace = Trace(observable_labels(basis))
    trace.record("start", 0.0, psi0.amplitudes, basis)
    snapshots = {}
    amps = psi0.amplitudes.copy()
    wanted = [s for s in schedule.segments if segments is None or s.label in segments]

    if mode == "full" and cfg.method == "timedep-rk4":
        for seg in wanted:
            h = full_segment_hamiltonian(schedule, seg, basis, options)
            step = min(cfg.time_step, max_rk4_step(h))
            t_prev = seg.start
            for s in _sample_times(seg.duration, samples_per_segment):
                t = seg.start + s
                amps = rk4_integrate(h, amps, t_prev, t, max(1, math.ceil((t - t_prev) / step)))
                t_prev = t
                trace.record(seg.label, t, amps, basis)
            snapshots[seg.label] = StateVector(amps.copy(), basis)
        return ProtocolRun(StateVector(amps, basis), trace, snapshots, mode, schedule)

    if mode == "full":
        hs, frame = segment_hamiltonians(schedule, basis, mode, options)
        hmap = dict(zip([s.label for s in schedule.segments], hs))
        t0 = wanted[0].start if wanted else 0.0
        amps = frame.to_frame(amps, t0)
    for seg in wanted:
        times = _sample_times(seg.duration, samples_per_segment)
        if mode == "closed-form" or (mode == "effective" and seg.label != "2"):
            states = [_closed_form_map(schedule, seg, basis, amps, s) for s in times]
        elif mode == "effective":
            h = ham.h_eff_reduced(schedule.model, list(seg.pulses), basis)
            states = propagate_static_sampled(h, amps, seg.duration, times, cfg)
        else:
            try:
                states = propagate_static_sampled(hmap[seg.label], amps, seg.duration, times, cfg)
            except PropagationError as exc:
                raise PropagationError(f"segment {seg.label}: {exc}") from exc
        for s, st in zip(times, states):
            trace.record(seg.label, seg.start + s, st, basis)
        amps = states[-1]
        lab = frame.to_lab(amps, seg.end) if mode == "full" else amps
        snapshots[seg.label] = StateVector(lab.copy(), basis)
    final = snapshots[wanted[-1].label] if wanted else StateVector(amps, basis)
    return ProtocolRun(final, trace, snapshots, mode, schedule)


def step_one_map_error(schedule: Schedule, cfg: PropagatorConfig | None = None,
                       options: CouplingOptions | None = None) -> float:
    """Largest deviation of full-model step (i) from its exact map.

    Inputs are ``|0>_1|0>_c`` and ``|1>_1|0>_c`` with all spectators in |0>,
    so only qubit 1 and the cavity take part.
    """
    basis = schedule.model.basis()
    n = basis.n_qubits
    ideal = closed_form_step_maps("i", basis.n_max)
    err = 0.0
    for lvl in (0, 1):
        levels = [lvl] + [0] * (n - 1) + [0]
        psi = np.zeros(basis.dim, dtype=complex)
        psi[basis.index(levels)] = 1.0
        run = run_protocol(schedule, StateVector(psi, basis), "full", cfg, samples_per_segment=1,
                           options=options, segments=("1a", "1b", "1c"))
        want = apply_qubit1_cavity(psi, basis, ideal)
        err = max(err, float(np.linalg.norm(run.final.amplitudes - want)))
    return err

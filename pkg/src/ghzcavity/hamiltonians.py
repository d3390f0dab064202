"""Interaction-picture Hamiltonians for the qubit/cavity system (hbar = 1).

Every builder returns operators on a :class:`~ghzcavity.hilbert.CompositeBasis`.
Time-dependent Hamiltonians are stored in monochromatic form,

    H(t) = H_static + sum_k [exp(-i w_k t) A_k + h.c.],

which is exactly the structure of the Raman-coupled Hamiltonian and of its
adiabatically-eliminated counterpart, and which lets :func:`rotating_frame_static`
remove the time dependence without approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    CompositeBasis,
    destroy,
    embed,
    embed_product,
    ket_bra,
    number,
    projector,
)

DELTA_EQUAL_TOL = 1e-9

#: Transitions that may be driven, keyed by whether the qubit is qubit 1.
ALLOWED_TRANSITIONS = {True: {(1, 2), (0, 1)}, False: {(2, 3)}}


class ModelError(ValueError):
    """Inconsistent device parameters, pulses or regime."""


class NonMonochromaticError(ModelError):
    """A time-dependent Hamiltonian cannot be made static by a diagonal frame."""


# -- device description ----------------------------------------------------


@dataclass(frozen=True)
class SpectatorQubit:
    """Four-level qubit ``j >= 2``; its |1>-|3> transition couples to the cavity."""

    g: float
    omega_21: float
    omega_32: float
    omega_10: float = 0.0
    gamma_1r: float = 0.0
    gamma_1p: float = 0.0

    @property
    def omega_31(self) -> float:
        return self.omega_32 + self.omega_21


@dataclass(frozen=True)
class DeviceModel:
    """Device parameters in consistent angular units (typically units of ``g``).

    ``spectators`` holds qubits 2..n in order.  The cavity decay rate follows
    from the loaded quality factor, ``kappa = omega_c / Q``.
    """

    g: float
    omega_c: float
    spectators: tuple
    omega_10: float = 0.0
    omega_21: float | None = None
    gamma_1r: float = 0.0
    gamma_1p: float = 0.0
    gamma_2r: float = 0.0
    gamma_2p: float = 0.0
    quality_factor: float = math.inf
    n_max: int = 2

    def __post_init__(self):
        object.__setattr__(self, "spectators", tuple(self.spectators))
        if self.omega_21 is None:
            object.__setattr__(self, "omega_21", self.omega_c)
        if not self.spectators:
            raise ModelError("at least one spectator qubit (n >= 2) is required")
        if self.g <= 0 or self.omega_c <= 0:
            raise ModelError("g and omega_c must be strictly positive")
        if self.quality_factor <= 0:
            raise ModelError("quality factor must be positive")
        rates = [self.gamma_1r, self.gamma_1p, self.gamma_2r, self.gamma_2p]
        for k, q in enumerate(self.spectators, start=2):
            if q.g <= 0 or q.omega_21 <= 0 or q.omega_32 <= 0:
                raise ModelError(f"qubit {k}: couplings and frequencies must be strictly positive")
            if q.omega_31 - self.omega_c <= 0:
                raise ModelError(
                    f"qubit {k}: cavity detuning omega_31 - omega_c = {q.omega_31 - self.omega_c:g} must be > 0"
                )
            rates += [q.gamma_1r, q.gamma_1p]
        if min(rates) < 0:
            raise ModelError("decoherence rates must be nonnegative")

    @classmethod
    def from_detunings(cls, g_j, cavity_detunings, g=1.0, omega_c=20.0, **kwargs):
        """Build a model from spectator couplings and cavity detunings ``omega_31 - omega_c``.

        The |1>-|2> and |2>-|3> spacings split ``omega_31`` evenly; only the
        detunings enter the interaction-picture dynamics.
        """
        g_j = np.broadcast_to(np.asarray(g_j, float), np.shape(cavity_detunings))
        spectators = []
        for gj, dc in zip(g_j, np.asarray(cavity_detunings, float)):
            w31 = omega_c + dc
            spectators.append(SpectatorQubit(g=float(gj), omega_21=0.5 * w31, omega_32=0.5 * w31))
        return cls(g=g, omega_c=omega_c, spectators=tuple(spectators), **kwargs)

    @classmethod
    def uniform(cls, n, g_j=0.2, ratio=10.0, **kwargs):
        """``n - 1`` identical spectators with ``cavity detuning = ratio * g_j``."""
        return cls.from_detunings([g_j] * (n - 1), [ratio * g_j] * (n - 1), **kwargs)

    @property
    def n_qubits(self) -> int:
        return 1 + len(self.spectators)

    @property
    def g_j(self) -> np.ndarray:
        return np.array([q.g for q in self.spectators])

    @property
    def cavity_detunings(self) -> np.ndarray:
        return np.array([q.omega_31 - self.omega_c for q in self.spectators])

    @property
    def kappa(self) -> float:
        return 0.0 if math.isinf(self.quality_factor) else self.omega_c / self.quality_factor

    def basis(self) -> CompositeBasis:
        return CompositeBasis(self.n_qubits, self.n_max)

    def scaled(self, s: float) -> "DeviceModel":
        """Multiply every frequency, coupling and rate by ``s``."""
        spect = tuple(
            replace(q, g=q.g * s, omega_21=q.omega_21 * s, omega_32=q.omega_32 * s,
                    omega_10=q.omega_10 * s, gamma_1r=q.gamma_1r * s, gamma_1p=q.gamma_1p * s)
            for q in self.spectators
        )
        return replace(
            self, g=self.g * s, omega_c=self.omega_c * s, spectators=spect,
            omega_10=self.omega_10 * s, omega_21=self.omega_21 * s,
            gamma_1r=self.gamma_1r * s, gamma_1p=self.gamma_1p * s,
            gamma_2r=self.gamma_2r * s, gamma_2p=self.gamma_2p * s,
        )


@dataclass(frozen=True)
class PulseSpec:
    """Classical drive on one transition of qubit ``qubit`` (1-based label)."""

    qubit: int
    transition: tuple
    rabi: float
    carrier: float = 0.0
    phase: float = 0.0
    window: tuple = (0.0, math.inf)

    def __post_init__(self):
        object.__setattr__(self, "transition", tuple(self.transition))
        object.__setattr__(self, "window", tuple(self.window))
        if self.rabi < 0:
            raise ModelError(f"Rabi frequency must be >= 0, got {self.rabi}")
        if not self.window[1] > self.window[0]:
            raise ModelError(f"empty pulse window {self.window}")
        if self.qubit < 1:
            raise ModelError(f"qubit label must be >= 1, got {self.qubit}")
        if self.transition not in ALLOWED_TRANSITIONS[self.qubit == 1]:
            raise ModelError(f"transition {self.transition} is not driven on qubit {self.qubit}")


# -- time-dependent container ------------------------------------------------


@dataclass
class TimeDependentHamiltonian:
    """``H(t) = static + sum_k [exp(-i w_k t) A_k + h.c.]``."""

    basis: CompositeBasis
    static: sp.csr_matrix
    terms: list = field(default_factory=list)

    def __post_init__(self):
        self.static = sp.csr_matrix(self.static, dtype=complex)
        self.terms = [(sp.csr_matrix(op, dtype=complex), float(w)) for op, w in self.terms]
        self._adjoints = [op.conj().T.tocsr() for op, _ in self.terms]

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([w for _, w in self.terms])

    @property
    def max_frequency(self) -> float:
        return float(np.max(np.abs(self.frequencies))) if self.terms else 0.0

    def coefficient(self, k: int, t: float) -> complex:
        return complex(np.exp(-1j * self.terms[k][1] * t))

    def at(self, t: float) -> sp.csr_matrix:
        h = self.static.copy()
        for (op, w), adj in zip(self.terms, self._adjoints):
            c = np.exp(-1j * w * t)
            h = h + c * op + np.conj(c) * adj
        return h.tocsr()

    def matvec(self, t: float, v: np.ndarray) -> np.ndarray:
        out = self.static @ v
        for (op, w), adj in zip(self.terms, self._adjoints):
            c = np.exp(-1j * w * t)
            out += c * (op @ v) + np.conj(c) * (adj @ v)
        return out

    def __add__(self, other):
        if isinstance(other, TimeDependentHamiltonian):
            return TimeDependentHamiltonian(self.basis, self.static + other.static, self.terms + other.terms)
        return TimeDependentHamiltonian(self.basis, self.static + other, list(self.terms))


@dataclass(frozen=True)
class FrameShift:
    """Diagonal frame generator ``D``; frame state is ``exp(i D t) psi(t)``."""

    diagonal: np.ndarray

    def to_lab(self, amplitudes: np.ndarray, t: float) -> np.ndarray:
        return np.exp(-1j * self.diagonal * t) * amplitudes

    def to_frame(self, amplitudes: np.ndarray, t: float) -> np.ndarray:
        return np.exp(1j * self.diagonal * t) * amplitudes


# -- scalar relations --------------------------------------------------------


def raman_strength(rabi, g_j, pulse_detuning, cavity_detuning):
    """Raman flip-flop strength ``chi_j = (Omega_j g_j / 2)(1/Delta_j + 1/Delta_c,j)``."""
    return 0.5 * rabi * g_j * (1.0 / pulse_detuning + 1.0 / cavity_detuning)


def effective_rate(rabi, g_j, pulse_detuning, cavity_detuning, delta):
    """Photon-conditional phase rate ``lambda_j = g_j^2/Delta_c,j + chi_j^2/delta``."""
    chi = raman_strength(rabi, g_j, pulse_detuning, cavity_detuning)
    return g_j**2 / cavity_detuning + chi**2 / delta


@dataclass(frozen=True)
class RamanParameters:
    """Per-spectator detunings and rates derived from a model plus pulses."""

    pulse_detuning: np.ndarray
    cavity_detuning: np.ndarray
    rabi: np.ndarray
    g_j: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return self.cavity_detuning - self.pulse_detuning

    @property
    def chi(self) -> np.ndarray:
        return raman_strength(self.rabi, self.g_j, self.pulse_detuning, self.cavity_detuning)

    @property
    def lam(self) -> np.ndarray:
        return self.g_j**2 / self.cavity_detuning + self.chi**2 / self.delta

    def common_delta(self, scale: float) -> float:
        d = self.delta
        if np.max(d) - np.min(d) > DELTA_EQUAL_TOL * scale:
            raise ModelError(f"detunings delta_j are not equal: spread {np.ptp(d):.3e}")
        return float(np.mean(d))


def raman_parameters(model: DeviceModel, pulses) -> RamanParameters:
    pulses = _pulses_by_spectator(model, pulses)
    dc = model.cavity_detunings
    dp = np.array([q.omega_32 - p.carrier for q, p in zip(model.spectators, pulses)])
    if np.any(dp <= 0):
        bad = [int(k) + 2 for k in np.flatnonzero(dp <= 0)]
        raise ModelError(f"nonpositive pulse detuning Delta_j for qubits {bad}")
    return RamanParameters(dp, dc, np.array([p.rabi for p in pulses]), model.g_j)


def _pulses_by_spectator(model: DeviceModel, pulses):
    by_qubit = {}
    for p in pulses:
        if p.qubit == 1 or p.transition != (2, 3):
            raise ModelError(f"pulse {p} is not a Raman pulse on a spectator (2,3) transition")
        if p.qubit in by_qubit:
            raise ModelError(f"two pulses given for qubit {p.qubit}")
        by_qubit[p.qubit] = p
    missing = [j for j in range(2, model.n_qubits + 1) if j not in by_qubit]
    if missing:
        raise ModelError(f"missing Raman pulse for qubits {missing}")
    extra = sorted(set(by_qubit) - set(range(2, model.n_qubits + 1)))
    if extra:
        raise ModelError(f"pulses for nonexistent qubits {extra}")
    return [by_qubit[j] for j in range(2, model.n_qubits + 1)]


# -- builders ------------------------------------------------------------------


def _check_basis(model: DeviceModel, basis: CompositeBasis):
    if basis.n_qubits != model.n_qubits:
        raise ModelError(f"basis has {basis.n_qubits} qubits, model has {model.n_qubits}")


def h_pulse_resonant(rabi, phase, transition, qubit, basis) -> sp.csr_matrix:
    """``Omega (e^{i phi} |lo><hi| + h.c.)`` on one qubit."""
    transition = tuple(transition)
    if transition not in ALLOWED_TRANSITIONS[qubit == 1]:
        raise ModelError(f"transition {transition} is not driven on qubit {qubit}")
    lo, hi = transition
    site = basis.qubit_site(qubit)
    d = basis.site_dim(site)
    local = rabi * np.exp(1j * phase) * ket_bra(d, lo, hi)
    local = local + local.conj().T
    return embed(local, site, basis)


def h_jc_resonant(g, basis) -> sp.csr_matrix:
    """Resonant coupling ``g (a^dag |1><2| + h.c.)`` of qubit 1 to the cavity."""
    a = destroy(basis.cavity_dim)
    op = g * embed_product({0: ket_bra(3, 1, 2), basis.cavity_site: a.conj().T}, basis)
    return (op + op.conj().T).tocsr()


def h_raman_full(model: DeviceModel, pulses, basis, include_jc: bool = False) -> TimeDependentHamiltonian:
    """Cavity + classical-pulse coupling of spectators 2..n, interaction picture.

    ``pulses=None`` gives the drive-free form (all ``Omega_j = 0``), i.e. the
    dispersive spectator coupling that stays on outside the Raman step.
    """
    _check_basis(model, basis)
    a_dag = destroy(basis.cavity_dim).conj().T
    cav = basis.cavity_site
    terms = []
    dc = model.cavity_detunings
    for k, q in enumerate(model.spectators):
        site = k + 1
        terms.append((q.g * embed_product({site: ket_bra(4, 1, 3), cav: a_dag}, basis), dc[k]))
    if pulses is not None:
        params = raman_parameters(model, pulses)
        for k, p in enumerate(_pulses_by_spectator(model, pulses)):
            op = p.rabi * np.exp(1j * p.phase) * embed(ket_bra(4, 2, 3), k + 1, basis)
            terms.append((op, params.pulse_detuning[k]))
    static = h_jc_resonant(model.g, basis) if include_jc else sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    return TimeDependentHamiltonian(basis, static, terms)


def rotating_frame_static(h: TimeDependentHamiltonian):
    """Exact static form of a monochromatic Hamiltonian.

    Returns ``(H_s, frame)`` with ``frame.diagonal = D`` such that
    ``exp(i D t) psi(t)`` evolves under the static ``H_s = H(0) - D``.  ``D`` is
    built from per-site level shifts; qubit levels |0>, |1> and all cavity
    levels are pinned to zero shift.
    """
    basis = h.basis
    table = basis.level_table()
    n_q = basis.n_qubits
    # one unknown per (qubit site, level >= 2)
    var = {}
    for s, d in enumerate(basis.levels_per_site):
        for lv in range(2, d):
            var[(s, lv)] = len(var)

    rows, rhs = [], []
    ops = [(h.static, 0.0)] + list(h.terms)
    for op, w in ops:
        coo = op.tocoo()
        if coo.nnz == 0:
            continue
        pats = np.unique(np.hstack([table[coo.row, :n_q], table[coo.col, :n_q]]), axis=0)
        for pat in pats:
            row = np.zeros(len(var))
            for s in range(n_q):
                lr, lc = pat[s], pat[n_q + s]
                if lr >= 2:
                    row[var[(s, lr)]] += 1.0
                if lc >= 2:
                    row[var[(s, lc)]] -= 1.0
            rows.append(row)
            rhs.append(w)
    if not var or not rows:
        shifts = np.zeros(len(var))
    else:
        A, b = np.array(rows), np.array(rhs)
        shifts = np.linalg.lstsq(A, b, rcond=None)[0]
        resid = np.max(np.abs(A @ shifts - b))
        if resid > 1e-9 * max(1.0, float(np.max(np.abs(b)))):
            raise NonMonochromaticError(f"no diagonal frame removes the time dependence (residual {resid:.3e})")
        # a frequency with no constraint attached would show up as a nonzero residual above
    diag = np.zeros(basis.dim)
    for (s, lv), k in var.items():
        diag[table[:, s] == lv] += shifts[k]
    h_s = (h.at(0.0) - sp.diags(diag.astype(complex))).tocsr()
    return h_s, FrameShift(diag)


def h_eff_raman(model: DeviceModel, pulses, basis) -> TimeDependentHamiltonian:
    """Adiabatically-eliminated Hamiltonian: level |3> of each spectator removed."""
    _check_basis(model, basis)
    params = raman_parameters(model, pulses)
    a = destroy(basis.cavity_dim)
    n_op = number(basis.cavity_dim)
    cav = basis.cavity_site
    static = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    terms = []
    for k in range(len(model.spectators)):
        site = k + 1
        static = static - (params.rabi[k] ** 2 / params.pulse_detuning[k]) * embed(projector(4, 2), site, basis)
        static = static - (params.g_j[k] ** 2 / params.cavity_detuning[k]) * embed_product(
            {site: projector(4, 1), cav: n_op}, basis
        )
        flip = embed_product({site: ket_bra(4, 1, 2), cav: a.conj().T}, basis)
        terms.append((-params.chi[k] * flip, params.delta[k]))
    return TimeDependentHamiltonian(basis, static, terms)


def h_eff_dispersive(model: DeviceModel, pulses, basis) -> sp.csr_matrix:
    """Static dispersive Hamiltonian with photon-number Stark shifts and exchange.

    The cavity-mediated exchange between spectators ``j < j'`` carries
    strength ``chi_j chi_j' / delta`` for each unordered pair.
    """
    _check_basis(model, basis)
    params = raman_parameters(model, pulses)
    delta = params.common_delta(model.g)
    chi = params.chi
    a = destroy(basis.cavity_dim)
    n_op = number(basis.cavity_dim)
    aad = (a @ a.conj().T).tocsr()
    cav = basis.cavity_site
    h = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    m = len(model.spectators)
    for k in range(m):
        site = k + 1
        h = h - (params.rabi[k] ** 2 / params.pulse_detuning[k]) * embed(projector(4, 2), site, basis)
        h = h - (params.g_j[k] ** 2 / params.cavity_detuning[k]) * embed_product({site: projector(4, 1), cav: n_op}, basis)
        h = h - (chi[k] ** 2 / delta) * (
            embed_product({site: projector(4, 1), cav: n_op}, basis)
            - embed_product({site: projector(4, 2), cav: aad}, basis)
        )
    for k in range(m):
        for kk in range(k + 1, m):
            hop = embed_product({k + 1: ket_bra(4, 2, 1), kk + 1: ket_bra(4, 1, 2)}, basis)
            h = h + (chi[k] * chi[kk] / delta) * (hop + hop.conj().T)
    return h.tocsr()


def h_eff_reduced(model: DeviceModel, pulses, basis) -> sp.csr_matrix:
    """Diagonal ``-sum_j lambda_j a^dag a |1><1|_j`` (level |2> unpopulated)."""
    _check_basis(model, basis)
    params = raman_parameters(model, pulses)
    params.common_delta(model.g)
    return h_photon_phase(params.lam, basis)


def h_photon_phase(lam, basis) -> sp.csr_matrix:
    """``-sum_j lam[j] a^dag a |1><1|_j`` for spectators j = 2..n."""
    table = basis.level_table()
    photons = table[:, basis.cavity_site]
    diag = np.zeros(basis.dim)
    for k, lj in enumerate(np.asarray(lam, float)):
        diag -= lj * photons * (table[:, k + 1] == 1)
    return sp.diags(diag.astype(complex), format="csr")


def excitation_number(basis) -> sp.csr_matrix:
    """``a^dag a + sum_j |3><3|_j + |2><2|_1``, conserved by the drive-free couplings."""
    table = basis.level_table()
    diag = table[:, basis.cavity_site].astype(float) + (table[:, 0] == 2)
    for s in range(1, basis.n_qubits):
        diag = diag + (table[:, s] == 3)
    return sp.diags(diag.astype(complex), format="csr")

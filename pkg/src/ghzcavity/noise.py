"""Monte-Carlo wave-function trajectories over the protocol schedule.

Conventions for the collapse operators (rates in the model's angular units):

* relaxation ``sqrt(gamma_r) |lower><upper|``
* dephasing ``sqrt(gamma_p / 2) |k><k|`` on the dephasing level ``k``
* cavity decay ``sqrt(kappa) a``

Noise acts on qubit 1 levels |1>, |2>, on level |1> of qubits 2..n and on the
cavity.  Spectator level |3> carries no channel.

Each trajectory evolves an unnormalized state with the non-Hermitian
generator ``H - (i/2) sum_k L_k^dag L_k`` on a fixed micro-step grid (Strang
split: damping half step, exact unitary step, damping half step) and jumps
once its squared norm drops below a uniform random threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .hamiltonians import DeviceModel
from .hilbert import MAX_DENSE_DIM, CompositeBasis, destroy, embed, initial_product_state, ket_bra, projector
from .metrics import fidelity_numeric
from .protocol import CouplingOptions, Schedule, ideal_ghz, run_protocol, segment_hamiltonians

DEFAULT_MAX_STEP = 0.25


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseChannel:
    label: str
    operator: sp.csr_matrix
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise NoiseError(f"channel {self.label}: negative rate {self.rate}")

    @property
    def collapse(self) -> sp.csr_matrix:
        return math.sqrt(self.rate) * self.operator


def build_channels(model: DeviceModel, basis: CompositeBasis, include_zero: bool = False) -> list:
    """Collapse channels implied by the model's rates."""
    chans = [
        NoiseChannel("q1.relax_2", embed(ket_bra(3, 1, 2), 0, basis), model.gamma_2r),
        NoiseChannel("q1.dephase_2", embed(projector(3, 2), 0, basis), model.gamma_2p / 2),
        NoiseChannel("q1.relax_1", embed(ket_bra(3, 0, 1), 0, basis), model.gamma_1r),
        NoiseChannel("q1.dephase_1", embed(projector(3, 1), 0, basis), model.gamma_1p / 2),
    ]
    for k, q in enumerate(model.spectators):
        j = k + 2
        chans.append(NoiseChannel(f"q{j}.relax_1", embed(ket_bra(4, 0, 1), k + 1, basis), q.gamma_1r))
        chans.append(NoiseChannel(f"q{j}.dephase_1", embed(projector(4, 1), k + 1, basis), q.gamma_1p / 2))
    chans.append(NoiseChannel("cavity.decay", embed(destroy(basis.cavity_dim), basis.cavity_site, basis), model.kappa))
    return chans if include_zero else [c for c in chans if c.rate > 0]


@dataclass
class TrajectoryResult:
    mean: float
    stderr: float
    values: np.ndarray
    jumps: np.ndarray
    channel_jumps: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_traj": int(self.values.size),
            "mean_jumps": float(np.mean(self.jumps)) if self.jumps.size else 0.0,
            "jumps_by_channel": dict(self.channel_jumps),
        }


def _summary(values, jumps, channel_jumps):
    values = np.asarray(values, float)
    n = values.size
    mean = math.fsum(values) / n
    if n > 1:
        var = math.fsum((values - mean) ** 2) / (n - 1)
        stderr = math.sqrt(var / n)
    else:
        stderr = 0.0
    return TrajectoryResult(mean, stderr, values, np.asarray(jumps), channel_jumps)


def _damping_diagonal(channels, dim):
    d = np.zeros(dim)
    for c in channels:
        ll = (c.collapse.conj().T @ c.collapse).tocsr()
        diag = ll.diagonal()
        if ll.nnz and abs(ll - sp.diags(diag)).max() > 1e-14:
            raise NoiseError(f"channel {c.label}: L^dag L must be diagonal in the product basis")
        d += diag.real
    return d


def _step_operator(H, h, damping):
    """Callable applying one Strang-split non-Hermitian step to a (dim, batch) block."""
    H = sp.csr_matrix(H)
    dim = H.shape[0]
    diag = H.diagonal()
    if H.nnz == 0 or abs(H - sp.diags(diag)).max() == 0:
        factor = np.exp(-1j * diag * h - 0.5 * damping * h)[:, None]
        return lambda block: factor * block
    half = np.exp(-0.25 * damping * h)[:, None]
    if dim <= MAX_DENSE_DIM:
        evals, evecs = np.linalg.eigh(H.toarray())
        u = (evecs * np.exp(-1j * evals * h)) @ evecs.conj().T
        return lambda block: half * (u @ (half * block))
    a = (-1j * h) * H
    return lambda block: half * expm_multiply(a, half * block)


def unravel(segments, psi0, channels, n_traj, seed, dt=None, evaluate=None, finalize=None, batch=256):
    """Run ``n_traj`` trajectories through static ``segments`` = [(H, duration), ...].

    ``evaluate(amplitudes) -> float`` scores each normalized final state;
    ``finalize(amplitudes) -> amplitudes`` is applied first (e.g. frame change).
    Trajectory ``k`` draws from its own generator spawned from ``seed``.
    """
    if n_traj < 1:
        raise NoiseError("n_traj must be >= 1")
    psi0 = np.asarray(psi0, dtype=complex)
    dim = psi0.size
    rates = [c.rate for c in channels if c.rate > 0]
    channels = [c for c in channels if c.rate > 0]
    limit = min(1 / r for r in rates) / 100 if rates else math.inf
    if dt is None:
        dt = min(limit, DEFAULT_MAX_STEP)
    elif dt > limit * (1 + 1e-12):
        raise NoiseError(f"micro-step {dt:g} coarser than min(1/rate)/100 = {limit:g}")
    evaluate = evaluate or (lambda a: 1.0)
    damping = _damping_diagonal(channels, dim)
    collapses = [c.collapse for c in channels]
    plan = []
    for H, dur in segments:
        n = max(1, math.ceil(dur / dt - 1e-9)) if dur > 0 else 0
        if n == 0:
            continue
        h = dur / n
        plan.append((_step_operator(H, h, damping), n))

    gens = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_traj)]
    values = np.empty(n_traj)
    jumps = np.zeros(n_traj, dtype=int)
    channel_jumps = {c.label: 0 for c in channels}
    for start in range(0, n_traj, batch):
        idx = np.arange(start, min(start + batch, n_traj))
        block = np.repeat(psi0[:, None], idx.size, axis=1)
        thresholds = np.array([gens[k].random() for k in idx])
        for step, n in plan:
            for _ in range(n):
                block = step(block)
                if not channels:
                    continue
                norms = (block.real**2 + block.imag**2).sum(axis=0)
                for col in np.flatnonzero(norms <= thresholds):
                    k = idx[col]
                    v = block[:, col]
                    cand = [L @ v for L in collapses]
                    w = np.array([np.vdot(x, x).real for x in cand])
                    choice = int(np.searchsorted(np.cumsum(w) / w.sum(), gens[k].random(), side="right"))
                    choice = min(choice, len(cand) - 1)
                    block[:, col] = cand[choice] / math.sqrt(w[choice])
                    thresholds[col] = gens[k].random()
                    jumps[k] += 1
                    channel_jumps[channels[choice].label] += 1
        for col, k in enumerate(idx):
            v = block[:, col] / np.linalg.norm(block[:, col])
            if finalize is not None:
                v = finalize(v)
            values[k] = evaluate(v)
    return _summary(values, jumps, channel_jumps)


def run_trajectories(schedule: Schedule, channels, n_traj: int, seed: int, mode: str = "closed-form",
                     dt: float | None = None, options: CouplingOptions | None = None, psi0=None, cfg=None):
    """GHZ-fidelity distribution over ``n_traj`` noisy runs of ``schedule``.

    With every rate zero the noiseless protocol is evaluated once and returned
    for all trajectories (stderr 0).
    """
    basis = schedule.model.basis()
    psi0 = psi0 or initial_product_state(basis)
    target = ideal_ghz(basis)
    live = [c for c in channels if c.rate > 0]
    if n_traj < 1:
        raise NoiseError("n_traj must be >= 1")
    if not live:
        run = run_protocol(schedule, psi0, mode, cfg, samples_per_segment=1, options=options)
        f = fidelity_numeric(run.final, target)
        return _summary(np.full(n_traj, f), np.zeros(n_traj, dtype=int), {})
    hs, frame = segment_hamiltonians(schedule, basis, mode, options)
    segs = list(zip(hs, [s.duration for s in schedule.segments]))
    tau = schedule.tau
    tgt = target.amplitudes
    return unravel(
        segs, frame.to_frame(psi0.amplitudes, 0.0), live, n_traj, seed, dt,
        evaluate=lambda v: abs(np.vdot(tgt, v)) ** 2,
        finalize=lambda v: frame.to_lab(v, tau),
    )


# -- oracles ------------------------------------------------------------------


def liouvillian(H, channels) -> sp.csr_matrix:
    """Column-stacked Lindblad generator ``d vec(rho)/dt = L vec(rho)``."""
    H = sp.csr_matrix(H)
    dim = H.shape[0]
    eye = sp.identity(dim, dtype=complex, format="csr")
    out = -1j * (sp.kron(eye, H) - sp.kron(H.T, eye))
    for c in channels:
        L = c.collapse
        ll = (L.conj().T @ L).tocsr()
        out = out + sp.kron(L.conj(), L) - 0.5 * sp.kron(eye, ll) - 0.5 * sp.kron(ll.T, eye)
    return out.tocsr()


def lindblad_fidelity(schedule: Schedule, channels, mode: str = "closed-form", options=None, psi0=None) -> float:
    """Density-matrix reference for the mean trajectory fidelity (small systems only)."""
    basis = schedule.model.basis()
    if basis.dim > 200:
        raise NoiseError("density-matrix reference limited to dimension <= 200 (n <= 3)")
    psi0 = psi0 or initial_product_state(basis)
    hs, frame = segment_hamiltonians(schedule, basis, mode, options)
    v = frame.to_frame(psi0.amplitudes, 0.0)
    rho = np.outer(v, v.conj()).reshape(-1, order="F")
    for H, seg in zip(hs, schedule.segments):
        rho = expm_multiply(seg.duration * liouvillian(H, channels), rho)
    rho = rho.reshape(basis.dim, basis.dim, order="F")
    ph = np.exp(-1j * frame.diagonal * schedule.tau)
    rho = ph[:, None] * rho * ph.conj()[None, :]
    g = ideal_ghz(basis).amplitudes
    return float(np.vdot(g, rho @ g).real)


def photon_exposure(schedule: Schedule) -> float:
    """Time the photon branch spends with one photon in the ideal protocol.

    ``t_2 + 2 t_1c`` with the photon fully present, plus ``t_1b / 2`` from each
    of the two resonant-swap windows (photon population ``sin^2`` ramp).
    """
    d = schedule.durations
    return d["2"] + 2 * d["1c"] + d["1b"]


def cavity_decay_fidelity(schedule: Schedule, kappa: float) -> float:
    """Single-excitation decay estimate of the mean fidelity under cavity loss.

    The photon-branch amplitude decays as ``exp(-kappa T / 2)`` over the
    exposure ``T``; trajectories with a photon loss end orthogonal to the
    target, leaving ``((1 + exp(-kappa T / 2)) / 2)^2``.
    """
    return ((1 + math.exp(-kappa * photon_exposure(schedule) / 2)) / 2) ** 2

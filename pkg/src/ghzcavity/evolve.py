"""State propagation: Lanczos exponential action, dense eigen-decomposition, fixed-step RK4."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .hilbert import MAX_DENSE_DIM, StateVector, to_dense

log = logging.getLogger(__name__)

METHODS = ("static-krylov", "static-eigen", "timedep-rk4")


class PropagationError(RuntimeError):
    """Numerical propagation failed (non-convergence, refused step, etc.)."""


@dataclass(frozen=True)
class PropagatorConfig:
    """Settings shared by the propagators.

    ``time_step`` is the initial Krylov substep or the RK4 step; ``tolerance``
    bounds the Krylov error estimate over a full propagation and the RK4
    step-halving estimate.
    """

    method: str = "static-krylov"
    time_step: float = 0.5
    krylov_dim: int = 30
    tolerance: float = 1e-10
    max_dense_dim: int = MAX_DENSE_DIM
    max_refinements: int = 8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown propagation method {self.method!r}; expected one of {METHODS}")
        if not self.time_step > 0:
            raise ValueError("time_step must be > 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be >= 2")


# -- Lanczos --------------------------------------------------------------


def _lanczos_exp(H, v, dt, m):
    """One Lanczos step of ``exp(-i H dt) v``; returns (result, error estimate)."""
    dim = v.shape[0]
    beta0 = np.linalg.norm(v)
    if beta0 == 0.0:
        return v.copy(), 0.0
    m = min(m, dim)
    V = np.empty((m + 1, dim), dtype=complex)
    alpha = np.empty(m)
    beta = np.empty(m)
    V[0] = v / beta0
    k_used = m
    breakdown = False
    for k in range(m):
        w = H @ V[k]
        alpha[k] = np.vdot(V[k], w).real
        w = w - alpha[k] * V[k]
        if k > 0:
            w = w - beta[k - 1] * V[k - 1]
        # full reorthogonalisation; m is small
        w = w - V[: k + 1].T @ (V[: k + 1].conj() @ w)
        beta[k] = np.linalg.norm(w)
        if beta[k] < 1e-13 * max(1.0, abs(alpha[k])):
            k_used = k + 1
            breakdown = True
            break
        V[k + 1] = w / beta[k]
    a = alpha[:k_used]
    b = beta[: k_used - 1]
    # dense eigh of the small tridiagonal; LAPACK stemr occasionally fails to converge
    evals, evecs = np.linalg.eigh(np.diag(a) + np.diag(b, 1) + np.diag(b, -1))
    c = evecs @ (np.exp(-1j * evals * dt) * evecs[0].conj())
    err = 0.0 if breakdown else float(beta0 * beta[k_used - 1] * abs(c[-1]))
    return beta0 * (V[:k_used].T @ c), err


def krylov_expm_multiply(H, v, t, cfg: PropagatorConfig | None = None, times=None):
    """``exp(-i H t) v`` for Hermitian sparse ``H`` with adaptive Lanczos substeps.

    If ``times`` (increasing, within ``[0, t]``) is given, returns the list of
    states at those times instead of the single final state.
    """
    cfg = cfg or PropagatorConfig()
    if t < 0:
        raise PropagationError("negative propagation time")
    targets = [t] if times is None else [float(x) for x in times]
    out = []
    psi = np.asarray(v, dtype=complex).copy()
    now = 0.0
    dt = min(cfg.time_step, t) if t > 0 else 0.0
    t_total = max(t, 1e-300)
    floor = 1e-12 * max(t, 1.0)
    for target in targets:
        if target < now - 1e-14:
            raise PropagationError("sample times must be increasing")
        while target - now > 1e-15 * max(1.0, target):
            step = min(dt, target - now)
            new, err = _lanczos_exp(H, psi, step, cfg.krylov_dim)
            allowed = cfg.tolerance * step / t_total
            if err > allowed:
                if step <= floor:
                    raise PropagationError(
                        f"Krylov propagation did not converge: residual estimate {err:.3e} at substep {step:.3e}"
                    )
                dt = step / 2
                continue
            psi = new
            now += step
            if err < 0.1 * allowed and step == dt:
                dt = 1.5 * dt
        out.append(psi.copy())
    return out[0] if times is None else out


def eigen_expm_multiply(H, v, t, cfg: PropagatorConfig | None = None, times=None):
    cfg = cfg or PropagatorConfig()
    Hd = to_dense(H, cfg.max_dense_dim)
    evals, evecs = np.linalg.eigh(Hd)
    coeffs = evecs.conj().T @ np.asarray(v, dtype=complex)
    if times is None:
        return evecs @ (np.exp(-1j * evals * t) * coeffs)
    return [evecs @ (np.exp(-1j * evals * s) * coeffs) for s in times]


def propagate_static(H, psi: StateVector, t: float, cfg: PropagatorConfig | None = None) -> StateVector:
    """``exp(-i H t) psi`` by Krylov (default) or dense eigen-decomposition."""
    cfg = cfg or PropagatorConfig()
    if t < 0:
        raise PropagationError("negative propagation time")
    if cfg.method == "static-eigen":
        out = eigen_expm_multiply(H, psi.amplitudes, t, cfg)
    else:
        out = krylov_expm_multiply(sp.csr_matrix(H), psi.amplitudes, t, cfg)
    return psi.with_amplitudes(out)


def propagate_static_sampled(H, amplitudes, t, times, cfg: PropagatorConfig | None = None):
    """States at each of ``times`` (relative to the start) under static ``H``."""
    cfg = cfg or PropagatorConfig()
    if cfg.method == "static-eigen":
        return eigen_expm_multiply(H, amplitudes, t, cfg, times=times)
    return krylov_expm_multiply(sp.csr_matrix(H), amplitudes, t, cfg, times=times)


# -- RK4 --------------------------------------------------------------------


def rk4_integrate(h, amplitudes, t0, t1, n_steps):
    """Classical fixed-step RK4 for ``i dpsi/dt = H(t) psi``."""
    psi = np.asarray(amplitudes, dtype=complex).copy()
    if n_steps == 0:
        return psi
    dt = (t1 - t0) / n_steps

    def f(t, y):
        return -1j * h.matvec(t, y)

    t = t0
    for k in range(n_steps):
        k1 = f(t, psi)
        k2 = f(t + dt / 2, psi + dt / 2 * k1)
        k3 = f(t + dt / 2, psi + dt / 2 * k2)
        k4 = f(t + dt, psi + dt * k3)
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (t1 - t0) * (k + 1) / n_steps
    return psi


def max_rk4_step(h) -> float:
    """Largest accepted step: 1/20 of the period of the fastest phase."""
    w = h.max_frequency
    return math.inf if w == 0 else (2 * math.pi / w) / 20


@dataclass
class TimeDepResult:
    state: StateVector
    error_estimate: float
    n_steps: int
    norm_drift: float


def propagate_timedep(h, psi: StateVector, t0: float, t1: float, cfg: PropagatorConfig | None = None,
                      return_info: bool = False):
    """Integrate a :class:`TimeDependentHamiltonian` from ``t0`` to ``t1`` with RK4.

    The step starts at ``cfg.time_step`` (refused if it does not resolve the
    fastest phase) and is halved until the Richardson estimate
    ``|psi_h/2 - psi_h| / 15`` falls below ``cfg.tolerance``.
    """
    cfg = cfg or PropagatorConfig(method="timedep-rk4")
    if t1 < t0:
        raise PropagationError("t1 must be >= t0")
    if cfg.time_step > max_rk4_step(h) * (1 + 1e-12):
        raise PropagationError(
            f"RK4 step {cfg.time_step:g} too coarse for fastest frequency (max {max_rk4_step(h):g})"
        )
    span = t1 - t0
    n = max(1, math.ceil(span / cfg.time_step - 1e-9)) if span > 0 else 0
    if n == 0:
        res = TimeDepResult(psi.copy(), 0.0, 0, 0.0)
        return res if return_info else res.state
    coarse = rk4_integrate(h, psi.amplitudes, t0, t1, n)
    for _ in range(cfg.max_refinements):
        fine = rk4_integrate(h, psi.amplitudes, t0, t1, 2 * n)
        est = float(np.linalg.norm(fine - coarse) / 15)
        log.debug("rk4 steps=%d estimate=%.3e", 2 * n, est)
        n *= 2
        if est <= cfg.tolerance:
            drift = abs(np.linalg.norm(fine) - psi.norm())
            res = TimeDepResult(psi.with_amplitudes(fine), est, n, float(drift))
            return res if return_info else res.state
        coarse = fine
    raise PropagationError(f"RK4 tolerance {cfg.tolerance:g} not met after {cfg.max_refinements} refinements (estimate {est:.3e})")

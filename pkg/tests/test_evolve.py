import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from ghzcavity.evolve import (
    PropagationError,
    PropagatorConfig,
    krylov_expm_multiply,
    max_rk4_step,
    propagate_static,
    propagate_static_sampled,
    propagate_timedep,
    rk4_integrate,
)
from ghzcavity.hamiltonians import (
    DeviceModel,
    PulseSpec,
    TimeDependentHamiltonian,
    h_jc_resonant,
    h_photon_phase,
    h_raman_full,
    rotating_frame_static,
)
from ghzcavity.hilbert import BasisError, CompositeBasis, StateVector, basis_state

from conftest import random_state

EIGEN = PropagatorConfig(method="static-eigen")


def random_hermitian(r, dim, density=0.2):
    A = sp.random(dim, dim, density=density, random_state=r, dtype=float) * (1 + 1j)
    A = A + A.conj().T
    return sp.csr_matrix(A)


def raman_instance(seed=0, n_max=1):
    r = np.random.default_rng(seed)
    m = DeviceModel.from_detunings([r.uniform(0.15, 0.25)], [r.uniform(1.5, 2.5)], n_max=n_max)
    q = m.spectators[0]
    pulse = PulseSpec(qubit=2, transition=(2, 3), rabi=r.uniform(0.1, 0.2), carrier=q.omega_32 - r.uniform(1.2, 1.8),
                      phase=r.uniform(-1, 1))
    return m, h_raman_full(m, [pulse], m.basis(), include_jc=True)


def test_photon_phase_sign():
    b = CompositeBasis(2, 2)
    lam = 0.022
    psi = basis_state(b, (0, 1, 1))
    for cfg in (None, EIGEN):
        out = propagate_static(h_photon_phase([lam], b), psi, math.pi / lam, cfg)
        assert out.amplitudes[b.index((0, 1, 1))] == pytest.approx(-1, abs=1e-10)


def test_zero_time_identity(rng):
    b = CompositeBasis(2, 1)
    psi = StateVector(random_state(rng, b.dim), b)
    out = propagate_static(h_jc_resonant(1.0, b), psi, 0.0)
    np.testing.assert_array_equal(out.amplitudes, psi.amplitudes)


def test_jc_full_cycle_sign():
    b = CompositeBasis(2, 1)
    psi = basis_state(b, (2, 0, 0))
    out = propagate_static(h_jc_resonant(1.0, b), psi, math.pi)
    np.testing.assert_allclose(out.amplitudes, -psi.amplitudes, atol=1e-10)


@given(seed=st.integers(0, 10_000), t=st.floats(0.1, 30.0))
@settings(max_examples=25, deadline=None)
def test_krylov_eigen_agree(seed, t):
    r = np.random.default_rng(seed)
    H = random_hermitian(r, 60)
    v = random_state(r, 60)
    k = krylov_expm_multiply(H, v, t)
    e = expm(-1j * t * H.toarray()) @ v
    assert np.linalg.norm(k - e) < 1e-8


@given(seed=st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_static_paths_agree_on_physical_instance(seed):
    m, h = raman_instance(seed, n_max=2)
    H_s, _ = rotating_frame_static(h)
    b = m.basis()
    psi = StateVector(random_state(np.random.default_rng(seed), b.dim), b)
    k = propagate_static(H_s, psi, 40.0).amplitudes
    e = propagate_static(H_s, psi, 40.0, EIGEN).amplitudes
    assert np.linalg.norm(k - e) < 1e-8
    assert abs(np.linalg.norm(k) - 1) < 1e-8


def test_sampled_matches_separate_calls(rng):
    H = random_hermitian(np.random.default_rng(3), 40)
    v = random_state(rng, 40)
    times = [0.0, 1.0, 2.5, 7.0]
    for cfg in (None, EIGEN):
        outs = propagate_static_sampled(H, v, 7.0, times, cfg)
        for t, o in zip(times, outs):
            np.testing.assert_allclose(o, expm(-1j * t * H.toarray()) @ v, atol=1e-8)


def test_energy_conserved(rng):
    H = random_hermitian(np.random.default_rng(5), 80)
    v = random_state(rng, 80)
    e0 = np.vdot(v, H @ v).real
    scale = abs(H).max()
    for t in (1.0, 10.0, 50.0):
        w = krylov_expm_multiply(H, v, t)
        assert abs(np.vdot(w, H @ w).real - e0) < 1e-8 * scale


@given(seed=st.integers(0, 10_000), a=st.complex_numbers(max_magnitude=2), c=st.complex_numbers(max_magnitude=2))
@settings(max_examples=20, deadline=None)
def test_linearity(seed, a, c):
    r = np.random.default_rng(seed)
    H = random_hermitian(r, 30)
    u, v = random_state(r, 30), random_state(r, 30)
    lhs = krylov_expm_multiply(H, a * u + c * v, 5.0)
    rhs = a * krylov_expm_multiply(H, u, 5.0) + c * krylov_expm_multiply(H, v, 5.0)
    assert np.linalg.norm(lhs - rhs) < 1e-10 * max(1.0, abs(a) + abs(c))


def test_negative_time_refused(rng):
    b = CompositeBasis(2, 1)
    with pytest.raises(PropagationError):
        propagate_static(h_jc_resonant(1.0, b), StateVector(random_state(rng, b.dim), b), -1.0)


def test_eigen_dense_cap():
    b = CompositeBasis(6, 2)
    H = h_photon_phase([0.02] * 5, b)
    with pytest.raises(BasisError):
        propagate_static(H, basis_state(b, (0,) * 7), 1.0, EIGEN)


def test_config_validation():
    for kw in ({"method": "euler"}, {"time_step": 0.0}, {"tolerance": -1.0}, {"krylov_dim": 1}):
        with pytest.raises(ValueError):
            PropagatorConfig(**kw)


def test_constant_coefficients_match_static(rng):
    b = CompositeBasis(2, 1)
    H = h_jc_resonant(1.0, b) + h_photon_phase([0.3], b)
    h = TimeDependentHamiltonian(b, H)
    psi = StateVector(random_state(rng, b.dim), b)
    cfg = PropagatorConfig(method="timedep-rk4", time_step=0.05, tolerance=1e-11)
    out = propagate_timedep(h, psi, 0.0, 6.0, cfg)
    ref = propagate_static(H, psi, 6.0, EIGEN)
    assert np.linalg.norm(out.amplitudes - ref.amplitudes) < 1e-8


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_frame_matches_timedep(seed):
    m, h = raman_instance(seed)
    b = m.basis()
    H_s, frame = rotating_frame_static(h)
    psi = StateVector(random_state(np.random.default_rng(seed), b.dim), b)
    t = 10 / m.g_j[0]
    res = propagate_timedep(h, psi, 0.0, t, PropagatorConfig(method="timedep-rk4", time_step=0.1, tolerance=1e-10),
                            return_info=True)
    lab = frame.to_lab(propagate_static(H_s, psi, t, EIGEN).amplitudes, t)
    assert np.linalg.norm(res.state.amplitudes - lab) < 1e-8
    assert res.norm_drift < 1e-8 * t
    assert res.error_estimate <= 1e-10


def test_rk4_fourth_order():
    m, h = raman_instance(4)
    b = m.basis()
    psi = random_state(np.random.default_rng(4), b.dim)
    H_s, frame = rotating_frame_static(h)
    t = 20.0
    exact = frame.to_lab(propagate_static(H_s, StateVector(psi, b), t, EIGEN).amplitudes, t)
    errs = [np.linalg.norm(rk4_integrate(h, psi, 0.0, t, n) - exact) for n in (200, 400, 800)]
    orders = [math.log2(a / c) for a, c in zip(errs, errs[1:])]
    for p in orders:
        assert 3.7 < p < 4.3, orders


def test_step_halving_ratio():
    """Successive Richardson estimates shrink by about 2^4."""
    m, h = raman_instance(5)
    b = m.basis()
    psi = random_state(np.random.default_rng(5), b.dim)
    runs = [rk4_integrate(h, psi, 0.0, 20.0, n) for n in (200, 400, 800)]
    e1 = np.linalg.norm(runs[1] - runs[0]) / 15
    e2 = np.linalg.norm(runs[2] - runs[1]) / 15
    assert 12 < e1 / e2 < 20


def test_coarse_step_refused():
    m, h = raman_instance(0)
    b = m.basis()
    cfg = PropagatorConfig(method="timedep-rk4", time_step=2 * max_rk4_step(h))
    with pytest.raises(PropagationError):
        propagate_timedep(h, basis_state(b, (0, 1, 1)), 0.0, 1.0, cfg)


def test_tolerance_not_met():
    m, h = raman_instance(0)
    b = m.basis()
    cfg = PropagatorConfig(method="timedep-rk4", time_step=0.1, tolerance=1e-30, max_refinements=1)
    with pytest.raises(PropagationError):
        propagate_timedep(h, basis_state(b, (0, 1, 1)), 0.0, 5.0, cfg)


def test_timedep_empty_interval():
    m, h = raman_instance(0)
    psi = basis_state(m.basis(), (0, 1, 1))
    cfg = PropagatorConfig(method="timedep-rk4", time_step=0.1)
    res = propagate_timedep(h, psi, 2.0, 2.0, cfg, return_info=True)
    assert res.n_steps == 0
    np.testing.assert_array_equal(res.state.amplitudes, psi.amplitudes)
    with pytest.raises(PropagationError):
        propagate_timedep(h, psi, 2.0, 1.0, cfg)


def test_max_rk4_step():
    m, h = raman_instance(0)
    assert max_rk4_step(h) == pytest.approx(2 * math.pi / h.max_frequency / 20)
    assert max_rk4_step(TimeDependentHamiltonian(m.basis(), sp.csr_matrix((m.basis().dim,) * 2))) == math.inf

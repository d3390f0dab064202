"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import sys
import time

import numpy as np
import pytest
import scipy.sparse as sp

from ghzcavity.calibrate import Margins, calibrate, condition_report, feasibility_search, occupation_probability
from ghzcavity.evolve import PropagatorConfig, propagate_static, propagate_timedep, rk4_integrate
from ghzcavity.hamiltonians import DeviceModel, h_raman_full, rotating_frame_static
from ghzcavity.hilbert import CompositeBasis, StateVector, basis_state, embed, initial_product_state, population
from ghzcavity.metrics import fidelity_analytic, fidelity_numeric, leakage_report, phase_error
from ghzcavity.noise import (
    NoiseChannel,
    build_channels,
    cavity_decay_fidelity,
    run_trajectories,
    unravel,
)
from ghzcavity.protocol import CouplingOptions, build_ghz_schedule, run_protocol, segment_hamiltonians, step_one_map_error

from conftest import Criterion, reference_schedule, uniform_model

G_HZ = 2.2e8


def seconds(t):
    return t / (2 * math.pi * G_HZ)


def test_criterion_1_closed_form_exactness():
    with Criterion(1, "closed-form protocol exactness") as c:
        t0 = time.perf_counter()
        for n in (2, 3, 6):
            run = run_protocol(reference_schedule(n), samples_per_segment=1)
            f = fidelity_numeric(run.final)
            photons = 1 - population(run.final, run.final.basis.cavity_site, 0)
            c.note(f"n={n}: 1-F={1 - f:.1e}, photons={photons:.1e}")
            assert abs(f - 1) <= 1e-12
            assert abs(photons) <= 1e-12
        assert time.perf_counter() - t0 < 1.0


def test_criterion_2_total_time():
    with Criterion(2, "total time") as c:
        sched = reference_schedule(6)
        tau_pi = sched.tau / math.pi
        tau_us = seconds(sched.tau) * 1e6
        c.note(f"tau g/pi={tau_pi:.4f}, tau={tau_us:.4f} us")
        assert abs(tau_pi - 46.65) <= 0.05
        assert abs(tau_us - 0.106) <= 0.005


def test_criterion_3_calibration():
    with Criterion(3, "calibration reproduction") as c:
        t0 = time.perf_counter()
        m = uniform_model(6)
        calib = feasibility_search(m, Margins())
        ratio = calib.lam_j / m.g_j
        c.note(f"lambda={calib.lam:.5f} g, lambda_j/g_j={ratio[0]:.4f}")
        assert np.all(np.abs(ratio - 0.109) <= 0.002)
        assert abs(calib.lam - 0.022) <= 0.001
        g_j = np.array([0.2, 0.19, 0.18, 0.17, 0.16])
        mixed = DeviceModel.from_detunings(g_j, 10 * g_j)
        floor = float(np.max(g_j**2 / (10 * g_j)))
        eq = calibrate(mixed, 0.15, floor * 1.1)
        spread = float(np.ptp(eq.lam_j))
        c.note(f"nonidentical spread={spread:.1e} g, distinct Rabi={len(set(np.round(eq.rabi, 12)))}")
        assert spread <= 1e-9 * mixed.g
        assert len(set(np.round(eq.rabi, 12))) == 5
        assert time.perf_counter() - t0 < 1.0


def test_criterion_4_occupation_bound():
    with Criterion(4, "level-3 occupation bound") as c:
        t0 = time.perf_counter()
        p = float(occupation_probability(10.0, 10.0))
        run = run_protocol(reference_schedule(2), mode="full", samples_per_segment=20)
        worst = max(leakage_report(run).level3)
        c.note(f"p={p:.5f}, level-3 max={worst:.5f} (bound {2 * p:.4f})")
        assert abs(p - 0.0385) <= 0.0005
        assert worst <= 2 * p
        assert time.perf_counter() - t0 < 60


def test_criterion_5_analytic_fidelity():
    with Criterion(5, "analytic fidelity") as c:
        f = fidelity_analytic([0.011 * math.pi] * 5)
        phi = condition_report(uniform_model(6), calibrate(uniform_model(6), 0.2, 0.022), reference_schedule(6)).phase_error
        f_cal = fidelity_analytic(phi)
        c.note(f"F={f:.5f} (from calibration {f_cal:.5f})")
        assert 0.985 <= f <= 0.995
        assert f_cal == pytest.approx(f, abs=1e-12)
        assert fidelity_analytic([0.0] * 5) == 1.0


def test_criterion_6_full_vs_effective_phase():
    with Criterion(6, "full vs effective conditional phase") as c:
        t0 = time.perf_counter()
        errors = []
        for r in (5, 10, 20, 40):
            m = DeviceModel.uniform(2, ratio=r)
            sched = build_ghz_schedule(m, feasibility_search(m, Margins.uniform(r)), 10.0, 10.0)
            errors.append(phase_error(sched))
        c.note("errors " + ", ".join(f"r={r}: {e:.2%}" for r, e in zip((5, 10, 20, 40), errors)))
        assert errors[1] < 0.05
        assert all(a > b for a, b in zip(errors, errors[1:]))
        assert time.perf_counter() - t0 < 300


def test_criterion_7_full_end_to_end():
    with Criterion(7, "full end-to-end") as c:
        t0 = time.perf_counter()
        m = uniform_model(3)
        sched = build_ghz_schedule(m, feasibility_search(m, Margins()), 10.0, 10.0)
        run = run_protocol(sched, mode="full", samples_per_segment=10)
        phi = condition_report(sched.model, sched.calibration, sched).phase_error
        f_num, f_an = fidelity_numeric(run.final), fidelity_analytic(phi)
        leak = leakage_report(run).photon_ge2
        c.note(f"n=3 F_num={f_num:.5f} F_an={f_an:.5f} photon>=2={leak:.1e}")
        assert abs(f_num - f_an) <= 0.01
        assert leak < 1e-4
        assert time.perf_counter() - t0 < 600
        t1 = time.perf_counter()
        m6 = uniform_model(6)
        big = run_protocol(build_ghz_schedule(m6, feasibility_search(m6, Margins()), 10.0, 10.0),
                           mode="full", samples_per_segment=2)
        f6 = fidelity_numeric(big.final)
        dt6 = time.perf_counter() - t1
        c.note(f"n=6 (dim {big.final.basis.dim}) F_num={f6:.4f} in {dt6:.0f} s")
        assert abs(big.final.norm() - 1) < 1e-8
        assert dt6 < 3600


def _raman_two_qubit():
    sched = reference_schedule(2)
    b = sched.model.basis()
    h = h_raman_full(sched.model, list(sched.segment("2").pulses), b, include_jc=True)
    return b, h


def test_criterion_8_dual_propagator():
    with Criterion(8, "frame vs RK4 propagation") as c:
        b, h = _raman_two_qubit()
        H_s, frame = rotating_frame_static(h)
        rng = np.random.default_rng(8)
        v = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
        psi = StateVector(v / np.linalg.norm(v), b)
        t = 50.0
        exact = frame.to_lab(propagate_static(H_s, psi, t, PropagatorConfig(method="static-eigen")).amplitudes, t)
        krylov = frame.to_lab(propagate_static(H_s, psi, t).amplitudes, t)
        res = propagate_timedep(h, psi, 0.0, t, PropagatorConfig(method="timedep-rk4", time_step=0.1, tolerance=1e-10),
                                return_info=True)
        diff = float(np.linalg.norm(res.state.amplitudes - krylov))
        errs = [np.linalg.norm(rk4_integrate(h, psi.amplitudes, 0.0, t, n) - exact) for n in (250, 500, 1000)]
        orders = [math.log2(a / e) for a, e in zip(errs, errs[1:])]
        c.note(f"|frame-RK4|={diff:.1e}, orders={orders[0]:.2f},{orders[1]:.2f}")
        assert diff < 1e-8
        assert all(abs(p - 4) < 0.3 for p in orders)


def test_criterion_9_noise_sanity():
    with Criterion(9, "noise sanity") as c:
        t0 = time.perf_counter()
        m = uniform_model(2, quality_factor=5e4)
        sched = build_ghz_schedule(m, calibrate(m, 0.2, 0.022), 10.0, 10.0)
        chans = build_channels(m, m.basis())
        res = run_trajectories(sched, chans, 2000, seed=2024)
        oracle = cavity_decay_fidelity(sched, m.kappa)
        c.note(f"cavity-only F={res.mean:.5f}+-{res.stderr:.5f} vs {oracle:.5f}")
        assert abs(res.mean - oracle) <= 3 * res.stderr

        b = CompositeBasis(2, 1)
        kappa = 0.02
        a = embed(sp.diags([1.0], 1, shape=(2, 2)).tocsr(), b.cavity_site, b)
        zero = sp.csr_matrix((b.dim, b.dim), dtype=complex)
        one = b.index((0, 0, 1))
        for t in (10.0, 50.0):
            dec = unravel([(zero, t)], basis_state(b, (0, 0, 1)).amplitudes, [NoiseChannel("cavity.decay", a, kappa)],
                          2000, seed=int(t), evaluate=lambda v: abs(v[one]) ** 2)
            assert abs(dec.mean - math.exp(-kappa * t)) <= 3 * dec.stderr

        silent = build_channels(m, m.basis(), include_zero=True)
        for ch in silent:
            object.__setattr__(ch, "rate", 0.0)
        z = run_trajectories(sched, silent, 10, seed=1)
        ref = fidelity_numeric(run_protocol(sched, samples_per_segment=1).final)
        hs, frame = segment_hamiltonians(sched, m.basis(), "full")
        finals = []
        unravel(list(zip(hs, [s.duration for s in sched.segments])),
                frame.to_frame(initial_product_state(m.basis()).amplitudes, 0.0), silent, 1, seed=0,
                evaluate=lambda v: finals.append(v) or 0.0, finalize=lambda v: frame.to_lab(v, sched.tau))
        unitary = run_protocol(sched, mode="full", samples_per_segment=1).final.amplitudes
        engine = float(np.linalg.norm(finals[0] - unitary))
        c.note(f"zero-rate |F-F0|={abs(z.mean - ref):.1e}, engine={engine:.1e}")
        assert abs(z.mean - ref) <= 1e-10 and z.stderr == 0
        assert engine <= 1e-10
        assert time.perf_counter() - t0 < 600


def test_criterion_10_pulse_speed_scaling():
    with Criterion(10, "step-(i) map error vs pulse speed") as c:
        t0 = time.perf_counter()
        m = uniform_model(2)
        calib = calibrate(m, 0.2, 0.022)
        opts = CouplingOptions(jc_during_pulses=True)
        errs = [step_one_map_error(build_ghz_schedule(m, calib, om, om), options=opts) for om in (5, 10, 20, 50)]
        c.note("errors " + ", ".join(f"{e:.3g}" for e in errs))
        assert all(a > b for a, b in zip(errs, errs[1:]))
        assert time.perf_counter() - t0 < 300


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

"""Command-line front end: ``ghzcavity {calibrate,simulate,sweep,noise}``.

Exit codes: 0 success, 2 configuration error, 3 infeasible calibration,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import noise as nz
from .calibrate import InfeasibleCalibration, calibrate, condition_report, feasibility_search
from .config import ConfigError, ExperimentConfig, dumps, expand_axis, set_path
from .evolve import PropagationError
from .hamiltonians import ModelError
from .metrics import fidelity_report, phase_error
from .protocol import MODES, ScheduleError, build_ghz_schedule, run_protocol, step_one_map_error

log = logging.getLogger("ghzcavity")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4


# -- orchestration -----------------------------------------------------------------


def prepare(cfg: ExperimentConfig):
    """Model, calibration and schedule for a config (dimensionless units)."""
    model = cfg.model()
    c = cfg.calibration
    if c.strategy == "explicit":
        calib = calibrate(model, c.delta_over_g, c.lambda_over_g)
    else:
        calib = feasibility_search(model, c.margins, c.grid_points)
    try:
        schedule = build_ghz_schedule(model, calib, cfg.protocol.rabi_r_over_g, cfg.protocol.rabi_r_tilde_over_g)
    except ScheduleError as exc:
        raise ConfigError(str(exc), "protocol") from exc
    return model, calib, schedule


def _schedule_doc(cfg, schedule):
    d = schedule.durations
    return {
        "durations_over_g_inv": {k: v for k, v in d.items()},
        "durations_s": {k: cfg.device.seconds(v) for k, v in d.items()},
        "tau_g_over_pi": schedule.tau / math.pi,
        "tau_s": cfg.device.seconds(schedule.tau),
    }


def calibration_document(cfg: ExperimentConfig) -> dict:
    model, calib, schedule = prepare(cfg)
    cond = condition_report(model, calib, schedule, cfg.calibration.thresholds)
    return {
        "config": cfg.to_dict(),
        "units": "energies and rates in units of g, times in units of 1/g unless suffixed _s",
        "calibration": calib.to_dict(),
        "lambda_over_g": calib.lam,
        "lambda_j_over_g_j": [float(x) for x in calib.lam_j / calib.g_j],
        "schedule": _schedule_doc(cfg, schedule),
        "conditions": cond.to_dict(),
        "worst_flag": cond.worst_flag,
    }


def simulate_document(cfg: ExperimentConfig):
    model, calib, schedule = prepare(cfg)
    cond = condition_report(model, calib, schedule, cfg.calibration.thresholds)
    run = run_protocol(schedule, mode=cfg.protocol.mode, cfg=cfg.propagator.build(),
                       samples_per_segment=cfg.protocol.samples_per_segment, options=cfg.protocol.options())
    rep = fidelity_report(run, cond.phase_error)
    doc = {
        "config": cfg.to_dict(),
        "mode": cfg.protocol.mode,
        "fidelity": rep.to_dict(),
        "occupation_p": [float(x) for x in cond.occupation],
        "schedule": _schedule_doc(cfg, schedule),
    }
    return doc, run


def sweep_row(cfg: ExperimentConfig) -> dict:
    """One sweep row: fidelities, leakage, p_j, phi_j and the two model-error diagnostics."""
    doc, run = simulate_document(cfg)
    schedule = run.schedule
    pcfg = cfg.propagator.build()
    opts = cfg.protocol.options()
    fid = doc["fidelity"]
    row = {
        "F_numeric": fid["F_numeric"],
        "F_analytic": fid["F_analytic"],
        "F_difference": fid["F_difference"],
        "photon_ge2_max": fid["leakage"]["photon_ge2_max"],
        "level3_max": max(fid["leakage"]["level3_max"]),
        "tau_g_over_pi": doc["schedule"]["tau_g_over_pi"],
    }
    for k, (p, phi) in enumerate(zip(doc["occupation_p"], fid["phi"]), start=2):
        row[f"p_{k}"] = p
        row[f"phi_{k}_rad"] = phi
    row["eff_vs_full_error"] = phase_error(schedule, pcfg, opts)
    row["step1_map_error"] = step_one_map_error(schedule, pcfg, opts)
    return row


def _sweep_task(args):
    tree, paths, value = args
    for p in paths:
        set_path(tree, p, value)
    return sweep_row(ExperimentConfig.from_dict(tree))


def sweep_rows(cfg: ExperimentConfig, axis: str, values, jobs: int = 1):
    """Rows sorted by value; every row is computed from its own config copy."""
    tree = cfg.to_dict()
    paths = []
    for part in axis.split(","):
        paths += expand_axis(tree, part.strip())
    for p in paths:
        set_path(copy.deepcopy(tree), p, 0.0)  # reject non-numeric targets up front
    values = sorted(float(v) for v in values)
    tasks = [(copy.deepcopy(tree), paths, v) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    return values, rows


def _process_group(label: str) -> str:
    site, kind = label.split(".", 1)
    return f"spectators.{kind}" if site.startswith("q") and site != "q1" else label


def noise_document(cfg: ExperimentConfig) -> dict:
    model, calib, schedule = prepare(cfg)
    basis = model.basis()
    ns = cfg.noise
    mode = cfg.protocol.mode
    opts = cfg.protocol.options()
    pcfg = cfg.propagator.build()
    channels = nz.build_channels(model, basis, include_zero=True)
    total = nz.run_trajectories(schedule, channels, ns.n_traj, cfg.seed, mode, ns.time_step_over_g_inv, opts, cfg=pcfg)
    if ns.max_stderr is not None and total.stderr > ns.max_stderr:
        raise nz.NoiseError(
            f"insufficient trajectories: stderr {total.stderr:.3g} exceeds max_stderr {ns.max_stderr:.3g} "
            f"with n_traj = {ns.n_traj}"
        )
    doc = {
        "config": cfg.to_dict(),
        "mode": mode,
        "total": total.to_dict(),
        "channels": {c.label: {"rate_over_g": c.rate, "rate_per_s": c.rate * cfg.device.g_rad_per_s} for c in channels},
        "cavity_decay_estimate": nz.cavity_decay_fidelity(schedule, model.kappa),
        "tau_s": cfg.device.seconds(schedule.tau),
    }
    if ns.attribution:
        # one process at a time; spectator channels of the same kind are grouped
        groups = {}
        for c in channels:
            if c.rate > 0:
                groups.setdefault(_process_group(c.label), []).append(c)
        attr = {}
        for k, (name, members) in enumerate(groups.items()):
            res = nz.run_trajectories(schedule, members, ns.n_traj, [cfg.seed, k + 1], mode,
                                      ns.time_step_over_g_inv, opts, cfg=pcfg)
            attr[name] = {"mean": res.mean, "stderr": res.stderr, "loss": 1.0 - res.mean}
        doc["attribution"] = attr
        if attr:
            doc["dominant_channel"] = max(attr, key=lambda lab: attr[lab]["loss"])
    return doc


# -- file output ---------------------------------------------------------------------


def write_json(path: Path, doc: dict):
    path.write_text(dumps(doc) + "\n", encoding="utf-8")


def write_trace(path: Path, run, cfg: ExperimentConfig):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "time_s", "observable", "value_probability"])
        for seg, t, label, v in run.trace.rows():
            w.writerow([seg, format(cfg.device.seconds(t), ".17g"), label, format(v, ".17g")])


def sweep_columns(n_qubits: int) -> list:
    cols = ["F_numeric", "F_analytic", "F_difference", "photon_ge2_max", "level3_max", "tau_g_over_pi"]
    for k in range(2, n_qubits + 1):
        cols += [f"p_{k}", f"phi_{k}_rad"]
    return cols + ["eff_vs_full_error", "step1_map_error"]


def write_sweep(path: Path, axis: str, values, rows, n_qubits: int):
    keys = sweep_columns(n_qubits)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", *keys])
        for v, row in zip(values, rows):
            w.writerow([format(v, ".17g"), *(format(float(row[k]), ".17g") for k in keys)])
    log.info("sweep over %s: %d rows", axis, len(rows))


# -- argument handling ---------------------------------------------------------------


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ghzcavity", description="GHZ preparation in cavity QED: calibration and simulation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("calibrate", "solve pulse settings and audit the operating conditions"),
        ("simulate", "run the protocol and report fidelity and leakage"),
        ("sweep", "repeat the simulation over a parameter axis"),
        ("noise", "quantum-trajectory estimate of the noisy fidelity"),
    ]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="experiment config (JSON)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=_u64, default=None, help="override the config seed")
        s.add_argument("--mode", choices=MODES, default=None, help="override protocol.mode")
        if name == "sweep":
            s.add_argument("--axis", required=True,
                           help="dotted config path(s), comma-separated; '*' matches every list entry")
            s.add_argument("--values", required=True, help="comma-separated numbers (may be empty)")
            s.add_argument("--jobs", type=int, default=1, help="worker processes")
    return p


def _parse_values(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got {text!r}") from None


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config).with_overrides(args.mode, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.dumps(), encoding="utf-8")
        if args.command == "calibrate":
            write_json(out / cfg.output.report, calibration_document(cfg))
        elif args.command == "simulate":
            doc, run_ = simulate_document(cfg)
            write_json(out / cfg.output.report, doc)
            write_trace(out / cfg.output.trace, run_, cfg)
        elif args.command == "sweep":
            values, rows = sweep_rows(cfg, args.axis, _parse_values(args.values), args.jobs)
            write_sweep(out / cfg.output.sweep, args.axis, values, rows, len(cfg.device.spectators) + 1)
        else:
            write_json(out / cfg.output.report, noise_document(cfg))
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleCalibration as exc:
        qubits = f" (qubits {list(exc.qubits)})" if exc.qubits else ""
        print(f"infeasible calibration [{exc.binding}]{qubits}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PropagationError, nz.NoiseError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()


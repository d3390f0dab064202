"""Experiment configuration: a JSON tree with explicit units on every physical field.

Frequencies and couplings are given as ordinary frequencies in Hz (``*_hz``,
``*_over_2pi_hz``) and rates in 1/s (``*_per_s``).  :meth:`ExperimentConfig.model`
converts everything to the dimensionless form used internally, where the
qubit-1 coupling ``g`` is 1 and times are in units of ``1/g``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields, replace

from .calibrate import Margins, Thresholds
from .evolve import METHODS, PropagatorConfig
from .hamiltonians import DeviceModel, ModelError, SpectatorQubit
from .protocol import MODES, CouplingOptions

TWO_PI = 2 * math.pi


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path, ``line`` the JSON line if known."""

    def __init__(self, message, path="", line=None):
        self.path = path
        self.line = line
        where = f"{path}: " if path else ""
        at = f" (line {line})" if line else ""
        super().__init__(f"{where}{message}{at}")


# -- deterministic JSON ------------------------------------------------------------


def format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    return text if any(c in text for c in ".en") else text + ".0"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits and stable layout."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if hasattr(obj, "item"):  # numpy scalar
        return dumps(obj.item(), indent, _level)
    return json.dumps(obj)


def _line_of(text: str, path: str):
    """Best-effort line number of the last key in ``path`` within ``text``."""
    if not text:
        return None
    pos = 0
    found = None
    for part in path.split("."):
        if part.isdigit() or part == "":
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
        if not m:
            break
        pos = m.end()
        found = m.start()
    return None if found is None else text.count("\n", 0, found) + 1


# -- schema ------------------------------------------------------------------------


def _num(value, path, *, positive=False, nonneg=False, allow_inf=False):
    if isinstance(value, str) and allow_inf and value == "inf":
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    value = float(value)
    if math.isnan(value) or (math.isinf(value) and not allow_inf):
        raise ConfigError("must be finite", path)
    if positive and not value > 0:
        raise ConfigError(f"must be > 0, got {value:g}", path)
    if nonneg and value < 0:
        raise ConfigError(f"must be >= 0, got {value:g}", path)
    return value


def _int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", path)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value}", path)
    return value


def _bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(f"expected true/false, got {value!r}", path)
    return value


def _choice(value, path, options):
    if value not in options:
        raise ConfigError(f"expected one of {list(options)}, got {value!r}", path)
    return value


def _table(value, path):
    if not isinstance(value, dict):
        raise ConfigError("expected an object", path)
    return value


def _check_keys(d, path, allowed):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown field(s) {extra}", f"{path}.{extra[0]}" if path else extra[0])


def _opt(d, key, conv, path, default=None, **kw):
    if key not in d or d[key] is None:
        return default
    return conv(d[key], f"{path}.{key}", **kw)


def _req(d, key, conv, path, **kw):
    if key not in d or d[key] is None:
        raise ConfigError("missing required field", f"{path}.{key}")
    return conv(d[key], f"{path}.{key}", **kw)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


@dataclass(frozen=True)
class SpectatorConfig:
    """Qubit ``j >= 2``: either transition frequencies or a cavity detuning ratio."""

    g_over_2pi_hz: float
    cavity_detuning_over_g_j: float | None = None
    f21_hz: float | None = None
    f32_hz: float | None = None
    gamma_1r_per_s: float = 0.0
    gamma_1p_per_s: float = 0.0

    @classmethod
    def from_dict(cls, d, path):
        _table(d, path)
        _check_keys(d, path, [f.name for f in fields(cls)])
        out = cls(
            g_over_2pi_hz=_req(d, "g_over_2pi_hz", _num, path, positive=True),
            cavity_detuning_over_g_j=_opt(d, "cavity_detuning_over_g_j", _num, path, positive=True),
            f21_hz=_opt(d, "f21_hz", _num, path, positive=True),
            f32_hz=_opt(d, "f32_hz", _num, path, positive=True),
            gamma_1r_per_s=_opt(d, "gamma_1r_per_s", _num, path, 0.0, nonneg=True),
            gamma_1p_per_s=_opt(d, "gamma_1p_per_s", _num, path, 0.0, nonneg=True),
        )
        explicit = out.f21_hz is not None and out.f32_hz is not None
        if (out.f21_hz is None) != (out.f32_hz is None):
            raise ConfigError("f21_hz and f32_hz must be given together", path)
        if explicit == (out.cavity_detuning_over_g_j is not None):
            raise ConfigError("give exactly one of cavity_detuning_over_g_j or (f21_hz, f32_hz)", path)
        return out

    def to_dict(self):
        return _drop_none({f.name: getattr(self, f.name) for f in fields(self)})


@dataclass(frozen=True)
class DeviceConfig:
    g_over_2pi_hz: float
    cavity_frequency_hz: float
    spectators: tuple
    quality_factor: float = math.inf
    n_max: int = 2
    qubit1_f21_hz: float | None = None
    gamma_1r_per_s: float = 0.0
    gamma_1p_per_s: float = 0.0
    gamma_2r_per_s: float = 0.0
    gamma_2p_per_s: float = 0.0

    @classmethod
    def from_dict(cls, d, path="device"):
        _table(d, path)
        _check_keys(d, path, [f.name for f in fields(cls)])
        specs = d.get("spectators")
        if not isinstance(specs, list):
            raise ConfigError("expected a list of spectator qubits", f"{path}.spectators")
        if not specs:
            raise ConfigError("need at least one spectator (n >= 2)", f"{path}.spectators")
        return cls(
            g_over_2pi_hz=_req(d, "g_over_2pi_hz", _num, path, positive=True),
            cavity_frequency_hz=_req(d, "cavity_frequency_hz", _num, path, positive=True),
            spectators=tuple(SpectatorConfig.from_dict(s, f"{path}.spectators.{k}") for k, s in enumerate(specs)),
            quality_factor=_opt(d, "quality_factor", _num, path, math.inf, positive=True, allow_inf=True),
            n_max=_opt(d, "n_max", _int, path, 2, minimum=1),
            qubit1_f21_hz=_opt(d, "qubit1_f21_hz", _num, path, positive=True),
            gamma_1r_per_s=_opt(d, "gamma_1r_per_s", _num, path, 0.0, nonneg=True),
            gamma_1p_per_s=_opt(d, "gamma_1p_per_s", _num, path, 0.0, nonneg=True),
            gamma_2r_per_s=_opt(d, "gamma_2r_per_s", _num, path, 0.0, nonneg=True),
            gamma_2p_per_s=_opt(d, "gamma_2p_per_s", _num, path, 0.0, nonneg=True),
        )

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["spectators"] = [s.to_dict() for s in self.spectators]
        return _drop_none(out)

    @property
    def g_rad_per_s(self) -> float:
        return TWO_PI * self.g_over_2pi_hz

    def model(self) -> DeviceModel:
        """Dimensionless model: frequencies divided by ``g/2pi``, rates by ``g``."""
        gh = self.g_over_2pi_hz
        g_rad = self.g_rad_per_s
        wc = self.cavity_frequency_hz / gh
        spect = []
        for s in self.spectators:
            gj = s.g_over_2pi_hz / gh
            if s.cavity_detuning_over_g_j is not None:
                w31 = wc + s.cavity_detuning_over_g_j * gj
                w21 = w32 = 0.5 * w31
            else:
                w21, w32 = s.f21_hz / gh, s.f32_hz / gh
            spect.append(SpectatorQubit(g=gj, omega_21=w21, omega_32=w32,
                                        gamma_1r=s.gamma_1r_per_s / g_rad, gamma_1p=s.gamma_1p_per_s / g_rad))
        try:
            return DeviceModel(
                g=1.0, omega_c=wc, spectators=tuple(spect),
                omega_21=None if self.qubit1_f21_hz is None else self.qubit1_f21_hz / gh,
                gamma_1r=self.gamma_1r_per_s / g_rad, gamma_1p=self.gamma_1p_per_s / g_rad,
                gamma_2r=self.gamma_2r_per_s / g_rad, gamma_2p=self.gamma_2p_per_s / g_rad,
                quality_factor=self.quality_factor, n_max=self.n_max,
            )
        except ModelError as exc:
            raise ConfigError(str(exc), "device") from exc

    def seconds(self, t_dimensionless: float) -> float:
        return t_dimensionless / self.g_rad_per_s


@dataclass(frozen=True)
class ProtocolConfig:
    rabi_r_over_g: float = 10.0
    rabi_r_tilde_over_g: float = 10.0
    mode: str = "closed-form"
    samples_per_segment: int = 10
    jc_during_pulses: bool = False
    jc_during_step2: bool = True
    spectator_coupling: bool = True

    @classmethod
    def from_dict(cls, d, path="protocol"):
        _table(d, path)
        _check_keys(d, path, [f.name for f in fields(cls)])
        base = cls()
        return cls(
            rabi_r_over_g=_opt(d, "rabi_r_over_g", _num, path, base.rabi_r_over_g, positive=True),
            rabi_r_tilde_over_g=_opt(d, "rabi_r_tilde_over_g", _num, path, base.rabi_r_tilde_over_g, positive=True),
            mode=_opt(d, "mode", _choice, path, base.mode, options=MODES),
            samples_per_segment=_opt(d, "samples_per_segment", _int, path, base.samples_per_segment, minimum=1),
            jc_during_pulses=_opt(d, "jc_during_pulses", _bool, path, base.jc_during_pulses),
            jc_during_step2=_opt(d, "jc_during_step2", _bool, path, base.jc_during_step2),
            spectator_coupling=_opt(d, "spectator_coupling", _bool, path, base.spectator_coupling),
        )

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def options(self) -> CouplingOptions:
        return CouplingOptions(self.jc_during_pulses, self.jc_during_step2, self.spectator_coupling)


@dataclass(frozen=True)
class CalibrationConfig:
    strategy: str = "search"
    delta_over_g: float | None = None
    lambda_over_g: float | None = None
    margins: Margins = field(default_factory=Margins)
    thresholds: Thresholds = field(default_factory=Thresholds)
    grid_points: int = 400

    @classmethod
    def from_dict(cls, d, path="calibration"):
        _table(d, path)
        _check_keys(d, path, [f.name for f in fields(cls)])
        m = _table(d.get("margins", {}), f"{path}.margins")
        _check_keys(m, f"{path}.margins", [f.name for f in fields(Margins)])
        base = Margins()
        margins = Margins(**{
            f.name: _opt(m, f.name, _num, f"{path}.margins", getattr(base, f.name), positive=True)
            for f in fields(Margins)
        })
        t = _table(d.get("thresholds", {}), f"{path}.thresholds")
        _check_keys(t, f"{path}.thresholds", ["warn", "fail"])
        thresholds = Thresholds(
            warn=_opt(t, "warn", _num, f"{path}.thresholds", 10.0, positive=True),
            fail=_opt(t, "fail", _num, f"{path}.thresholds", 3.0, positive=True),
        )
        out = cls(
            strategy=_opt(d, "strategy", _choice, path, "search", options=("search", "explicit")),
            delta_over_g=_opt(d, "delta_over_g", _num, path, positive=True),
            lambda_over_g=_opt(d, "lambda_over_g", _num, path, positive=True),
            margins=margins,
            thresholds=thresholds,
            grid_points=_opt(d, "grid_points", _int, path, 400, minimum=2),
        )
        if out.strategy == "explicit" and (out.delta_over_g is None or out.lambda_over_g is None):
            raise ConfigError("explicit strategy needs delta_over_g and lambda_over_g", f"{path}.strategy")
        return out

    def to_dict(self):
        return _drop_none({
            "strategy": self.strategy,
            "delta_over_g": self.delta_over_g,
            "lambda_over_g": self.lambda_over_g,
            "margins": {f.name: getattr(self.margins, f.name) for f in fields(Margins)},
            "thresholds": {"warn": self.thresholds.warn, "fail": self.thresholds.fail},
            "grid_points": self.grid_points,
        })


@dataclass(frozen=True)
class PropagatorSettings:
    method: str = "static-krylov"
    time_step_over_g_inv: float = 0.5
    krylov_dim: int = 30
    tolerance: float = 1e-10

    @classmethod
    def from_dict(cls, d, path="propagator"):
        _table(d, path)
        _check_keys(d, path, [f.name for f in fields(cls)])
        base = cls()
        return cls(
            method=_opt(d, "method", _choice, path, base.method, options=METHODS),
            time_step_over_g_inv=_opt(d, "time_step_over_g_inv", _num, path, base.time_step_over_g_inv, positive=True),
            krylov_dim=_opt(d, "krylov_dim", _int, path, base.krylov_dim, minimum=2),
            tolerance=_opt(d, "tolerance", _num, path, base.tolerance, positive=True),
        )

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def build(self) -> PropagatorConfig:
        return PropagatorConfig(self.method, self.time_step_over_g_inv, self.krylov_dim, self.tolerance)


@dataclass(frozen=True)
class NoiseSettings:
    n_traj: int = 200
    time_step_over_g_inv: float | None = None
    attribution: bool = True
    max_stderr: float | None = None

    @classmethod
    def from_dict(cls, d, path="noise"):
        _table(d, path)
        _check_keys(d, path, [f.name for f in fields(cls)])
        return cls(
            n_traj=_opt(d, "n_traj", _int, path, 200, minimum=1),
            time_step_over_g_inv=_opt(d, "time_step_over_g_inv", _num, path, positive=True),
            attribution=_opt(d, "attribution", _bool, path, True),
            max_stderr=_opt(d, "max_stderr", _num, path, positive=True),
        )

    def to_dict(self):
        return _drop_none({f.name: getattr(self, f.name) for f in fields(self)})


@dataclass(frozen=True)
class OutputConfig:
    report: str = "report.json"
    trace: str = "trace.csv"
    sweep: str = "sweep.csv"

    @classmethod
    def from_dict(cls, d, path="output"):
        _table(d, path)
        _check_keys(d, path, [f.name for f in fields(cls)])
        out = {}
        for f in fields(cls):
            v = d.get(f.name, f.default)
            if not isinstance(v, str) or not v:
                raise ConfigError("expected a non-empty file name", f"{path}.{f.name}")
            out[f.name] = v
        return cls(**out)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


SECTIONS = ("device", "protocol", "calibration", "propagator", "noise", "output", "seed")


@dataclass(frozen=True)
class ExperimentConfig:
    device: DeviceConfig
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    propagator: PropagatorSettings = field(default_factory=PropagatorSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, text: str | None = None) -> "ExperimentConfig":
        try:
            _table(d, "")
            _check_keys(d, "", SECTIONS)
            if "device" not in d:
                raise ConfigError("missing required section", "device")
            seed = d.get("seed", 0)
            if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
                raise ConfigError("expected an unsigned 64-bit integer", "seed")
            return cls(
                device=DeviceConfig.from_dict(d["device"]),
                protocol=ProtocolConfig.from_dict(d.get("protocol", {})),
                calibration=CalibrationConfig.from_dict(d.get("calibration", {})),
                propagator=PropagatorSettings.from_dict(d.get("propagator", {})),
                noise=NoiseSettings.from_dict(d.get("noise", {})),
                output=OutputConfig.from_dict(d.get("output", {})),
                seed=seed,
            )
        except ConfigError as exc:
            if exc.line is None and text:
                raise ConfigError(str(exc).split(": ", 1)[-1] if exc.path else str(exc), exc.path,
                                  _line_of(text, exc.path)) from None
            raise

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", "", exc.lineno) from None
        return cls.from_dict(data, text)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.loads(text)

    def to_dict(self) -> dict:
        return {
            "device": self.device.to_dict(),
            "protocol": self.protocol.to_dict(),
            "calibration": self.calibration.to_dict(),
            "propagator": self.propagator.to_dict(),
            "noise": self.noise.to_dict(),
            "output": self.output.to_dict(),
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return dumps(self.to_dict()) + "\n"

    def model(self) -> DeviceModel:
        return self.device.model()

    def with_overrides(self, mode: str | None = None, seed: int | None = None) -> "ExperimentConfig":
        out = self
        if mode is not None:
            out = replace(out, protocol=replace(out.protocol, mode=_choice(mode, "protocol.mode", MODES)))
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError("expected an unsigned 64-bit integer", "seed")
            out = replace(out, seed=seed)
        return out


# -- dotted-path edits (sweeps) ----------------------------------------------------


def expand_axis(tree: dict, path: str) -> list:
    """Concrete dotted paths matched by ``path``; ``*`` matches every list index or key."""
    parts = path.split(".")
    out = []

    def walk(node, k, prefix):
        if k == len(parts):
            out.append(prefix)
            return
        part = parts[k]
        if part == "*":
            keys = range(len(node)) if isinstance(node, list) else list(node) if isinstance(node, dict) else []
            for key in keys:
                walk(node[key], k + 1, prefix + [str(key)])
            return
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ConfigError("unknown axis path", path)
            walk(node[int(part)], k + 1, prefix + [part])
        elif isinstance(node, dict):
            if part not in node:
                raise ConfigError("unknown axis path", path)
            walk(node[part], k + 1, prefix + [part])
        else:
            raise ConfigError("unknown axis path", path)

    walk(tree, 0, [])
    if not out:
        raise ConfigError("axis path matches nothing", path)
    return [".".join(p) for p in out]


def set_path(tree: dict, path: str, value) -> None:
    node = tree
    parts = path.split(".")
    for part in parts[:-1]:
        node = node[int(part)] if isinstance(node, list) else node[part]
    last = parts[-1]
    key = int(last) if isinstance(node, list) else last
    current = node[key]
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ConfigError(f"axis must name a numeric field (found {current!r})", path)
    node[key] = value

"""Run configuration: one JSON document, defaults equal to the published system."""
from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .detectors import ApdConfig
from .physics import ChannelConfig, InterferometerConfig
from .protocol.transport import parse_transport

MODES = ("characterize", "protocol-estimate")


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class SourceConfig:
    signal_mean_photons: float = 0.2
    reference_ratio: float = 24.0
    delay_ns: float = 40.0

    @property
    def reference_mean_photons(self) -> float:
        return self.signal_mean_photons * self.reference_ratio


def _signal_apd() -> ApdConfig:
    return ApdConfig(efficiency=0.11, dark_prob_per_gate=1e-6, afterpulse_prob=1.2e-3,
                     afterpulse_decay_gates=8, afterpulse_ratio=0.5)


@dataclass(frozen=True)
class DetectorsConfig:
    apd0: ApdConfig = field(default_factory=_signal_apd)
    apd1: ApdConfig = field(default_factory=_signal_apd)
    apd2: ApdConfig = field(default_factory=lambda: ApdConfig(efficiency=0.10, dark_prob_per_gate=2e-5,
                                                              afterpulse_prob=0.0))


@dataclass(frozen=True)
class ControllerConfig:
    v_min: float = -5.0
    v_max: float = 5.0
    coeff_deg_per_volt: float = 294.0
    dither_amplitude_v: float = 0.02
    integration_window_s: float = 0.2
    gain: float = 0.3
    integral_gain: float = 0.03
    sift_gate_deg: float = 25.0
    enabled: bool = True
    acquire_on_start: bool = True
    scan_points: int = 16
    scan_step_deg: float = 25.0


@dataclass(frozen=True)
class WalkerConfig:
    step_size: float = 0.05
    epoch_s: float = 1.0
    enabled: bool = True


@dataclass(frozen=True)
class ProtocolConfig:
    block_size_bits: int = 5000
    reveal_batch: int = 4096
    sample_fraction: float = 0.0


@dataclass(frozen=True)
class InitialConfig:
    phase_offset_deg: float = 0.0


@dataclass(frozen=True)
class MetricsConfig:
    rate_window_s: float = 10.0
    zoom_s: float = 10.0


@dataclass(frozen=True)
class RunConfig:
    clock_hz: int = 250_000
    duration_s: float = 120.0
    seed: int = 1
    transport: str = "inproc"
    mode: str = "characterize"
    source: SourceConfig = field(default_factory=SourceConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    interferometer: InterferometerConfig = field(default_factory=InterferometerConfig)
    detectors: DetectorsConfig = field(default_factory=DetectorsConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    walker: WalkerConfig = field(default_factory=WalkerConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    @property
    def gates_per_epoch(self) -> int:
        return int(round(self.clock_hz * self.controller.integration_window_s))

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **overrides) -> "RunConfig":
        """Dotted-path overrides, e.g. ``cfg.replace(**{"channel.loss_db": 3.0})``."""
        return from_dict(merge(self.to_dict(), unflatten(overrides)))


# -- dict <-> dataclass -----------------------------------------------------

def _build(cls, data, path: str, errors: list[str]):
    if not isinstance(data, dict):
        errors.append(f"{path or '<root>'}: expected an object")
        return cls()
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            errors.append(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub = f"{path + '.' if path else ''}{f.name}"
        typ = hints[f.name]
        val = data[f.name]
        if dataclasses.is_dataclass(typ):
            kwargs[f.name] = _build(typ, val, sub, errors)
        elif typ is bool:
            if not isinstance(val, bool):
                errors.append(f"{sub}: expected true/false")
                continue
            kwargs[f.name] = val
        elif typ is int:
            if isinstance(val, bool) or not isinstance(val, int):
                errors.append(f"{sub}: expected an integer")
                continue
            kwargs[f.name] = val
        elif typ is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                errors.append(f"{sub}: expected a number")
                continue
            kwargs[f.name] = float(val)
        elif typ is str:
            if not isinstance(val, str):
                errors.append(f"{sub}: expected a string")
                continue
            kwargs[f.name] = val
        else:
            # fixed-length float tuples
            kwargs[f.name] = tuple(float(v) for v in val)
    return cls(**kwargs)


def from_dict(data: dict, check: bool = True) -> RunConfig:
    errors: list[str] = []
    cfg = _build(RunConfig, data, "", errors)
    if check:
        errors.extend(validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def unflatten(flat: dict) -> dict:
    out: dict = {}
    for key, val in flat.items():
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return out


def merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


# -- validation --------------------------------------------------------------

def _finite(cfg, path: str, errors: list[str]) -> None:
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        sub = f"{path}.{f.name}" if path else f.name
        if dataclasses.is_dataclass(val):
            _finite(val, sub, errors)
        elif isinstance(val, float) and not math.isfinite(val):
            errors.append(f"{sub}: must be finite")


def validate(cfg: RunConfig) -> list[str]:
    """Every invariant violation as ``"dotted.path: message"``; empty when valid."""
    errors: list[str] = []

    def need(ok: bool, path: str, msg: str) -> None:
        if not ok:
            errors.append(f"{path}: {msg}")

    _finite(cfg, "", errors)
    need(cfg.clock_hz > 0, "clock_hz", "must be > 0")
    need(cfg.duration_s > 0, "duration_s", "must be > 0")
    need(0 <= cfg.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
    try:
        parse_transport(cfg.transport)
    except ValueError as exc:
        errors.append(f"transport: {exc}")
    need(cfg.mode in MODES, "mode", f"must be one of {', '.join(MODES)}")

    s = cfg.source
    need(s.signal_mean_photons >= 0, "source.signal_mean_photons", "must be >= 0")
    need(s.reference_ratio > 0, "source.reference_ratio", "must be > 0")
    need(s.delay_ns > 0, "source.delay_ns", "must be > 0")

    c = cfg.channel
    for name in ("length_km", "loss_db", "drift_rate_deg_per_s", "shock_rate_per_hour", "shock_magnitude_deg",
                 "pol_drift_rate", "pol_axis_wander"):
        need(getattr(c, name) >= 0, f"channel.{name}", "must be >= 0")
    need(c.drift_correlation_s > 0, "channel.drift_correlation_s", "must be > 0")
    need(c.drift_window_s > 0, "channel.drift_window_s", "must be > 0")

    i = cfg.interferometer
    for name in ("visibility", "interfering_fraction", "reference_split"):
        need(0 <= getattr(i, name) <= 1, f"interferometer.{name}", "must lie in [0, 1]")

    for name in ("apd0", "apd1", "apd2"):
        a = getattr(cfg.detectors, name)
        p = f"detectors.{name}"
        for fld in ("efficiency", "dark_prob_per_gate", "afterpulse_prob", "afterpulse_ratio"):
            need(0 <= getattr(a, fld) <= 1, f"{p}.{fld}", "must lie in [0, 1]")
        need(a.afterpulse_decay_gates > 0, f"{p}.afterpulse_decay_gates", "must be > 0")
        if 0 <= a.afterpulse_prob <= 1 and 0 <= a.afterpulse_ratio <= 1 and a.afterpulse_decay_gates > 0:
            need(float(a.afterpulse_profile().sum()) < 1, f"{p}.afterpulse_prob",
                 "afterpulse sum must be < 1 (runaway cascade)")

    k = cfg.controller
    need(k.v_min < 0 < k.v_max, "controller.v_min", "need v_min < 0 < v_max (reset target is 0 V)")
    need(k.coeff_deg_per_volt > 0, "controller.coeff_deg_per_volt", "must be > 0")
    need(0 <= k.dither_amplitude_v < 0.5 * (k.v_max - k.v_min), "controller.dither_amplitude_v",
         "must be >= 0 and below half the voltage span")
    need(k.integration_window_s > 0, "controller.integration_window_s", "must be > 0")
    need(k.gain >= 0, "controller.gain", "must be >= 0")
    need(k.integral_gain >= 0, "controller.integral_gain", "must be >= 0")
    need(k.sift_gate_deg > 0, "controller.sift_gate_deg", "must be > 0")
    need(k.scan_points >= 3, "controller.scan_points", "must be >= 3")
    need(k.scan_step_deg > 0, "controller.scan_step_deg", "must be > 0")
    if k.enabled:
        need(k.dither_amplitude_v > 0, "controller.dither_amplitude_v", "must be > 0 while the lock is enabled")
    if cfg.clock_hz > 0 and k.integration_window_s > 0:
        need(cfg.gates_per_epoch >= 1, "controller.integration_window_s", "shorter than one clock period")

    w = cfg.walker
    need(w.step_size > 0, "walker.step_size", "must be > 0")
    need(w.epoch_s >= k.integration_window_s, "walker.epoch_s", "must be >= controller.integration_window_s")

    pr = cfg.protocol
    need(pr.block_size_bits >= 1, "protocol.block_size_bits", "must be >= 1")
    need(pr.reveal_batch >= 1, "protocol.reveal_batch", "must be >= 1")
    need(0 <= pr.sample_fraction < 1, "protocol.sample_fraction", "must lie in [0, 1)")
    if cfg.mode == "protocol-estimate":
        need(pr.sample_fraction > 0, "protocol.sample_fraction", "must be > 0 in protocol-estimate mode")

    m = cfg.metrics
    need(m.rate_window_s > 0, "metrics.rate_window_s", "must be > 0")
    need(m.zoom_s > 0, "metrics.zoom_s", "must be > 0")
    return errors


# -- files and presets ---------------------------------------------------------

PRESETS = ("paper_defaults", "paper_1mhz", "accelerated_drift", "noise_free")


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown preset {name!r} (known: {', '.join(PRESETS)})"])
    text = resources.files("activeqkd.presets").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def preset(name: str) -> RunConfig:
    return from_dict(merge(RunConfig().to_dict(), preset_dict(name)))


def load(path: str | Path) -> RunConfig:
    """Load a JSON config file (missing keys take defaults) or ``preset:NAME``."""
    spec = str(path)
    if spec.startswith("preset:"):
        return preset(spec.split(":", 1)[1])
    try:
        data = json.loads(Path(spec).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: invalid JSON ({exc})"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["<root>: expected an object"])
    base = RunConfig().to_dict()
    if "preset" in data:
        base = merge(base, preset_dict(data.pop("preset")))
    return from_dict(merge(base, data))


def dump(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"

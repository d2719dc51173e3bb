"""Experiment configuration and its line-oriented text format.

Grammar (one assignment per line)::

    line     := blank | comment | assign
    comment  := '#' anything
    assign   := section '.' key ws* '=' ws* value [ws* comment]
    section  := 'layout' | 'channel' | 'ukf' | 'receiver' | 'security' | 'run'
    key      := field name, optionally with a unit suffix
    value    := python-style int / float literal | 'true' | 'false' | bare string

Unit suffixes scale the value into SI and address the field without the
suffix: ``_us``/``_ms``/``_ns`` (seconds), ``_khz``/``_mhz``/``_ghz`` (Hz).
``channel.length_km`` sets the fibre transmittance at 0.2 dB/km.  A key may
appear at most once.  Fields not mentioned keep their defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .channel_sim import ChannelConfig, fiber_transmittance
from .errors import InvalidConfig
from .frame_builder import FrameLayout
from .param_est import SecurityParams
from .sync_dsp import ReceiverConfig
from .ukf import UkfConfig

MODES = ("shared-clock", "free-running")
_MODE_ALIASES = {"shared": "shared-clock", "free": "free-running"}
_UNITS = {"_us": 1e-6, "_ms": 1e-3, "_ns": 1e-9, "_khz": 1e3, "_mhz": 1e6, "_ghz": 1e9}


@dataclass(frozen=True)
class ExperimentConfig:
    layout: FrameLayout = FrameLayout()
    channel: ChannelConfig = ChannelConfig()
    ukf: UkfConfig = UkfConfig()
    receiver: ReceiverConfig = ReceiverConfig()
    security: SecurityParams = SecurityParams()
    n_frames: int = 100
    seed: int = 0
    mode: str = "free-running"
    forced_delay_error: int = 0  # samples, added after correct synchronization
    output_dir: str = "results"
    nbar: float = 1.45  # mean photon number of the quantum symbols
    ber_threshold: float = 0.15
    guard_symbols: int = 64  # cyclic extension on each side of the frame
    corrupt_fraction: float = 0.0  # frames whose sync is deliberately broken
    corrupt_symbols: int = 37  # frame-start error applied to corrupted frames
    workers: int = 1

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        object.__setattr__(self, "mode", mode)
        if mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_frames < 1:
            raise InvalidConfig("n_frames must be >= 1")
        if self.nbar <= 0:
            raise InvalidConfig("nbar must be positive")
        if not 0 < self.ber_threshold < 0.5:
            raise InvalidConfig("ber_threshold must be in (0, 0.5)")
        if self.guard_symbols * self.layout.sps <= self.layout.rrc().taps.size:
            raise InvalidConfig("guard must exceed the RRC filter length")
        if not 0 <= self.corrupt_fraction <= 1:
            raise InvalidConfig("corrupt_fraction must be in [0, 1]")
        if self.workers < 1:
            raise InvalidConfig("workers must be >= 1")

    @property
    def shared_clock(self) -> bool:
        return self.mode == "shared-clock"

    def effective_channel(self) -> ChannelConfig:
        """Channel as simulated: a shared clock removes the skew."""
        return replace(self.channel, skew=1.0) if self.shared_clock else self.channel


_SECTIONS = {
    "layout": FrameLayout,
    "channel": ChannelConfig,
    "ukf": UkfConfig,
    "receiver": ReceiverConfig,
    "security": SecurityParams,
}


def _parse_value(text: str, kind, where: str):
    text = text.strip()
    kind = kind if isinstance(kind, str) else getattr(kind, "__name__", str(kind))
    try:
        if kind == "bool":
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if kind == "int":
            return int(text, 0)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
    except ValueError:
        raise InvalidConfig(f"{where}: cannot read {text!r} as {kind}") from None
    raise InvalidConfig(f"{where}: field type {kind} is not configurable")


def _split_unit(key: str) -> tuple[str, float]:
    for suffix, scale in _UNITS.items():
        if key.endswith(suffix):
            return key[: -len(suffix)], scale
    return key, 1.0


def parse_config(text: str) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from the text format above."""
    updates: dict[str, dict[str, object]] = {name: {} for name in (*_SECTIONS, "run")}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        if "=" not in line:
            raise InvalidConfig(f"{where}: expected 'section.key = value'")
        lhs, rhs = (part.strip() for part in line.split("=", 1))
        if "." not in lhs:
            raise InvalidConfig(f"{where}: key {lhs!r} lacks a section prefix")
        section, key = lhs.split(".", 1)
        if section not in updates:
            raise InvalidConfig(f"{where}: unknown section {section!r}")
        if lhs in seen:
            raise InvalidConfig(f"{where}: {lhs} assigned twice")
        seen.add(lhs)

        if section == "channel" and key == "length_km":
            updates["channel"]["transmittance"] = fiber_transmittance(_parse_value(rhs, "float", where))
            continue
        name, scale = _split_unit(key)
        cls = ExperimentConfig if section == "run" else _SECTIONS[section]
        types = {f.name: f.type for f in fields(cls) if f.name not in _SECTIONS}
        if name not in types:
            raise InvalidConfig(f"{where}: unknown key {lhs!r}")
        value = _parse_value(rhs, types[name], where)
        if scale != 1.0:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidConfig(f"{where}: unit suffix on a non-numeric key")
            value = float(value) * scale
        updates[section][name] = value

    try:
        parts = {name: cls(**updates[name]) for name, cls in _SECTIONS.items()}
        return ExperimentConfig(**parts, **updates["run"])
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config`: every field, SI units, no suffixes."""
    lines = []
    for section in _SECTIONS:
        for f in fields(getattr(cfg, section)):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(getattr(cfg, section), f.name))}")
    for f in fields(cfg):
        if f.name not in _SECTIONS:
            lines.append(f"run.{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)

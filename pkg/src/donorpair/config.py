"""Experiment configuration: INI-style ``key = value`` sections.

Every section maps onto a dataclass; unknown sections or keys, unparsable
values and invariant violations raise :class:`ConfigError`.  ``auto`` (or an
empty value) selects a derived default where a field allows ``None``.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DonorPairError
from .signal_chain import TraceParams
from .spin_model import DonorPairParams, NuclearConfig
from .tunneling import TunnelingParams


@dataclass(frozen=True)
class InitialSettings:
    state: str = "Tplus"
    rabi_frequency: float = 1e6
    phase: float = 0.0


@dataclass(frozen=True)
class ExperimentSettings:
    repetitions: int = 10000
    subgroup_size: int = 100
    seed: int = 0
    detection: str = "trace"  # or "ideal"
    workers: int = 1
    save_traces: int = 0


@dataclass(frozen=True)
class EvolveSettings:
    initial: str = "Tminus"
    carrier: float | None = None  # f_alpha midpoint
    duration: float | None = None  # calibrated pi time
    rabi_frequency: float = 1e6
    phase: float = 0.0
    chirp_rate: float = 0.0
    sample_step: float | None = None
    husimi_theta: int = 91
    husimi_phi: int = 181


@dataclass(frozen=True)
class SpectrumSettings:
    initial: str | None = None  # Tminus (parallel) or down (anti-parallel)
    center: float | None = None  # drive line of the initial state
    offsets: str = "-3e6,-1e6,0,1e6,3e6"
    span: float = 4e6
    sweep_duration: float = 100e-6
    rabi_frequency: float = 0.2e6
    phase: float = 0.0


@dataclass(frozen=True)
class FitSettings:
    source: str = "synthetic"  # synthetic | simulated | file
    path: str | None = None
    tau: float = 32.8e-6
    samples: int = 10000
    bin_width: float = 5e-6
    min_duration_cut: float | None = None


@dataclass(frozen=True)
class CalibrationSettings:
    target_parallel_mean: float = 1.77
    target_tminus_mean: float = 0.21
    completion: float = 0.99
    trajectories: int = 4000
    rounds: int = 2
    iterations: int = 14
    min_threshold_sigmas: float = 5.0


SECTIONS = {
    "donor": DonorPairParams,
    "initial": InitialSettings,
    "tunneling": TunnelingParams,
    "trace": TraceParams,
    "experiment": ExperimentSettings,
    "evolve": EvolveSettings,
    "spectrum": SpectrumSettings,
    "fit": FitSettings,
    "calibration": CalibrationSettings,
}


@dataclass(frozen=True)
class ExperimentConfig:
    donor: DonorPairParams = field(default_factory=DonorPairParams)
    nuclear: NuclearConfig = NuclearConfig.DOWN_DOWN
    initial: InitialSettings = field(default_factory=InitialSettings)
    tunneling: TunnelingParams = field(default_factory=TunnelingParams)
    trace: TraceParams = field(default_factory=TraceParams)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    evolve: EvolveSettings = field(default_factory=EvolveSettings)
    spectrum: SpectrumSettings = field(default_factory=SpectrumSettings)
    fit: FitSettings = field(default_factory=FitSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)

    def __post_init__(self):
        ex = self.experiment
        if ex.repetitions < 1 or ex.subgroup_size < 1:
            raise ConfigError("repetitions and subgroup_size must be >= 1")
        if ex.repetitions % ex.subgroup_size:
            raise ConfigError("repetitions must be divisible by subgroup_size")
        if ex.detection not in ("trace", "ideal"):
            raise ConfigError("experiment.detection must be 'trace' or 'ideal'")
        if ex.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.fit.source not in ("synthetic", "simulated", "file"):
            raise ConfigError("fit.source must be synthetic, simulated or file")

    def with_section(self, name: str, **changes) -> "ExperimentConfig":
        section = getattr(self, name)
        if isinstance(section, NuclearConfig):
            raise ConfigError("use dataclasses.replace for the nuclear configuration")
        try:
            new = dataclasses.replace(section, **changes)
        except (TypeError, DonorPairError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
        return dataclasses.replace(self, **{name: new})

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.with_section("experiment", seed=int(seed))

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["nuclear"] = {"config": self.nuclear.name}
        for name in SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: _format(getattr(section, f.name)) for f in dataclasses.fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _parse_value(text: str, annotation, where: str):
    args = typing.get_args(annotation)
    optional = type(None) in args
    base = next((a for a in args if a is not type(None)), annotation) if args else annotation
    text = text.strip()
    if optional and text.lower() in ("", "auto", "none"):
        return None
    try:
        if base is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} as {base.__name__}") from exc


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    kwargs = {}
    for name in cp.sections():
        if name == "nuclear":
            extra = set(cp[name]) - {"config"}
            if extra:
                raise ConfigError(f"[nuclear] unknown keys: {sorted(extra)}")
            try:
                kwargs["nuclear"] = NuclearConfig.parse(cp[name].get("config", "DownDown"))
            except (DonorPairError, ValueError) as exc:
                raise ConfigError(f"[nuclear] {exc}") from exc
            continue
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = SECTIONS[name]
        types = _field_types(cls)
        values = {}
        for key, raw in cp[name].items():
            if key not in types:
                raise ConfigError(f"[{name}] unknown key {key!r}")
            values[key] = _parse_value(raw, types[key], f"[{name}] {key}")
        try:
            kwargs[name] = cls(**values)
        except (DonorPairError, ValueError, TypeError) as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (DonorPairError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a config file; ``None`` gives all defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc

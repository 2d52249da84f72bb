"""Pipeline configuration: TOML parsing, validation, serialization.

Every section is optional; missing keys fall back to the published
system defaults (F/1.0 70 mm lens, 12 um pixels, 8-12 um band, q = 90,
sigma = 0.0003, eta = 0.2, gate logits -3/-2/-4). Unknown keys are
rejected by name so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .blurmap import GateParams
from .degrade import DegradationConfig
from .errors import ConfigError, ParameterError
from .optics import PupilSpec


@dataclass(frozen=True)
class OpticsConfig:
    grid_size: int = 256
    aperture_diameter_mm: float = 70.0
    focal_length_mm: float = 70.0
    obstruction_ratio: float = 0.0
    rows: int = 6
    cols: int = 8
    wavelengths_um: tuple[float, ...] = (8.0, 9.0, 10.0, 11.0, 12.0)
    detector_pitch_um: float = 12.0
    psf_size: int = 31
    pad_factor: int = 4
    zernike: tuple[tuple[int, float], ...] = ()

    def pupil_spec(self) -> PupilSpec:
        return PupilSpec(grid_size=self.grid_size,
                         aperture_diameter=self.aperture_diameter_mm * 1e-3,
                         focal_length=self.focal_length_mm * 1e-3,
                         obstruction_ratio=self.obstruction_ratio)

    @property
    def wavelengths_m(self) -> list[float]:
        return [l * 1e-6 for l in self.wavelengths_um]

    @property
    def detector_pitch_m(self) -> float:
        return self.detector_pitch_um * 1e-6


@dataclass(frozen=True)
class GateConfig:
    theta_s: float = -3.0
    theta_l: float = -2.0
    theta_lap: float = -4.0
    alpha_s: float = 0.0
    alpha_l: float = 0.0
    alpha_lap: float = 0.0
    eta: float = 0.2
    height: int = 480
    width: int = 640

    def gate_params(self) -> GateParams:
        return GateParams(theta_s=self.theta_s, theta_l=self.theta_l,
                          theta_lap=self.theta_lap, alpha_s=self.alpha_s,
                          alpha_l=self.alpha_l, alpha_lap=self.alpha_lap,
                          eta=self.eta)


@dataclass(frozen=True)
class BridgeConfig:
    weights: str = ""
    channels: int = 4
    groups: int = 4
    se_ratio: int = 4


@dataclass(frozen=True)
class DatasetConfig:
    manifest_in: str = ""
    out_dir: str = "dataset_out"
    target_width: int = 640
    target_height: int = 480


@dataclass(frozen=True)
class PipelineConfig:
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    degradation: DegradationConfig = field(
        default_factory=DegradationConfig)
    gates: GateConfig = field(default_factory=GateConfig)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)


_RANGES = {
    ("optics", "grid_size"): (32, None),
    ("optics", "aperture_diameter_mm"): (1e-9, None),
    ("optics", "focal_length_mm"): (1e-9, None),
    ("optics", "detector_pitch_um"): (1e-9, None),
    ("optics", "rows"): (1, None),
    ("optics", "cols"): (1, None),
    ("optics", "psf_size"): (1, None),
    ("optics", "pad_factor"): (1, None),
    ("degradation", "patch_size"): (1, None),
    ("degradation", "overlap"): (0, None),
    ("degradation", "q"): (0.0, None),
    ("degradation", "sigma"): (0.0, None),
    ("degradation", "q_full_scale"): (1e-9, None),
    ("degradation", "seed"): (0, None),
    ("gates", "alpha_s"): (0.0, None),
    ("gates", "alpha_l"): (0.0, None),
    ("gates", "alpha_lap"): (0.0, None),
    ("gates", "eta"): (0.0, 1.0),
    ("gates", "height"): (1, None),
    ("gates", "width"): (1, None),
    ("bridge", "channels"): (1, None),
    ("bridge", "groups"): (1, None),
    ("bridge", "se_ratio"): (1, None),
    ("dataset", "target_width"): (1, None),
    ("dataset", "target_height"): (1, None),
}

_SECTIONS = {
    "optics": OpticsConfig,
    "degradation": DegradationConfig,
    "gates": GateConfig,
    "bridge": BridgeConfig,
    "dataset": DatasetConfig,
}


def _check_ranges(section: str, data: dict) -> None:
    for key, value in data.items():
        bounds = _RANGES.get((section, key))
        if bounds is None:
            continue
        lo, hi = bounds
        if lo is not None and value < lo:
            raise ConfigError(
                f"{section}.{key} = {value} violates lower bound {lo}")
        if hi is not None and value >= hi:
            raise ConfigError(
                f"{section}.{key} = {value} must be < {hi}")


def _check_types(section: str, cls, data: dict) -> None:
    defaults = {f.name: f.default for f in dataclasses.fields(cls)
                if f.default is not dataclasses.MISSING}
    for key, value in data.items():
        default = defaults.get(key)
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) \
                and not isinstance(value, bool)
        elif isinstance(default, str):
            ok = isinstance(value, str)
        else:
            ok = isinstance(value, list)
        if not ok:
            raise ConfigError(
                f"{section}.{key} has wrong type "
                f"{type(value).__name__}")


def _build_section(section: str, data: dict):
    cls = _SECTIONS[section]
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(
            f"unknown keys in [{section}]: {', '.join(unknown)}")
    _check_types(section, cls, data)
    _check_ranges(section, data)
    if section == "optics" and "zernike" in data:
        data = dict(data)
        data["zernike"] = tuple(
            (int(j), float(c)) for j, c in data["zernike"])
    if section == "optics" and "wavelengths_um" in data:
        data = dict(data)
        data["wavelengths_um"] = tuple(
            float(l) for l in data["wavelengths_um"])
    try:
        return cls(**data)
    except ParameterError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse_config_text(text: str) -> PipelineConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    kwargs = {}
    for section in _SECTIONS:
        data = raw.get(section, {})
        if not isinstance(data, dict):
            raise ConfigError(f"[{section}] must be a table")
        kwargs[section] = _build_section(section, data)
    return PipelineConfig(**kwargs)


def parse_config(path: str | Path) -> PipelineConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize value {value!r}")


def serialize_config(cfg: PipelineConfig) -> str:
    """Emit the config as TOML; parse_config_text inverts it exactly."""
    lines = []
    for section, sub in (("optics", cfg.optics),
                         ("degradation", cfg.degradation),
                         ("gates", cfg.gates), ("bridge", cfg.bridge),
                         ("dataset", cfg.dataset)):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(sub):
            value = getattr(sub, f.name)
            if f.name == "zernike":
                value = [list(pair) for pair in value]
            lines.append(f"{f.name} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)

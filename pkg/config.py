from __future__ import annotations
from dataclasses import dataclass, field, fields, replace

import os
from typing import Any, Dict, Tuple

import toml


class ConfigError(ValueError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class GeometricFitConfig:
    max_iterations: int = 100
    step_tolerance: float = 1e-8
    damping_init: float = 1e-3

    def __post_init__(self) -> None:
        _require(self.max_iterations >= 1, "max_iterations must be >= 1")
        _require(self.step_tolerance > 0, "step_tolerance must be > 0")
        _require(self.damping_init > 0, "damping_init must be > 0")


@dataclass(frozen=True)
class CpdConfig:
    outlier_weight: float = 0.1
    max_iterations: int = 150
    sigma_tolerance: float = 1e-8
    estimate_scale: bool = True

    # Restarts (rotation / reflection)
    n_rotations: int = 8
    try_reflection: bool = True

    # Targets larger than this are uniformly subsampled before EM
    max_target_points: int = 5000

    def __post_init__(self) -> None:
        _require(0.0 <= self.outlier_weight < 1.0, "outlier_weight must lie in [0, 1)")
        _require(self.max_iterations >= 1, "max_iterations must be >= 1")
        _require(self.sigma_tolerance > 0, "sigma_tolerance must be > 0")
        _require(self.n_rotations >= 1, "n_rotations must be >= 1")
        _require(self.max_target_points >= 2, "max_target_points must be >= 2")


@dataclass(frozen=True)
class MorphConfig:
    profile_half_length: float = 20.0
    profile_step: float = 1.0
    max_iterations: int = 10
    convergence_tolerance: float = 0.5
    tau: float = 0.5
    closed: bool = True
    # Most confident foreground pixels kept for the restarted CPD pose initialisation
    init_target_points: int = 400
    cpd: CpdConfig = field(default_factory=CpdConfig)

    def __post_init__(self) -> None:
        _require(self.profile_half_length > 0, "profile_half_length must be > 0")
        _require(self.profile_step > 0, "profile_step must be > 0")
        _require(self.max_iterations >= 1, "max_iterations must be >= 1")
        _require(self.convergence_tolerance >= 0, "convergence_tolerance must be >= 0")
        _require(0.0 <= self.tau <= 1.0, "tau must lie in [0, 1]")
        _require(self.init_target_points >= 2, "init_target_points must be >= 2")


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 2000
    mu_water: float = 0.02  # per mm
    saturation_fraction: float = 0.025
    gray_min: int = 20
    gray_max: int = 255

    def __post_init__(self) -> None:
        _require(self.n_samples >= 2, "n_samples must be >= 2")
        _require(self.mu_water > 0, "mu_water must be > 0")
        _require(0.0 <= self.saturation_fraction < 1.0, "saturation_fraction must lie in [0, 1)")
        _require(0 <= self.gray_min < self.gray_max <= 255, "need 0 <= gray_min < gray_max <= 255")


@dataclass(frozen=True)
class SynthConfig:
    ridge_sigma: float = 2.0
    peak_value: float = 1.0
    background_noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.ridge_sigma > 0, "ridge_sigma must be > 0")
        _require(0.0 < self.peak_value <= 1.0, "peak_value must lie in (0, 1]")
        _require(self.background_noise_sigma >= 0, "background_noise_sigma must be >= 0")
        _require(0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class CircleDetectConfig:
    tau: float = 0.5
    min_foreground: int = 100
    method: str = "algebraic"
    geometric: GeometricFitConfig = field(default_factory=GeometricFitConfig)

    def __post_init__(self) -> None:
        _require(0.0 <= self.tau <= 1.0, "tau must lie in [0, 1]")
        _require(self.min_foreground >= 3, "min_foreground must be >= 3")
        _require(self.method in ("algebraic", "geometric"), "method must be algebraic or geometric")


@dataclass(frozen=True)
class PdmConfig:
    variance_fraction: float = 0.95

    def __post_init__(self) -> None:
        _require(0.0 < self.variance_fraction <= 1.0, "variance_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class AppConfig:
    circle: CircleDetectConfig = field(default_factory=CircleDetectConfig)
    pdm: PdmConfig = field(default_factory=PdmConfig)
    morph: MorphConfig = field(default_factory=MorphConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


def _build(cls, section: Dict[str, Any], nested: Dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    return cls(**{**section, **nested})


def load_config(filename: str) -> AppConfig:
    """
    Load the TOML defaults file. A missing file yields the built-in defaults.

    Sections: [circle], [circle.geometric], [pdm], [morph], [morph.cpd],
    [render], [synth].
    """
    if not os.path.exists(filename):
        return AppConfig()
    try:
        data = toml.load(filename)
    except toml.TomlDecodeError as e:
        raise ConfigError(f"{filename}: {e}") from e

    unknown = set(data) - {f.name for f in fields(AppConfig)}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    circle = dict(data.get("circle", {}))
    geometric = _build(GeometricFitConfig, circle.pop("geometric", {}), {})
    morph = dict(data.get("morph", {}))
    cpd = _build(CpdConfig, morph.pop("cpd", {}), {})

    return AppConfig(
        circle=_build(CircleDetectConfig, circle, {"geometric": geometric}),
        pdm=_build(PdmConfig, data.get("pdm", {}), {}),
        morph=_build(MorphConfig, morph, {"cpd": cpd}),
        render=_build(RenderConfig, data.get("render", {}), {}),
        synth=_build(SynthConfig, data.get("synth", {}), {}),
    )


def with_overrides(cfg, **overrides):
    """dataclasses.replace that ignores None values (unset CLI flags)."""
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def parse_triple(text: str) -> Tuple[float, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected x,y,z but got {text!r}")
    return float(parts[0]), float(parts[1]), float(parts[2])

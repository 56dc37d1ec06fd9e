"""Pipeline configuration: one JSON object shared by all CLI commands.

Unknown keys are rejected so typos fail loudly instead of silently falling
back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .monte_carlo import McConfig
from .operator_moments import CORRECTED, VARIANCE_MODES
from .pinv_moments import QuadratureConfig


@dataclass(frozen=True)
class KdeConfig:
    bandwidth: float | None = None  # None means automatic (Silverman)
    grid_points: int = 256

    def __post_init__(self):
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigError(f"kde bandwidth must be positive, got {self.bandwidth}")
        if self.grid_points < 2:
            raise ConfigError(f"kde grid_points must be >= 2, got {self.grid_points}")


@dataclass(frozen=True)
class PipelineConfig:
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    variance_mode: str = CORRECTED
    mc: McConfig = field(default_factory=McConfig)
    ridge: float = 0.0
    kde: KdeConfig = field(default_factory=KdeConfig)
    decimate_stride: int = 900
    output_precision: int = 17

    def __post_init__(self):
        if self.variance_mode not in VARIANCE_MODES:
            raise ConfigError(f"unknown variance_mode {self.variance_mode!r}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if self.decimate_stride < 1:
            raise ConfigError(f"decimate_stride must be >= 1, got {self.decimate_stride}")
        if not 1 <= self.output_precision <= 17:
            raise ConfigError("output_precision must be in [1, 17]")

    def to_dict(self) -> dict:
        return {
            "quadrature": {
                "method": self.quadrature.method,
                "node_count": self.quadrature.node_count,
                "p2_max": self.quadrature.p2_max,
                "rel_tol": self.quadrature.rel_tol,
                "cross_check": self.quadrature.cross_check,
            },
            "variance_mode": self.variance_mode,
            "mc": {
                "trials": self.mc.trials,
                "master_seed": self.mc.master_seed,
                "sampling_mode": self.mc.sampling_mode,
                "compute_eigenvalues": self.mc.compute_eigenvalues,
            },
            "ridge": self.ridge,
            "kde": {
                "bandwidth": "auto" if self.kde.bandwidth is None else self.kde.bandwidth,
                "grid_points": self.kde.grid_points,
            },
            "decimate_stride": self.decimate_stride,
            "output_precision": self.output_precision,
        }


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(
        "config",
        data,
        {"quadrature", "variance_mode", "mc", "ridge", "kde", "decimate_stride", "output_precision"},
    )
    quad_data = data.get("quadrature", {})
    _check_keys("quadrature", quad_data, {"method", "node_count", "p2_max", "rel_tol", "cross_check"})
    mc_data = data.get("mc", {})
    _check_keys("mc", mc_data, {"trials", "master_seed", "sampling_mode", "compute_eigenvalues"})
    kde_data = data.get("kde", {})
    _check_keys("kde", kde_data, {"bandwidth", "grid_points"})
    bandwidth = kde_data.get("bandwidth")
    if bandwidth == "auto":
        bandwidth = None
    try:
        return PipelineConfig(
            quadrature=QuadratureConfig(**quad_data),
            variance_mode=data.get("variance_mode", CORRECTED),
            mc=McConfig(**mc_data),
            ridge=float(data.get("ridge", 0.0)),
            kde=KdeConfig(bandwidth=bandwidth, grid_points=int(kde_data.get("grid_points", 256))),
            decimate_stride=int(data.get("decimate_stride", 900)),
            output_precision=int(data.get("output_precision", 17)),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)

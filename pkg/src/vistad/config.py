"""Pipeline configuration: one flat record of every knob, validated up front.

Defaults mirror the main operating point: 224-pixel windows at quarter-window
stride, pooling kernels {1, 2, 3}, q = 0.25 collapse, the median-reference
scoring variant and the {0.10, 0.01, 0.001} alpha sweep. A config file (JSON)
overrides the defaults and command-line flags override the file. Unknown keys
are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError


@dataclass
class PipelineConfig:
    # screening
    window_length: int = 224
    stride: int | None = None  # None -> window_length // 4
    scales: list[int] = field(default_factory=lambda: [1, 2, 3])
    quantile_q: float = 0.25
    variant: str = "median-reference"
    exclude_self: bool = False
    ewma_enabled: bool = True
    ewma_span: int = 10
    alpha_list: list[float] = field(default_factory=lambda: [0.10, 0.01, 0.001])
    gap_merge: int = 0
    # embedding provider
    provider: str = "reference"
    provider_name: str = "reference"
    provider_url: str | None = None
    provider_timeout: float = 30.0
    provider_retries: int = 3
    patch_grid: int = 14
    embed_dim: int = 4
    cache_dir: str | None = None
    # verification client
    client: str = "mock-echo"
    client_endpoint: str | None = None
    client_model: str | None = None
    api_key_env: str = "VISTAD_API_KEY"
    temperature: float = 0.0
    client_retries: int = 3
    min_conf: int = 2
    mock_confidence: int = 3
    # annotated plot canvas
    canvas_width: int = 1024
    canvas_height: int = 512
    tick_count: int = 11
    y_precision: int = 2
    # execution
    workers: int = 1
    save_rasters: bool = False
    dump_map: bool = False
    make_plots: bool = False

    def validate(self) -> "PipelineConfig":
        if self.window_length < 8:
            raise ConfigurationError("window_length must be >= 8")
        if self.stride is not None and self.stride < 1:
            raise ConfigurationError("stride must be >= 1")
        if not self.scales or min(self.scales) < 1:
            raise ConfigurationError("scales must be a nonempty list of kernels >= 1")
        if max(self.scales) > self.patch_grid:
            raise ConfigurationError("largest pooling kernel exceeds the patch grid")
        if not 0.0 <= self.quantile_q <= 1.0:
            raise ConfigurationError("quantile_q must lie in [0, 1]")
        if self.variant not in ("median-reference", "all-pairs"):
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if not self.alpha_list or not all(0.0 < a < 0.5 for a in self.alpha_list):
            raise ConfigurationError("alpha_list entries must lie in (0, 0.5)")
        if self.ewma_span < 1:
            raise ConfigurationError("ewma_span must be >= 1")
        if self.gap_merge < 0:
            raise ConfigurationError("gap_merge must be >= 0")
        if self.provider not in ("reference", "remote"):
            raise ConfigurationError(f"unknown provider kind {self.provider!r}")
        if self.provider == "remote" and not self.provider_url:
            raise ConfigurationError("remote provider needs provider_url")
        if self.window_length % self.patch_grid != 0:
            raise ConfigurationError("window_length must be divisible by patch_grid")
        if self.client not in ("mock-echo", "http"):
            raise ConfigurationError(f"unknown client kind {self.client!r}")
        if self.client == "http" and not (self.client_endpoint and self.client_model):
            raise ConfigurationError("http client needs client_endpoint and client_model")
        if not 1 <= self.min_conf <= 3:
            raise ConfigurationError("min_conf must lie in 1..3")
        if not 1 <= self.mock_confidence <= 3:
            raise ConfigurationError("mock_confidence must lie in 1..3")
        if self.canvas_width < 64 or self.canvas_height < 64:
            raise ConfigurationError("canvas must be at least 64x64")
        if self.tick_count < 2:
            raise ConfigurationError("tick_count must be >= 2")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        return self

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride is not None else self.window_length // 4

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        unknown = set(data) - cls.field_names()
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Apply non-None overrides (e.g. parsed CLI flags) on top of this config."""
        unknown = set(overrides) - self.field_names()
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        merged = dataclasses.asdict(self)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig(**merged).validate()

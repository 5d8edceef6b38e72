"""Flat key/value pipeline configuration shared by every CLI command.

A config file is a flat JSON object whose keys are the field names of
:class:`PipelineConfig`. Command-line flags override file values. Unknown
keys are rejected so that typos do not silently fall back to defaults.
"""
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Mapping, Optional, Tuple

from .chips import ChipConfig
from .errors import ConfigError
from .postprocess import HnmsConfig
from .sampling import SamplerConfig, SoftWeightConfig


@dataclass
class PipelineConfig:
    # inputs / outputs
    hierarchy: Optional[str] = None
    names: Optional[str] = None
    predictions: Optional[List[str]] = None
    ground_truth: Optional[str] = None
    candidates: Optional[str] = None
    output: Optional[str] = None
    # hierarchical NMS
    nms_iou: float = 0.5
    vote_iou: float = 0.9
    vote_fraction: float = 0.3
    score_floor: float = 0.0
    clamp_scores: bool = True
    weights: Optional[List[float]] = None
    permissive: bool = False
    chunk_rows: int = 250_000
    # class-aware sampling
    batch_size: int = 48
    seed: int = 0
    with_replacement_categories: bool = True
    num_batches: int = 1000
    histogram: bool = False
    # soft sampling
    w_min: float = 0.25
    gamma: float = 1.0
    # chip planning
    scales: Tuple[float, ...] = (3.0, 1.667, 1.0)
    chip_px: int = 512
    valid_min_px: float = 32.0
    valid_max_px: float = 480.0
    image_width: Optional[float] = None
    image_height: Optional[float] = None
    image_sizes: Optional[str] = None
    # evaluation
    iou_threshold: float = 0.5
    expand_detections: bool = True
    evaluated_labels: Optional[str] = None
    ap_method: str = "all_point"

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_sources(cls, file_values: Mapping = None, overrides: Mapping = None) -> "PipelineConfig":
        known = set(cls.keys())
        values = {}
        for source in (file_values or {}), (overrides or {}):
            unknown = sorted(set(source) - known)
            if unknown:
                raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
            values.update({k: v for k, v in source.items() if v is not None})
        if "scales" in values:
            values["scales"] = tuple(float(s) for s in values["scales"])
        if isinstance(values.get("predictions"), str):
            values["predictions"] = [values["predictions"]]
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self):
        self.hnms_config()
        self.sampler_config()
        self.soft_weight_config()
        self.chip_config()
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if self.ap_method not in ("all_point", "11_point"):
            raise ConfigError(f"ap_method must be all_point or 11_point, got {self.ap_method!r}")
        if self.chunk_rows < 1:
            raise ConfigError("chunk_rows must be >= 1")
        if self.num_batches < 0:
            raise ConfigError("num_batches must be >= 0")
        for name in ("image_width", "image_height"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive")

    def hnms_config(self) -> HnmsConfig:
        return HnmsConfig(self.nms_iou, self.vote_iou, self.vote_fraction, self.score_floor,
                          self.clamp_scores)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.batch_size, self.seed, self.with_replacement_categories)

    def soft_weight_config(self) -> SoftWeightConfig:
        return SoftWeightConfig(self.w_min, self.gamma)

    def chip_config(self) -> ChipConfig:
        return ChipConfig(tuple(self.scales), self.chip_px, (self.valid_min_px, self.valid_max_px))

    def to_dict(self):
        return asdict(self)


def load_config_file(path) -> dict:
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: nested values are not allowed ({', '.join(nested)})")
    return values

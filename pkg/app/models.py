from __future__ import annotations
import math
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ThresholdMode = Literal["median", "canonical-mean"]
Task = Literal["binary", "family", "behavior-compound", "behavior-action"]
SynthKind = Literal["benign-static", "benign-cdn", "tunnel-upload", "tunnel-download", "tunnel-idle"]
Alphabet = Literal["base64url-like", "base32-like", "hex-letters"]

LEGITIMATE = "legitimate"
MALICIOUS = "malicious"
BEHAVIORS = ("handshake", "idle", "download", "upload")
DEFAULT_DELIMITERS = ".-_"
SEGMENT_CHOICES = (1, 2, 3)
MODEL_FORMAT_VERSION = 1


def _empty_to_none(v: Any) -> Any:
    if isinstance(v, str) and not v.strip():
        return None
    return v


class DnsQueryRecord(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    timestamp: float = Field(ge=0)
    qname: str = Field(min_length=1)
    qtype: str = "A"
    family_label: Optional[str] = None
    behavior_label: Optional[str] = None
    source: str = ""

    @field_validator("family_label", "behavior_label", mode="before")
    @classmethod
    def _blank_labels(cls, v: Any) -> Any:
        return _empty_to_none(v)

    @field_validator("behavior_label")
    @classmethod
    def _known_behavior(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and v not in BEHAVIORS:
            raise ValueError(f"behavior must be one of {', '.join(BEHAVIORS)}, got '{v}'")
        return v

    @model_validator(mode="after")
    def _behavior_needs_malicious_family(self) -> "DnsQueryRecord":
        if self.behavior_label is not None and self.family_label in (None, LEGITIMATE):
            raise ValueError("behavior label requires a malicious family label")
        return self

    @property
    def labeled(self) -> bool:
        return self.family_label is not None


class HashConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    window_width: Literal[5] = 5
    threshold_mode: ThresholdMode = "median"
    segment_count: int = 2
    include_global: bool = True
    delimiter_set: str = DEFAULT_DELIMITERS

    @field_validator("segment_count")
    @classmethod
    def _segments(cls, v: int) -> int:
        if v not in SEGMENT_CHOICES:
            raise ValueError(f"segment count must be one of {SEGMENT_CHOICES}, got {v}")
        return v

    @field_validator("delimiter_set")
    @classmethod
    def _delimiters(cls, v: str) -> str:
        if "." not in v:
            raise ValueError("delimiter set must contain '.'")
        return "".join(sorted(set(v)))

    @property
    def slot_count(self) -> int:
        return self.segment_count + (1 if self.include_global else 0)


class ForestParams(BaseModel):
    n_trees: int = Field(100, ge=1)
    max_depth: Optional[int] = Field(None, ge=1)
    min_samples_leaf: int = Field(1, ge=1)
    max_features: Union[Literal["sqrt-ceil", "all"], int] = "sqrt-ceil"
    bootstrap: bool = True

    def features_per_split(self, dimension: int) -> int:
        if self.max_features == "all":
            return dimension
        if self.max_features == "sqrt-ceil":
            return max(1, math.ceil(math.sqrt(dimension)))
        return max(1, min(int(self.max_features), dimension))


class PipelineConfig(BaseModel):
    window_size: int = Field(20, ge=2, le=1000)
    segments: Optional[int] = None
    include_global: bool = True
    threshold_mode: ThresholdMode = "median"
    delimiters: str = DEFAULT_DELIMITERS
    task: Task = "binary"
    seed: int = 42
    workers: int = Field(1, ge=1)
    extra_families: List[str] = Field(default_factory=list)
    forest: ForestParams = Field(default_factory=ForestParams)

    input: Optional[str] = None
    output: Optional[str] = None
    model: Optional[str] = None
    suffix_list: Optional[str] = None

    @field_validator("segments")
    @classmethod
    def _segments(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v not in SEGMENT_CHOICES:
            raise ValueError(f"segments must be one of {SEGMENT_CHOICES}, got {v}")
        return v

    def resolved_segments(self) -> int:
        if self.segments is not None:
            return self.segments
        return 3 if self.task.startswith("behavior") else 2

    def hash_config(self) -> HashConfig:
        return HashConfig(
            threshold_mode=self.threshold_mode,
            segment_count=self.resolved_segments(),
            include_global=self.include_global,
            delimiter_set=self.delimiters,
        )

    def echo(self) -> Dict[str, Any]:
        """Resolved config as embedded in artifacts (runtime-only fields left out)."""
        data = self.model_dump(exclude={"workers", "input", "output", "model"})
        data["segments"] = self.resolved_segments()
        return data


class FeaturizationMeta(BaseModel):
    window_size: int
    segments: int
    include_global: bool
    threshold_mode: ThresholdMode
    delimiters: str
    slot_layout: List[str]
    feature_names: List[str]
    labeled: bool = True
    config: Dict[str, Any] = Field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return len(self.feature_names)

    def compatibility_key(self) -> Dict[str, Any]:
        return {
            "window_size": self.window_size,
            "segments": self.segments,
            "include_global": self.include_global,
            "threshold_mode": self.threshold_mode,
            "delimiters": self.delimiters,
            "slot_layout": list(self.slot_layout),
        }


class TreeNode(BaseModel):
    feature: Optional[int] = Field(None, ge=0)
    threshold: Optional[float] = None
    left: Optional[TreeNode] = None
    right: Optional[TreeNode] = None
    counts: Optional[List[float]] = None

    @model_validator(mode="after")
    def _leaf_or_split(self) -> "TreeNode":
        if self.counts is not None:
            if any(x is not None for x in (self.feature, self.threshold, self.left, self.right)):
                raise ValueError("leaf node cannot carry a split")
            return self
        if None in (self.feature, self.threshold, self.left, self.right):
            raise ValueError("internal node needs feature, threshold, left and right")
        if not math.isfinite(self.threshold):
            raise ValueError("split threshold must be finite")
        return self

    @property
    def is_leaf(self) -> bool:
        return self.counts is not None


TreeNode.model_rebuild()


class ForestModelFile(BaseModel):
    format_version: int = MODEL_FORMAT_VERSION
    task: Task
    classes: List[str]
    params: ForestParams
    featurization: FeaturizationMeta
    seed: int
    trees: List[TreeNode]


class ClassMetrics(BaseModel):
    label: str
    precision: float
    recall: float
    f1: float
    support: int


class Metrics(BaseModel):
    task: str
    classes: List[str]
    confusion: List[List[int]]
    per_class: List[ClassMetrics]
    accuracy: float
    f1: float
    f1_weighted: float
    f1_macro: float
    fpr: float
    windows: int


class PerFileRow(BaseModel):
    source: str
    windows: int
    accuracy: float
    f1_weighted: float
    f1_macro: float


class EvaluationReport(BaseModel):
    mode: Literal["direct", "two-step", "per-file"]
    task: str
    metrics: Metrics
    per_file: List[PerFileRow] = Field(default_factory=list)
    supplemented_benign: int = 0
    config: Dict[str, Any] = Field(default_factory=dict)


class SynthProfile(BaseModel):
    kind: SynthKind
    query_count: int = Field(100, ge=0)
    min_length: Optional[int] = Field(None, ge=0)
    max_length: Optional[int] = Field(None, ge=0)
    alphabet: Alphabet = "base32-like"
    repeat_probability: float = Field(0.7, ge=0.0, le=1.0)
    payload_randomness: float = Field(1.0, ge=0.0, le=1.0)
    domain: str = "example.com"
    seed: int = 42
    source: str = "synth"
    start_time: float = Field(1716200000.0, ge=0)
    interval: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _length_order(self) -> "SynthProfile":
        if self.min_length is not None and self.max_length is not None and self.min_length > self.max_length:
            raise ValueError("min_length must not exceed max_length")
        return self

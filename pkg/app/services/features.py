from __future__ import annotations
import logging
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.errors import DataError, InvalidArgumentError, LabelError, SchemaError
from app.models import LEGITIMATE, MALICIOUS, FeaturizationMeta, HashConfig, PipelineConfig
from app.services.ingest import CleanQuery, DomainStream, source_of
from app.services.nilsimsa import QueryDigests, compare, digest_query, slot_layout

logger = logging.getLogger(__name__)

STAT_NAMES = ("mean", "median", "q1", "q3", "variance", "min", "max", "range")
STATS_PER_SLOT = len(STAT_NAMES)
META_SUFFIX = ".meta.json"
FEATURE_ID_COLUMNS = ["stream_key", "window_index", "label_binary", "label_family", "label_behavior"]


# -------------------- Types --------------------

@dataclass(frozen=True)
class Window:
    key: str
    index: int
    queries: Tuple[CleanQuery, ...]
    digests: Tuple[QueryDigests, ...]

    @property
    def size(self) -> int:
        return len(self.queries)

    @property
    def slot_count(self) -> int:
        return self.digests[0].slot_count if self.digests else 0


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    window_ref: Tuple[str, int]


def compound_label(family: str, behavior: str) -> str:
    return f"{family.capitalize()}_{behavior.capitalize()}"


@dataclass(frozen=True)
class WindowLabel:
    family: str
    behavior: Optional[str] = None

    @property
    def binary(self) -> str:
        return LEGITIMATE if self.family == LEGITIMATE else MALICIOUS

    @property
    def compound(self) -> Optional[str]:
        if self.behavior is None:
            return None
        return compound_label(self.family, self.behavior)


@dataclass
class FeatureRow:
    stream_key: str
    window_index: int
    values: np.ndarray
    label: Optional[WindowLabel] = None


@dataclass
class FeaturizeSummary:
    streams: int = 0
    windows: int = 0
    discarded: int = 0
    per_stream: Dict[str, int] = field(default_factory=dict)


# -------------------- Windows and scores --------------------

def make_windows(stream: DomainStream, n: int, config: HashConfig) -> List[Window]:
    if n < 2:
        raise InvalidArgumentError(f"window size must be at least 2, got {n}")
    count = len(stream.queries) // n
    windows: List[Window] = []
    for i in range(count):
        chunk = tuple(stream.queries[i * n:(i + 1) * n])
        digests = tuple(digest_query(q.subdomain_clean, config) for q in chunk)
        windows.append(Window(key=stream.key_str, index=i, queries=chunk, digests=digests))
    remainder = len(stream.queries) - count * n
    if remainder:
        logger.debug("%s: discarded %d trailing queries", stream.key_str, remainder)
    return windows


def pairwise_scores(window: Window, slot: int) -> np.ndarray:
    """Scores of all pairs i<j, in (i, j) lexicographic order."""
    if not 0 <= slot < window.slot_count:
        raise InvalidArgumentError(f"slot {slot} out of range for {window.slot_count} slots")
    bits = np.stack([d.slots[slot].bits() for d in window.digests]).astype(np.int32)
    one_zero = bits @ (1 - bits).T
    differing = one_zero + one_zero.T
    i, j = np.triu_indices(len(window.digests), k=1)
    return (128 - differing[i, j]).astype(np.int64)


def stats_block(scores: Sequence[int]) -> np.ndarray:
    values = np.sort(np.asarray(scores, dtype=np.float64))
    if values.size == 0:
        raise InvalidArgumentError("cannot summarize an empty score list")
    q1, median, q3 = np.quantile(values, [0.25, 0.5, 0.75])
    lo, hi = values[0], values[-1]
    return np.array([values.mean(), median, q1, q3, values.var(), lo, hi, hi - lo], dtype=np.float64)


def featurize_window(window: Window, config: Optional[HashConfig] = None) -> FeatureVector:
    if config is not None and window.slot_count != config.slot_count:
        raise InvalidArgumentError(
            f"window has {window.slot_count} digest slots, config expects {config.slot_count}"
        )
    blocks = [stats_block(pairwise_scores(window, s)) for s in range(window.slot_count)]
    return FeatureVector(values=np.concatenate(blocks), window_ref=(window.key, window.index))


def _majority(counts: Counter, prefer_malicious: bool = False) -> str:
    top = max(counts.values())
    tied = sorted(k for k, v in counts.items() if v == top)
    if prefer_malicious and len(tied) > 1 and LEGITIMATE in tied:
        tied.remove(LEGITIMATE)
    return tied[0]


def label_window(window: Window) -> WindowLabel:
    for q in window.queries:
        if q.record.family_label is None:
            r = q.record
            raise LabelError(f"unlabeled record in labeled mode: source={r.source} ts={r.timestamp} qname={r.qname}")
    family = _majority(Counter(q.record.family_label for q in window.queries), prefer_malicious=True)
    behaviors = Counter(
        q.record.behavior_label
        for q in window.queries
        if q.record.family_label == family and q.record.behavior_label is not None
    )
    behavior = _majority(behaviors) if behaviors else None
    return WindowLabel(family=family, behavior=behavior)


# -------------------- Rolling variant --------------------

class RollingState:
    """Stride-1 sliding window over one stream; each pair score is stored with the older query."""

    def __init__(self, window_size: int, slot_count: int, key: str = ""):
        if window_size < 2:
            raise InvalidArgumentError(f"window size must be at least 2, got {window_size}")
        self.window_size = window_size
        self.slot_count = slot_count
        self.key = key
        self.seen = 0
        self._ring: Deque[QueryDigests] = deque()
        self._rows: Deque[List[List[int]]] = deque()

    def scores(self, slot: int) -> List[int]:
        return [x for row in self._rows for x in row[slot]]

    def update(self, q: QueryDigests) -> Optional[FeatureVector]:
        if q.slot_count != self.slot_count:
            raise InvalidArgumentError(f"query has {q.slot_count} slots, state expects {self.slot_count}")
        if len(self._ring) == self.window_size:
            self._ring.popleft()
            self._rows.popleft()
        for older, row in zip(self._ring, self._rows):
            for s in range(self.slot_count):
                row[s].append(compare(older.slots[s], q.slots[s]))
        self._ring.append(q)
        self._rows.append([[] for _ in range(self.slot_count)])
        self.seen += 1
        if len(self._ring) < self.window_size:
            return None
        values = np.concatenate([stats_block(self.scores(s)) for s in range(self.slot_count)])
        return FeatureVector(values=values, window_ref=(self.key, self.seen - self.window_size))


def rolling_update(state: RollingState, q: QueryDigests) -> Tuple[RollingState, Optional[FeatureVector]]:
    return state, state.update(q)


# -------------------- Batch featurization --------------------

def _featurize_stream(stream: DomainStream, n: int, config: HashConfig, labeled: bool) -> List[FeatureRow]:
    rows = []
    for window in make_windows(stream, n, config):
        vec = featurize_window(window, config)
        rows.append(FeatureRow(
            stream_key=window.key,
            window_index=window.index,
            values=vec.values,
            label=label_window(window) if labeled else None,
        ))
    return rows


def featurize_streams(streams: Sequence[DomainStream], config: HashConfig, window_size: int,
                      labeled: bool = True, workers: int = 1) -> Tuple[List[FeatureRow], FeaturizeSummary]:
    summary = FeaturizeSummary(streams=len(streams))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_stream = list(pool.map(lambda s: _featurize_stream(s, window_size, config, labeled), streams))
    else:
        per_stream = [_featurize_stream(s, window_size, config, labeled) for s in streams]
    rows: List[FeatureRow] = []
    for stream, stream_rows in zip(streams, per_stream):
        summary.per_stream[stream.key_str] = len(stream_rows)
        summary.discarded += len(stream.queries) - len(stream_rows) * window_size
        rows.extend(stream_rows)
    summary.windows = len(rows)
    return rows, summary


def feature_names(config: HashConfig) -> List[str]:
    return [f"{slot}_{stat}" for slot in slot_layout(config) for stat in STAT_NAMES]


def build_meta(config: PipelineConfig, labeled: bool = True) -> FeaturizationMeta:
    hc = config.hash_config()
    return FeaturizationMeta(
        window_size=config.window_size,
        segments=hc.segment_count,
        include_global=hc.include_global,
        threshold_mode=hc.threshold_mode,
        delimiters=hc.delimiter_set,
        slot_layout=slot_layout(hc),
        feature_names=feature_names(hc),
        labeled=labeled,
        config=config.echo(),
    )


# -------------------- Feature sets and files --------------------

@dataclass
class FeatureSet:
    stream_keys: List[str]
    window_indices: List[int]
    label_binary: List[str]
    label_family: List[str]
    label_behavior: List[str]
    X: np.ndarray
    meta: FeaturizationMeta

    def __len__(self) -> int:
        return len(self.stream_keys)

    @property
    def sources(self) -> List[str]:
        return [source_of(k) for k in self.stream_keys]

    @classmethod
    def from_rows(cls, rows: Sequence[FeatureRow], meta: FeaturizationMeta) -> "FeatureSet":
        dim = meta.dimension
        X = np.vstack([r.values for r in rows]) if rows else np.empty((0, dim), dtype=np.float64)
        return cls(
            stream_keys=[r.stream_key for r in rows],
            window_indices=[r.window_index for r in rows],
            label_binary=[r.label.binary if r.label else "" for r in rows],
            label_family=[r.label.family if r.label else "" for r in rows],
            label_behavior=[(r.label.behavior or "") if r.label else "" for r in rows],
            X=X,
            meta=meta,
        )

    def subset(self, idx: Sequence[int]) -> "FeatureSet":
        idx = list(idx)
        return FeatureSet(
            stream_keys=[self.stream_keys[i] for i in idx],
            window_indices=[self.window_indices[i] for i in idx],
            label_binary=[self.label_binary[i] for i in idx],
            label_family=[self.label_family[i] for i in idx],
            label_behavior=[self.label_behavior[i] for i in idx],
            X=self.X[idx] if idx else np.empty((0, self.X.shape[1]), dtype=np.float64),
            meta=self.meta,
        )

    def concat(self, other: "FeatureSet") -> "FeatureSet":
        return FeatureSet(
            stream_keys=self.stream_keys + other.stream_keys,
            window_indices=self.window_indices + other.window_indices,
            label_binary=self.label_binary + other.label_binary,
            label_family=self.label_family + other.label_family,
            label_behavior=self.label_behavior + other.label_behavior,
            X=np.vstack([self.X, other.X]),
            meta=self.meta,
        )


def meta_path(path: str) -> Path:
    return Path(str(path) + META_SUFFIX)


def write_feature_file(features: FeatureSet, path: str) -> None:
    names = [f"f{i}" for i in range(features.meta.dimension)]
    df = pd.DataFrame({
        "stream_key": features.stream_keys,
        "window_index": features.window_indices,
        "label_binary": features.label_binary,
        "label_family": features.label_family,
        "label_behavior": features.label_behavior,
    })
    values = pd.DataFrame(features.X, columns=names)
    df = pd.concat([df, values], axis=1)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    meta_path(path).write_text(features.meta.model_dump_json(indent=2) + "\n", encoding="utf-8")


def read_feature_file(path: str) -> FeatureSet:
    sidecar = meta_path(path)
    if not sidecar.is_file():
        raise DataError(f"Feature metadata sidecar not found: {sidecar}")
    try:
        meta = FeaturizationMeta.model_validate_json(sidecar.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DataError(f"Unreadable feature metadata {sidecar}: {e.errors()[0]['msg']}") from e
    text_cols = {c: str for c in FEATURE_ID_COLUMNS if c != "window_index"}
    try:
        # round_trip keeps every written double bit-exact
        df = pd.read_csv(path, dtype=text_cols, keep_default_na=False, encoding="utf-8",
                         float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"Unreadable feature file {path}: {e}") from e
    names = [f"f{i}" for i in range(meta.dimension)]
    for col in FEATURE_ID_COLUMNS + names:
        if col not in df.columns:
            raise SchemaError(col, path)
    return FeatureSet(
        stream_keys=df["stream_key"].tolist(),
        window_indices=[int(x) for x in df["window_index"].tolist()],
        label_binary=df["label_binary"].tolist(),
        label_family=df["label_family"].tolist(),
        label_behavior=df["label_behavior"].tolist(),
        X=df[names].to_numpy(dtype=np.float64),
        meta=meta,
    )

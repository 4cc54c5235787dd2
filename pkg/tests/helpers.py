from __future__ import annotations
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from app.models import DnsQueryRecord, FeaturizationMeta, PipelineConfig

DATA_DIR = Path(__file__).parent / "data"
BASE32 = "abcdefghijklmnopqrstuvwxyz234567"


def random_string(rng: np.random.Generator, length: int, alphabet: str = BASE32) -> str:
    return "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=length))


def toy_meta(dimension: int) -> FeaturizationMeta:
    """Metadata for forests trained on hand-made matrices of ``dimension`` columns."""
    return FeaturizationMeta(
        window_size=20,
        segments=2,
        include_global=True,
        threshold_mode="median",
        delimiters=".-_",
        slot_layout=["global", "seg1", "seg2"],
        feature_names=[f"x{i}" for i in range(dimension)],
        config=PipelineConfig().echo(),
    )


def make_records(subdomains: Sequence[str], domain: str = "example.com", family: Optional[str] = None,
                 behavior: Optional[str] = None, source: str = "run1",
                 start: float = 1716200000.0) -> List[DnsQueryRecord]:
    return [
        DnsQueryRecord(
            timestamp=start + i,
            qname=f"{s}.{domain}" if s else domain,
            qtype="A",
            family_label=family,
            behavior_label=behavior,
            source=source,
        )
        for i, s in enumerate(subdomains)
    ]

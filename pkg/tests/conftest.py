from __future__ import annotations

import numpy as np
import pytest

from app.models import HashConfig
from app.services.naming import SuffixRules


@pytest.fixture(scope="session")
def suffix_rules() -> SuffixRules:
    return SuffixRules.bundled()


@pytest.fixture
def hash_config():
    def make(segments: int = 2, include_global: bool = True, threshold_mode: str = "median") -> HashConfig:
        return HashConfig(segment_count=segments, include_global=include_global, threshold_mode=threshold_mode)
    return make


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240520)

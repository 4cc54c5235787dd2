"""
Task registry for the classifiers.

Maps each classification task to the function that derives a window's class
from its family/behavior labels, the default segment count the task is
featurized with, and the taxonomy its classes must come from.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence

from app.errors import InvalidArgumentError, LabelError
from app.models import BEHAVIORS, LEGITIMATE, MALICIOUS
from app.services.features import FeatureSet, compound_label

DEFAULT_FAMILIES = (
    "symbiote",
    "symbiote-dnscat2",
    "dnscat2",
    "iodine",
    "saitama",
    "roguerobin-ps",
    "roguerobin-net",
    LEGITIMATE,
)
SYNTHETIC_FAMILY = "synthetic"
ACTIONS = tuple(b for b in BEHAVIORS if b != "handshake")

Labeler = Callable[[str, str], Optional[str]]


def order_classes(labels: Iterable[str]) -> List[str]:
    """Lexicographic, with `legitimate` last."""
    distinct = set(labels)
    ordered = sorted(distinct - {LEGITIMATE})
    if LEGITIMATE in distinct:
        ordered.append(LEGITIMATE)
    return ordered


@dataclass(frozen=True)
class LabelTaxonomy:
    families: FrozenSet[str] = field(default_factory=lambda: frozenset(DEFAULT_FAMILIES + (SYNTHETIC_FAMILY,)))

    @classmethod
    def with_extra(cls, extra_families: Sequence[str] = ()) -> "LabelTaxonomy":
        return cls(frozenset(DEFAULT_FAMILIES + (SYNTHETIC_FAMILY,) + tuple(extra_families)))

    def classes(self, task: str) -> FrozenSet[str]:
        malicious = self.families - {LEGITIMATE}
        if task == "binary":
            return frozenset({MALICIOUS, LEGITIMATE})
        if task == "family":
            return self.families
        if task == "behavior-compound":
            return frozenset(compound_label(f, b) for f in malicious for b in ACTIONS) | {LEGITIMATE}
        if task == "behavior-action":
            return frozenset(ACTIONS) | {LEGITIMATE}
        raise InvalidArgumentError(f"Unsupported task: {task}")

    def check(self, task: str, labels: Iterable[str]) -> None:
        allowed = self.classes(task)
        unknown = sorted(set(labels) - allowed)
        if unknown:
            raise LabelError(f"Labels outside the {task} taxonomy: {', '.join(unknown)}")


def _binary(family: str, behavior: str) -> Optional[str]:
    if not family:
        return None
    return LEGITIMATE if family == LEGITIMATE else MALICIOUS


def _family(family: str, behavior: str) -> Optional[str]:
    return family or None


def _behavior_compound(family: str, behavior: str) -> Optional[str]:
    if family == LEGITIMATE:
        return LEGITIMATE
    # handshake windows are excluded from the behavioral tasks
    if not family or behavior in ("", "handshake"):
        return None
    return compound_label(family, behavior)


def _behavior_action(family: str, behavior: str) -> Optional[str]:
    if family == LEGITIMATE:
        return LEGITIMATE
    if not family or behavior in ("", "handshake"):
        return None
    return behavior


class TaskRegistry:
    """Registry of classification tasks"""

    _labelers: Dict[str, Labeler] = {
        "binary": _binary,
        "family": _family,
        "behavior-compound": _behavior_compound,
        "behavior-action": _behavior_action,
    }
    _default_segments: Dict[str, int] = {
        "binary": 2,
        "family": 2,
        "behavior-compound": 3,
        "behavior-action": 3,
    }

    @classmethod
    def get_labeler(cls, task: str) -> Labeler:
        labeler = cls._labelers.get(task)
        if labeler:
            return labeler
        supported = ", ".join(cls._labelers.keys())
        raise InvalidArgumentError(f"Unsupported task: {task}. Supported tasks: {supported}")

    @classmethod
    def get_supported_tasks(cls) -> List[str]:
        return list(cls._labelers.keys())

    @classmethod
    def default_segments(cls, task: str) -> int:
        cls.get_labeler(task)
        return cls._default_segments[task]

    @classmethod
    def window_labels(cls, task: str, features: FeatureSet) -> List[Optional[str]]:
        """Per-window class for ``task``; None marks windows the task does not use."""
        labeler = cls.get_labeler(task)
        return [labeler(f, b) for f, b in zip(features.label_family, features.label_behavior)]

    @classmethod
    def labeled_subset(cls, task: str, features: FeatureSet):
        """(subset, labels) restricted to windows that carry a class for ``task``."""
        labels = cls.window_labels(task, features)
        keep = [i for i, y in enumerate(labels) if y is not None]
        return features.subset(keep), [labels[i] for i in keep]

from __future__ import annotations

import numpy as np
import pytest

from app.errors import InvalidArgumentError, LabelError
from app.services.features import FeatureSet
from app.services.service_registry import LabelTaxonomy, TaskRegistry, order_classes
from tests.helpers import toy_meta


def _features(pairs):
    return FeatureSet(
        stream_keys=[f"s|d{i}.com" for i in range(len(pairs))],
        window_indices=[0] * len(pairs),
        label_binary=["" if not f else "legitimate" if f == "legitimate" else "malicious" for f, _ in pairs],
        label_family=[f for f, _ in pairs],
        label_behavior=[b for _, b in pairs],
        X=np.zeros((len(pairs), 2)),
        meta=toy_meta(2),
    )


PAIRS = [
    ("legitimate", ""),
    ("iodine", "handshake"),
    ("iodine", "download"),
    ("dnscat2", "upload"),
    ("saitama", ""),
    ("", ""),
]


@pytest.mark.parametrize(
    "task,expected",
    [
        ("binary", ["legitimate", "malicious", "malicious", "malicious", "malicious", None]),
        ("family", ["legitimate", "iodine", "iodine", "dnscat2", "saitama", None]),
        ("behavior-compound", ["legitimate", None, "Iodine_Download", "Dnscat2_Upload", None, None]),
        ("behavior-action", ["legitimate", None, "download", "upload", None, None]),
    ],
)
def test_window_labels_per_task(task, expected):
    assert TaskRegistry.window_labels(task, _features(PAIRS)) == expected


def test_labeled_subset_drops_unused_windows():
    subset, labels = TaskRegistry.labeled_subset("behavior-action", _features(PAIRS))
    assert labels == ["legitimate", "download", "upload"]
    assert subset.label_family == ["legitimate", "iodine", "dnscat2"]


def test_registry_lookup():
    assert TaskRegistry.get_supported_tasks() == ["binary", "family", "behavior-compound", "behavior-action"]
    assert TaskRegistry.default_segments("behavior-compound") == 3
    with pytest.raises(InvalidArgumentError):
        TaskRegistry.get_labeler("dga")


def test_class_order_puts_legitimate_last():
    assert order_classes(["legitimate", "iodine", "dnscat2", "iodine"]) == ["dnscat2", "iodine", "legitimate"]


def test_taxonomy_rejects_unknown_family():
    taxonomy = LabelTaxonomy()
    taxonomy.check("family", ["iodine", "synthetic", "legitimate"])
    with pytest.raises(LabelError):
        taxonomy.check("family", ["weasel"])
    LabelTaxonomy.with_extra(["weasel"]).check("family", ["weasel"])


def test_compound_classes_exclude_handshake():
    classes = LabelTaxonomy().classes("behavior-compound")
    assert "Iodine_Download" in classes
    assert "Iodine_Handshake" not in classes
    assert LabelTaxonomy().classes("behavior-action") == {"upload", "download", "idle", "legitimate"}

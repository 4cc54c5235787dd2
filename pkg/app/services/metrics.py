from __future__ import annotations
import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix, f1_score, precision_recall_fscore_support

from app.errors import ConfigMismatchError, DataError, InvalidArgumentError
from app.models import LEGITIMATE, MALICIOUS, ClassMetrics, Metrics, PerFileRow
from app.services.features import FeatureSet
from app.services.forest import ForestModel
from app.services.service_registry import LabelTaxonomy, TaskRegistry, order_classes

logger = logging.getLogger(__name__)


def stratified_split(labels: Sequence[str], train_fraction: float = 0.7, seed: int = 42,
                     expected_classes: Optional[Iterable[str]] = None) -> Tuple[List[int], List[int]]:
    """Per-class shuffled split; returns (train indices, test indices) in input order."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(f"train fraction must be in (0, 1), got {train_fraction}")
    present = order_classes(labels)
    for c in order_classes(expected_classes or []):
        if c not in present:
            raise DataError(f"Class '{c}' has no samples to split")
    rng = np.random.default_rng(seed)
    train: List[int] = []
    test: List[int] = []
    for c in present:
        idx = np.asarray([i for i, y in enumerate(labels) if y == c], dtype=np.int64)
        idx = rng.permutation(idx)
        n_train = int(math.floor(len(idx) * train_fraction + 0.5))
        train.extend(int(i) for i in idx[:n_train])
        test.extend(int(i) for i in idx[n_train:])
    return sorted(train), sorted(test)


def compute_metrics(y_true: Sequence[str], y_pred: Sequence[str], task: str) -> Metrics:
    if len(y_true) != len(y_pred):
        raise InvalidArgumentError(f"{len(y_true)} true labels but {len(y_pred)} predictions")
    if not y_true:
        raise InvalidArgumentError("cannot compute metrics on zero windows")
    labels = set(y_true) | set(y_pred)
    if task == "binary":
        labels |= {MALICIOUS, LEGITIMATE}
    classes = order_classes(labels)

    cm = confusion_matrix(y_true, y_pred, labels=classes)
    precision, recall, f1, support = precision_recall_fscore_support(
        y_true, y_pred, labels=classes, zero_division=0
    )
    per_class = [
        ClassMetrics(label=c, precision=float(p), recall=float(r), f1=float(f), support=int(s))
        for c, p, r, f, s in zip(classes, precision, recall, f1, support)
    ]
    present = [c for c in classes if c in set(y_true) | set(y_pred)]
    f1_weighted = float(f1_score(y_true, y_pred, labels=classes, average="weighted", zero_division=0))
    f1_macro = float(f1_score(y_true, y_pred, labels=present, average="macro", zero_division=0))
    if task == "binary":
        headline = float(f1[classes.index(MALICIOUS)])
    else:
        headline = f1_weighted

    fpr = 0.0
    if LEGITIMATE in classes:
        li = classes.index(LEGITIMATE)
        legit_total = int(cm[li].sum())
        if legit_total:
            fpr = (legit_total - int(cm[li, li])) / legit_total

    return Metrics(
        task=task,
        classes=classes,
        confusion=cm.astype(int).tolist(),
        per_class=per_class,
        accuracy=float(np.trace(cm) / cm.sum()),
        f1=headline,
        f1_weighted=f1_weighted,
        f1_macro=f1_macro,
        fpr=float(fpr),
        windows=int(cm.sum()),
    )


def evaluate(model: ForestModel, features: FeatureSet, task: Optional[str] = None,
             taxonomy: Optional[LabelTaxonomy] = None) -> Metrics:
    task = task or model.task
    subset, y_true = TaskRegistry.labeled_subset(task, features)
    (taxonomy or LabelTaxonomy()).check(task, y_true)
    y_pred, _ = model.predict_batch(subset.X)
    return compute_metrics(y_true, y_pred, task)


def per_file_metrics(sources: Sequence[str], y_true: Sequence[str], y_pred: Sequence[str],
                     task: str) -> List[PerFileRow]:
    rows: List[PerFileRow] = []
    for source in sorted(set(sources)):
        idx = [i for i, s in enumerate(sources) if s == source]
        m = compute_metrics([y_true[i] for i in idx], [y_pred[i] for i in idx], task)
        rows.append(PerFileRow(
            source=source,
            windows=m.windows,
            accuracy=m.accuracy,
            f1_weighted=m.f1_weighted,
            f1_macro=m.f1_macro,
        ))
    return rows


def supplement_benign(test: FeatureSet, pool: FeatureSet, seed: int) -> Tuple[FeatureSet, int]:
    """Add as many legitimate pool windows as ``test`` has malicious ones."""
    if pool.meta.compatibility_key() != test.meta.compatibility_key():
        raise ConfigMismatchError("Benign pool was featurized with a different configuration")
    wanted = sum(1 for f in test.label_family if f and f != LEGITIMATE)
    candidates = [i for i, f in enumerate(pool.label_family) if f == LEGITIMATE]
    take = min(wanted, len(candidates))
    if take < wanted:
        logger.warning("Benign pool holds %d legitimate windows, %d requested", len(candidates), wanted)
    rng = np.random.default_rng(seed)
    chosen = sorted(int(i) for i in rng.choice(candidates, size=take, replace=False)) if take else []
    return test.concat(pool.subset(chosen)), take


def format_metrics(m: Metrics) -> str:
    width = max(12, max(len(c) for c in m.classes) + 2)
    lines = [f"task={m.task} windows={m.windows} accuracy={m.accuracy:.4f} f1={m.f1:.4f} "
             f"f1_weighted={m.f1_weighted:.4f} f1_macro={m.f1_macro:.4f} fpr={m.fpr:.4f}"]
    lines.append("confusion (rows=true, cols=predicted)")
    lines.append(" " * width + "".join(c[:width - 1].rjust(width) for c in m.classes))
    for c, row in zip(m.classes, m.confusion):
        lines.append(c.ljust(width) + "".join(str(v).rjust(width) for v in row))
    lines.append("class".ljust(width) + "precision".rjust(11) + "recall".rjust(9) + "f1".rjust(9) + "support".rjust(9))
    for pc in m.per_class:
        lines.append(pc.label.ljust(width) + f"{pc.precision:11.4f}{pc.recall:9.4f}{pc.f1:9.4f}{pc.support:9d}")
    return "\n".join(lines)

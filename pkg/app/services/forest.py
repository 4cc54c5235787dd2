from __future__ import annotations
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from sklearn.ensemble import RandomForestClassifier
from sklearn.tree import _tree

from app.errors import ConfigMismatchError, CorruptModelError, InvalidArgumentError, ModelVersionError
from app.models import (
    LEGITIMATE,
    MODEL_FORMAT_VERSION,
    FeaturizationMeta,
    ForestModelFile,
    ForestParams,
    TreeNode,
)
from app.services.service_registry import order_classes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class _CompiledTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    proba: np.ndarray


def _compile(root: TreeNode, n_classes: int) -> _CompiledTree:
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    proba: List[np.ndarray] = []

    def add(node: TreeNode) -> int:
        idx = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        proba.append(np.zeros(n_classes))
        if node.is_leaf:
            counts = np.asarray(node.counts, dtype=np.float64)
            total = counts.sum()
            proba[idx] = counts / total if total > 0 else np.full(n_classes, 1.0 / n_classes)
        else:
            feature[idx] = node.feature
            threshold[idx] = node.threshold
            left[idx] = add(node.left)
            right[idx] = add(node.right)
        return idx

    add(root)
    return _CompiledTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        proba=np.vstack(proba),
    )


def _walk(tree: _CompiledTree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.nonzero(tree.feature[node] >= 0)[0]
    while active.size:
        current = node[active]
        go_left = X[active, tree.feature[current]] <= tree.threshold[current]
        node[active] = np.where(go_left, tree.left[current], tree.right[current])
        active = active[tree.feature[node[active]] >= 0]
    return node


class ForestModel:
    """Trained forest plus the featurization it was trained under; immutable."""

    def __init__(self, model_file: ForestModelFile):
        self.model_file = model_file
        self._trees = [_compile(t, len(model_file.classes)) for t in model_file.trees]

    @property
    def classes(self) -> List[str]:
        return list(self.model_file.classes)

    @property
    def task(self) -> str:
        return self.model_file.task

    @property
    def featurization(self) -> FeaturizationMeta:
        return self.model_file.featurization

    @property
    def dimension(self) -> int:
        return self.model_file.featurization.dimension

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dimension:
            raise ConfigMismatchError(f"Feature vectors have {X.shape[1]} values, model expects {self.dimension}")
        # split thresholds were learned on float32 inputs
        X = X.astype(np.float32)
        proba = np.zeros((X.shape[0], len(self.model_file.classes)))
        for tree in self._trees:
            proba += tree.proba[_walk(tree, X)]
        return proba / len(self._trees)

    def predict_batch(self, X: np.ndarray) -> Tuple[List[str], np.ndarray]:
        proba = self.predict_proba(X)
        # argmax keeps the first maximum, i.e. class-list order on ties
        picks = np.argmax(proba, axis=1)
        return [self.model_file.classes[i] for i in picks], proba


def predict(model: ForestModel, x: Sequence[float]) -> Tuple[str, np.ndarray]:
    labels, proba = model.predict_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))
    return labels[0], proba[0]


def _export_tree(tree, node_id: int = 0) -> TreeNode:
    if tree.children_left[node_id] == _tree.TREE_LEAF:
        value = np.asarray(tree.value[node_id][0], dtype=np.float64)
        total = value.sum()
        weight = float(tree.weighted_n_node_samples[node_id])
        counts = value / total * weight if total > 0 else value
        return TreeNode(counts=[float(c) for c in counts])
    return TreeNode(
        feature=int(tree.feature[node_id]),
        threshold=float(tree.threshold[node_id]),
        left=_export_tree(tree, int(tree.children_left[node_id])),
        right=_export_tree(tree, int(tree.children_right[node_id])),
    )


def train_forest(features: np.ndarray, labels: Sequence[str], params: ForestParams, seed: int,
                 meta: FeaturizationMeta, task: str = "binary", workers: int = 1) -> ForestModel:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise InvalidArgumentError(f"Got {X.shape[0] if X.ndim else 0} feature vectors for {len(labels)} labels")
    if X.shape[1] != meta.dimension:
        raise InvalidArgumentError(f"Feature vectors have {X.shape[1]} values, metadata declares {meta.dimension}")
    classes = order_classes(labels)
    if len(classes) < 2:
        raise InvalidArgumentError(f"Training needs at least two classes, got {classes}")
    index = {c: i for i, c in enumerate(classes)}
    y = np.asarray([index[label] for label in labels], dtype=np.int64)

    rf = RandomForestClassifier(
        n_estimators=params.n_trees,
        criterion="gini",
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        max_features=params.features_per_split(X.shape[1]),
        bootstrap=params.bootstrap,
        random_state=seed,
        n_jobs=workers,
    )
    rf.fit(X, y)
    logger.info("Trained %d trees on %d windows, %d classes", params.n_trees, X.shape[0], len(classes))
    model_file = ForestModelFile(
        task=task,
        classes=classes,
        params=params,
        featurization=meta,
        seed=seed,
        trees=[_export_tree(est.tree_) for est in rf.estimators_],
    )
    return ForestModel(model_file)


def two_step_classify(binary_model: ForestModel, family_model: ForestModel, x: Sequence[float]) -> str:
    detected, _ = predict(binary_model, x)
    if detected == LEGITIMATE:
        return LEGITIMATE
    family, _ = predict(family_model, x)
    return family


def two_step_predict(binary_model: ForestModel, family_model: ForestModel, X: np.ndarray) -> List[str]:
    """Family model runs only on the windows the binary model flags."""
    detected, _ = binary_model.predict_batch(X)
    final = [LEGITIMATE] * len(detected)
    flagged = [i for i, d in enumerate(detected) if d != LEGITIMATE]
    if flagged:
        families, _ = family_model.predict_batch(np.asarray(X)[flagged])
        for i, fam in zip(flagged, families):
            final[i] = fam
    return final


# -------------------- Persistence --------------------

def save_model(model: ForestModel, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(model.model_file.model_dump_json() + "\n", encoding="utf-8")


def _check_tree(node: TreeNode, dimension: int, n_classes: int) -> None:
    stack = [node]
    while stack:
        n = stack.pop()
        if n.is_leaf:
            if len(n.counts) != n_classes:
                raise CorruptModelError(f"Leaf has {len(n.counts)} class counts, expected {n_classes}")
            continue
        if n.feature >= dimension:
            raise CorruptModelError(f"Split on feature {n.feature}, but vectors have {dimension} values")
        stack.extend([n.left, n.right])


def load_model(path: str) -> ForestModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorruptModelError(f"{path} is not a valid model file: {e}") from e
    if not isinstance(raw, dict) or not isinstance(raw.get("format_version"), int):
        raise CorruptModelError(f"{path} has no format version")
    if raw["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelVersionError(raw["format_version"], MODEL_FORMAT_VERSION)
    try:
        model_file = ForestModelFile.model_validate(raw)
    except ValidationError as e:
        raise CorruptModelError(f"{path} does not match the model schema: {e.errors()[0]['msg']}") from e
    if not model_file.trees:
        raise CorruptModelError(f"{path} contains no trees")
    for tree in model_file.trees:
        _check_tree(tree, model_file.featurization.dimension, len(model_file.classes))
    return ForestModel(model_file)

# app/services/pipeline_engine.py
from __future__ import annotations
import json
import logging
from collections import Counter
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.errors import ConfigMismatchError, DataError
from app.models import EvaluationReport, FeaturizationMeta, Metrics, PipelineConfig, SynthProfile
from app.services.features import (
    FeatureSet,
    FeaturizeSummary,
    build_meta,
    featurize_streams,
    read_feature_file,
    write_feature_file,
)
from app.services.forest import ForestModel, load_model, save_model, train_forest, two_step_predict
from app.services.ingest import load_records, read_csv, read_pcap, group_by_domain, write_csv
from app.services.metrics import (
    compute_metrics,
    format_metrics,
    per_file_metrics,
    stratified_split,
    supplement_benign,
)
from app.services.naming import SuffixRules, strip_delimiters
from app.services.nilsimsa import compare, digest_query, nilsimsa_digest, slot_layout
from app.services.service_registry import LabelTaxonomy, TaskRegistry
from app.services.synth import generate, mixed_dataset, write_pcap
from app.services.utils import get_suffix_list_path
from app.services.validator import ConfigValidator

logger = logging.getLogger(__name__)

TRAIN_FRACTION = 0.7
SWEEP_WINDOW_SIZES = (5, 10, 20, 30, 40, 50)


def _log_validation(result: Dict[str, Any]) -> None:
    for w in result["warnings"]:
        logger.warning(w)
    for s in result["suggestions"]:
        logger.info("Suggestion: %s", s)


def _require_compatible(model: ForestModel, meta: FeaturizationMeta, what: str) -> None:
    ConfigValidator.require(ConfigValidator.check_compatibility(model.featurization, meta, what))


class PipelineEngine:
    @staticmethod
    def _rules(config: PipelineConfig) -> SuffixRules:
        return SuffixRules.load(config.suffix_list or get_suffix_list_path())

    @staticmethod
    def _start(config: PipelineConfig) -> None:
        logger.info("Resolved config: %s", json.dumps(config.echo(), sort_keys=True))
        validation = ConfigValidator.validate(config)
        _log_validation(validation)
        ConfigValidator.require(validation)

    @staticmethod
    def build_features(records, config: PipelineConfig,
                       rules: Optional[SuffixRules] = None) -> Tuple[FeatureSet, FeaturizeSummary, int]:
        """Records -> feature set; returns (features, summary, excluded record count)."""
        rules = rules or PipelineEngine._rules(config)
        hc = config.hash_config()
        labeled = any(r.labeled for r in records)
        grouping = group_by_domain(records, rules, hc.delimiter_set)
        rows, summary = featurize_streams(grouping.streams, hc, config.window_size, labeled, config.workers)
        features = FeatureSet.from_rows(rows, build_meta(config, labeled))
        return features, summary, len(grouping.excluded)

    @staticmethod
    def holdout(features: FeatureSet, config: PipelineConfig) -> Tuple[ForestModel, Metrics]:
        """70/30 stratified split, train on the first part, score the second."""
        subset, labels = TaskRegistry.labeled_subset(config.task, features)
        if not labels:
            raise DataError(f"No windows carry a {config.task} label")
        train_idx, test_idx = stratified_split(labels, TRAIN_FRACTION, config.seed)
        model = train_forest(
            subset.X[train_idx], [labels[i] for i in train_idx],
            config.forest, config.seed, features.meta, config.task, config.workers,
        )
        if not test_idx:
            raise DataError("Test split is empty; supply more windows")
        predicted, _ = model.predict_batch(subset.X[test_idx])
        return model, compute_metrics([labels[i] for i in test_idx], predicted, config.task)

    # -------------------- Commands --------------------

    @staticmethod
    def ingest(inputs: Sequence[str], output: str, config: PipelineConfig) -> Dict[str, Any]:
        PipelineEngine._start(config)
        records = []
        captures: Dict[str, Any] = {}
        for path in inputs:
            if Path(path).suffix.lower() == ".csv":
                records.extend(read_csv(path))
                continue
            found, summary = read_pcap(path)
            if not found:
                logger.warning("%s: no DNS queries could be extracted", path)
            captures[path] = {**asdict(summary), "skipped": summary.skipped}
            records.extend(found)
        grouping = group_by_domain(records, PipelineEngine._rules(config), config.hash_config().delimiter_set)
        write_csv(records, output)
        logger.info("Wrote %d records to %s (%d without a registered domain)",
                    len(records), output, len(grouping.excluded))
        return {
            "records": len(records),
            "output": output,
            "captures": captures,
            "excluded_no_registered_domain": len(grouping.excluded),
        }

    @staticmethod
    def featurize(config: PipelineConfig) -> Dict[str, Any]:
        PipelineEngine._start(config)
        records = load_records([config.input])
        features, summary, excluded = PipelineEngine.build_features(records, config)
        write_feature_file(features, config.output)
        logger.info("%d windows from %d streams, %d trailing queries discarded, %d records excluded",
                    summary.windows, summary.streams, summary.discarded, excluded)
        return {
            "windows": summary.windows,
            "streams": summary.per_stream,
            "discarded": summary.discarded,
            "excluded": excluded,
            "labeled": features.meta.labeled,
            "output": config.output,
        }

    @staticmethod
    def train(config: PipelineConfig) -> Dict[str, Any]:
        PipelineEngine._start(config)
        features = read_feature_file(config.input)
        _log_validation(ConfigValidator.check_task_wiring(config.task, features.meta))
        subset, labels = TaskRegistry.labeled_subset(config.task, features)
        if not labels:
            raise DataError(f"{config.input} has no windows labeled for the {config.task} task")
        LabelTaxonomy.with_extra(config.extra_families).check(config.task, labels)
        model = train_forest(subset.X, labels, config.forest, config.seed, features.meta,
                             config.task, config.workers)
        save_model(model, config.model)
        return {
            "model": config.model,
            "task": config.task,
            "classes": model.classes,
            "windows": len(labels),
            "class_counts": dict(Counter(labels)),
        }

    @staticmethod
    def predict(model_path: str, features_path: str, output: str) -> Dict[str, Any]:
        model = load_model(model_path)
        logger.info("Resolved config (from %s): %s", model_path,
                    json.dumps(model.featurization.config, sort_keys=True))
        features = read_feature_file(features_path)
        _require_compatible(model, features.meta, features_path)
        predicted, proba = model.predict_batch(features.X) if len(features) else ([], np.empty((0, 0)))
        df = pd.DataFrame({
            "stream_key": features.stream_keys,
            "window_index": features.window_indices,
            "predicted": predicted,
            "probability_max": proba.max(axis=1) if len(features) else [],
        })
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(output, index=False, encoding="utf-8", lineterminator="\n")
        return {"windows": len(features), "output": output, "predicted": dict(Counter(predicted))}

    @staticmethod
    def evaluate(config: PipelineConfig, model_path: str, mode: str = "direct",
                 family_model_path: Optional[str] = None, benign_pool: Optional[str] = None,
                 output: Optional[str] = None) -> Dict[str, Any]:
        PipelineEngine._start(config)
        features = read_feature_file(config.input)
        added = 0
        if benign_pool:
            features, added = supplement_benign(features, read_feature_file(benign_pool), config.seed)
        taxonomy = LabelTaxonomy.with_extra(config.extra_families)

        if mode == "two-step" or (mode == "per-file" and family_model_path):
            if not family_model_path:
                raise ConfigMismatchError("two-step evaluation needs --family-model")
            binary = load_model(model_path)
            family = load_model(family_model_path)
            if binary.task != "binary" or family.task != "family":
                raise ConfigMismatchError(
                    f"two-step evaluation needs a binary and a family model, got {binary.task} and {family.task}"
                )
            _require_compatible(binary, features.meta, "binary model")
            _require_compatible(family, features.meta, "family model")
            task = "family"
            subset, y_true = TaskRegistry.labeled_subset(task, features)
            taxonomy.check(task, y_true)
            y_pred = two_step_predict(binary, family, subset.X) if y_true else []
        else:
            model = load_model(model_path)
            _require_compatible(model, features.meta, config.input)
            task = model.task
            subset, y_true = TaskRegistry.labeled_subset(task, features)
            taxonomy.check(task, y_true)
            y_pred = model.predict_batch(subset.X)[0] if y_true else []

        if not y_true:
            raise DataError(f"{config.input} has no windows labeled for the {task} task")
        metrics = compute_metrics(y_true, y_pred, task)
        report = EvaluationReport(
            mode=mode,
            task=task,
            metrics=metrics,
            per_file=per_file_metrics(subset.sources, y_true, y_pred, task) if mode == "per-file" else [],
            supplemented_benign=added,
            config=config.echo(),
        )
        logger.info("\n%s", format_metrics(metrics))
        if output:
            Path(output).parent.mkdir(parents=True, exist_ok=True)
            Path(output).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return report.model_dump()

    @staticmethod
    def sweep(config: PipelineConfig, queries_path: str, output: str,
              window_sizes: Sequence[int] = SWEEP_WINDOW_SIZES,
              segment_counts: Optional[Sequence[int]] = None) -> Dict[str, Any]:
        PipelineEngine._start(config)
        records = load_records([queries_path])
        rules = PipelineEngine._rules(config)
        rows: List[Dict[str, Any]] = []
        for n in window_sizes:
            for k in segment_counts or [config.resolved_segments()]:
                point = config.model_copy(update={"window_size": n, "segments": k})
                features, summary, _ = PipelineEngine.build_features(records, point, rules)
                _, m = PipelineEngine.holdout(features, point)
                logger.info("n=%d k=%d: windows=%d f1=%.4f fpr=%.4f", n, k, summary.windows, m.f1, m.fpr)
                rows.append({
                    "window_size": n,
                    "segments": k,
                    "include_global": point.include_global,
                    "task": point.task,
                    "windows": summary.windows,
                    "test_windows": m.windows,
                    "accuracy": m.accuracy,
                    "f1": m.f1,
                    "f1_weighted": m.f1_weighted,
                    "f1_macro": m.f1_macro,
                    "fpr": m.fpr,
                })
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(output, index=False, encoding="utf-8", lineterminator="\n")
        return {"points": len(rows), "output": output}

    @staticmethod
    def synth(output: str, profile: Optional[SynthProfile] = None, preset: Optional[str] = None,
              pcap: Optional[str] = None, **preset_args: Any) -> Dict[str, Any]:
        if preset == "mixed":
            logger.info("Resolved config: %s", json.dumps({"preset": preset, **preset_args}, sort_keys=True))
            records = mixed_dataset(**preset_args)
        elif profile is not None:
            logger.info("Resolved config: %s", profile.model_dump_json())
            records = generate(profile)
        else:
            raise ConfigMismatchError("synth needs either a profile kind or --preset mixed")
        write_csv(records, output)
        if pcap:
            write_pcap(records, pcap)
        return {"records": len(records), "output": output, "pcap": pcap}

    @staticmethod
    def compare(a: str, b: str, config: PipelineConfig) -> Dict[str, Any]:
        PipelineEngine._start(config)
        hc = config.hash_config()
        clean_a = strip_delimiters(a, hc.delimiter_set)
        clean_b = strip_delimiters(b, hc.delimiter_set)
        da, db = digest_query(clean_a, hc), digest_query(clean_b, hc)
        whole_a, whole_b = nilsimsa_digest(clean_a.encode("utf-8"), hc), nilsimsa_digest(clean_b.encode("utf-8"), hc)
        return {
            "a": clean_a,
            "b": clean_b,
            "score": compare(whole_a, whole_b),
            "slots": [
                {"slot": name, "a": x.hex(), "b": y.hex(), "score": compare(x, y)}
                for name, x, y in zip(slot_layout(hc), da.slots, db.slots)
            ],
        }

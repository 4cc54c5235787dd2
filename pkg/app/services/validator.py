"""
Validation service for pipeline configs and artifact metadata.
Catches settings and featurization mismatches before they turn into silent garbage.
"""

from typing import Any, Dict, List

from app.errors import ConfigMismatchError
from app.models import LEGITIMATE, FeaturizationMeta, PipelineConfig
from app.services.service_registry import TaskRegistry


def _result(errors: List[str], warnings: List[str], suggestions: List[str]) -> Dict[str, Any]:
    return {
        "valid": len(errors) == 0,
        "errors": errors,
        "warnings": warnings,
        "suggestions": suggestions,
    }


class ConfigValidator:
    """Validates pipeline configs and featurization metadata, returning warnings/errors"""

    # window sizes of the reference evaluation grid
    EVALUATED_WINDOW_SIZES = (5, 10, 20, 30, 40, 50)

    @staticmethod
    def validate(config: PipelineConfig) -> Dict[str, Any]:
        """
        Validate a resolved config

        Returns:
            {
                "valid": bool,
                "errors": List[str],
                "warnings": List[str],
                "suggestions": List[str]
            }
        """
        errors: List[str] = []
        warnings: List[str] = []
        suggestions: List[str] = []

        default_k = TaskRegistry.default_segments(config.task)
        if config.segments is not None and config.segments != default_k:
            warnings.append(
                f"Task '{config.task}' is normally featurized with {default_k} segments, "
                f"config asks for {config.segments}."
            )
            suggestions.append(f"Drop --segments to use the task default of {default_k}.")

        if config.window_size not in ConfigValidator.EVALUATED_WINDOW_SIZES:
            warnings.append(
                f"Window size {config.window_size} is outside the evaluated grid "
                f"{list(ConfigValidator.EVALUATED_WINDOW_SIZES)}."
            )

        if config.threshold_mode == "canonical-mean":
            warnings.append("canonical-mean thresholding is meant for interop checks; detection runs use median.")

        if LEGITIMATE in config.extra_families:
            errors.append("'legitimate' is not a malware family and cannot be listed in extra_families.")

        for ch in config.delimiters:
            if ch.isalnum():
                errors.append(f"Delimiter '{ch}' is alphanumeric and would remove payload characters.")

        return _result(errors, warnings, suggestions)

    @staticmethod
    def check_compatibility(expected: FeaturizationMeta, found: FeaturizationMeta,
                            what: str = "features") -> Dict[str, Any]:
        errors: List[str] = []
        want = expected.compatibility_key()
        got = found.compatibility_key()
        for key in want:
            if want[key] != got[key]:
                errors.append(f"{what}: {key} is {got[key]!r}, model was trained with {want[key]!r}")
        if expected.dimension != found.dimension:
            errors.append(f"{what}: {found.dimension} features per window, model expects {expected.dimension}")
        return _result(errors, [], [])

    @staticmethod
    def check_task_wiring(task: str, meta: FeaturizationMeta) -> Dict[str, Any]:
        warnings: List[str] = []
        default_k = TaskRegistry.default_segments(task)
        if meta.segments != default_k:
            warnings.append(
                f"Training a {task} model on {meta.segments}-segment features "
                f"(task default is {default_k})."
            )
        return _result([], warnings, [])

    @staticmethod
    def require(result: Dict[str, Any]) -> None:
        if not result["valid"]:
            raise ConfigMismatchError("; ".join(result["errors"]))

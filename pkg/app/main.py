from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from app.errors import InvalidArgumentError, PipelineError
from app.models import PipelineConfig, SynthProfile
from app.services.pipeline_engine import SWEEP_WINDOW_SIZES, PipelineEngine
from app.services.service_registry import TaskRegistry
from app.services.utils import (
    configure_logging,
    get_default_seed,
    get_default_workers,
    get_suffix_list_path,
    parse_int_list,
)

logger = logging.getLogger("dnslsh")

# CLI flag -> PipelineConfig field; flags that were not given never override the config file
CONFIG_FLAGS = {
    "window_size": "window_size",
    "segments": "segments",
    "include_global": "include_global",
    "threshold_mode": "threshold_mode",
    "delimiters": "delimiters",
    "task": "task",
    "seed": "seed",
    "workers": "workers",
    "suffix_list": "suffix_list",
}
FOREST_FLAGS = {
    "n_trees": "n_trees",
    "max_depth": "max_depth",
    "min_samples_leaf": "min_samples_leaf",
    "max_features": "max_features",
    "bootstrap": "bootstrap",
}


def _max_features(raw: str):
    return int(raw) if raw.isdigit() else raw


def _add_config_options(p: argparse.ArgumentParser, forest: bool = False) -> None:
    p.add_argument("--config", help="JSON file with PipelineConfig fields; explicit flags win")
    p.add_argument("--window-size", type=int, help="Queries per window (default 20)")
    p.add_argument("--segments", type=int, choices=(1, 2, 3), help="Subdomain segments (task default when omitted)")
    p.add_argument("--global", dest="include_global", action="store_true", default=None,
                   help="Include the whole-subdomain digest (default)")
    p.add_argument("--no-global", dest="include_global", action="store_false",
                   help="Segment digests only")
    p.add_argument("--threshold-mode", choices=("median", "canonical-mean"))
    p.add_argument("--delimiters", help="Characters removed from subdomains before hashing (default .-_)")
    p.add_argument("--task", choices=TaskRegistry.get_supported_tasks())
    p.add_argument("--seed", type=int, help="Random seed (default 42, or DNSLSH_SEED)")
    p.add_argument("--workers", type=int, help="Parallel workers (default 1, or DNSLSH_WORKERS)")
    p.add_argument("--suffix-list", help="Public suffix list file (default: bundled snapshot)")
    p.add_argument("--extra-family", dest="extra_families", action="append", default=None,
                   help="Accept an additional malware family label (repeatable)")
    if forest:
        p.add_argument("--n-trees", type=int)
        p.add_argument("--max-depth", type=int)
        p.add_argument("--min-samples-leaf", type=int)
        p.add_argument("--max-features", type=_max_features, help="sqrt-ceil, all, or an integer")
        p.add_argument("--no-bootstrap", dest="bootstrap", action="store_false", default=None)


def resolve_config(args: argparse.Namespace, **paths: Optional[str]) -> PipelineConfig:
    """Defaults < environment < --config file < explicit flags."""
    data: Dict[str, Any] = {
        "seed": get_default_seed(),
        "workers": get_default_workers(),
        "suffix_list": get_suffix_list_path(),
    }
    config_file = getattr(args, "config", None)
    if config_file:
        try:
            loaded = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InvalidArgumentError(f"{config_file} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise InvalidArgumentError(f"{config_file} must hold a JSON object")
        data.update(loaded)

    for flag, field in CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[field] = value
    extra = getattr(args, "extra_families", None)
    if extra:
        data["extra_families"] = sorted(set(data.get("extra_families", [])) | set(extra))
    forest = dict(data.get("forest") or {})
    for flag, field in FOREST_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            forest[field] = value
    data["forest"] = forest
    data.update({k: v for k, v in paths.items() if v is not None})
    return PipelineConfig.model_validate(data)


# -------------------- Handlers --------------------

def _ingest(args: argparse.Namespace) -> Dict[str, Any]:
    return PipelineEngine.ingest(args.inputs, args.output, resolve_config(args))


def _featurize(args: argparse.Namespace) -> Dict[str, Any]:
    return PipelineEngine.featurize(resolve_config(args, input=args.input, output=args.output))


def _train(args: argparse.Namespace) -> Dict[str, Any]:
    return PipelineEngine.train(resolve_config(args, input=args.features, model=args.output))


def _predict(args: argparse.Namespace) -> Dict[str, Any]:
    return PipelineEngine.predict(args.model, args.features, args.output)


def _evaluate(args: argparse.Namespace) -> Dict[str, Any]:
    if args.sweep:
        if not args.queries or not args.output:
            raise InvalidArgumentError("--sweep needs --queries and -o/--output")
        config = resolve_config(args)
        segments = parse_int_list(args.sweep_segments) if args.sweep_segments else None
        return PipelineEngine.sweep(config, args.queries, args.output,
                                    parse_int_list(args.sweep_windows), segments)
    if not args.features or not args.model:
        raise InvalidArgumentError("evaluate needs a feature file and --model")
    config = resolve_config(args, input=args.features)
    return PipelineEngine.evaluate(config, args.model, args.mode, args.family_model,
                                   args.benign_pool, args.output)


def _synth(args: argparse.Namespace) -> Dict[str, Any]:
    seed = args.seed if args.seed is not None else get_default_seed()
    if args.preset:
        return PipelineEngine.synth(
            args.output, preset=args.preset, pcap=args.pcap,
            benign_queries=args.benign_queries, tunnel_queries=args.tunnel_queries,
            domains_per_side=args.domains_per_side, seed=seed, source=args.source,
        )
    if not args.kind:
        raise InvalidArgumentError("synth needs --kind or --preset")
    profile = SynthProfile(
        kind=args.kind,
        query_count=args.count,
        min_length=args.min_length,
        max_length=args.max_length,
        alphabet=args.alphabet,
        repeat_probability=args.repeat_probability,
        payload_randomness=args.randomness,
        domain=args.domain,
        seed=seed,
        source=args.source,
    )
    return PipelineEngine.synth(args.output, profile=profile, pcap=args.pcap)


def _compare(args: argparse.Namespace) -> Dict[str, Any]:
    return PipelineEngine.compare(args.a, args.b, resolve_config(args))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnslsh",
        description="Detect DNS covert channels from locality-sensitive digests of query windows.",
    )
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default INFO, or DNSLSH_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Extract queries from pcap/pcapng/csv into the canonical CSV")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    _add_config_options(p)
    p.set_defaults(handler=_ingest)

    p = sub.add_parser("featurize", help="Group, window and hash queries into a feature file")
    p.add_argument("input", help="Query CSV or capture")
    p.add_argument("-o", "--output", required=True)
    _add_config_options(p)
    p.set_defaults(handler=_featurize)

    p = sub.add_parser("train", help="Train a forest on a labeled feature file")
    p.add_argument("features")
    p.add_argument("-o", "--output", required=True, help="Model file")
    _add_config_options(p, forest=True)
    p.set_defaults(handler=_train)

    p = sub.add_parser("predict", help="Classify every window of a feature file")
    p.add_argument("features")
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=_predict)

    p = sub.add_parser("evaluate", help="Score a model against labeled features, or sweep a grid")
    p.add_argument("features", nargs="?")
    p.add_argument("--model")
    p.add_argument("--family-model", help="Second-stage family model for two-step mode")
    p.add_argument("--mode", choices=("direct", "two-step", "per-file"), default="direct")
    p.add_argument("--benign-pool", help="Feature file to draw extra legitimate windows from")
    p.add_argument("-o", "--output", help="Report JSON (sweep: results CSV)")
    p.add_argument("--sweep", action="store_true", help="Featurize/train/test over a window x segment grid")
    p.add_argument("--queries", help="Labeled query CSV for --sweep")
    p.add_argument("--sweep-windows", default=",".join(str(n) for n in SWEEP_WINDOW_SIZES))
    p.add_argument("--sweep-segments", help="Comma-separated segment counts (default: task default)")
    _add_config_options(p, forest=True)
    p.set_defaults(handler=_evaluate)

    p = sub.add_parser("synth", help="Generate labeled synthetic traffic")
    p.add_argument("--kind", choices=("benign-static", "benign-cdn", "tunnel-upload", "tunnel-download", "tunnel-idle"))
    p.add_argument("--preset", choices=("mixed",))
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--min-length", type=int)
    p.add_argument("--max-length", type=int)
    p.add_argument("--alphabet", choices=("base64url-like", "base32-like", "hex-letters"), default="base32-like")
    p.add_argument("--repeat-probability", type=float, default=0.7)
    p.add_argument("--randomness", type=float, default=1.0)
    p.add_argument("--domain", default="example.com")
    p.add_argument("--source", default="synth")
    p.add_argument("--seed", type=int)
    p.add_argument("--benign-queries", type=int, default=5000)
    p.add_argument("--tunnel-queries", type=int, default=5000)
    p.add_argument("--domains-per-side", type=int, default=5)
    p.add_argument("--pcap", help="Also write the queries as a capture")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(handler=_synth)

    p = sub.add_parser("compare", help="Digest two subdomains and print their similarity")
    p.add_argument("a")
    p.add_argument("b")
    _add_config_options(p)
    p.set_defaults(handler=_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    handler: Callable[[argparse.Namespace], Dict[str, Any]] = args.handler
    try:
        result = handler(args)
    except PipelineError as e:
        logger.error("%s", e)
        return e.exit_code
    except ValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return 2
    except OSError as e:
        logger.error("%s", e)
        return 3
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())

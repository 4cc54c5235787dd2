from __future__ import annotations
import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_log_level() -> str:
    return os.getenv("DNSLSH_LOG_LEVEL", "INFO").strip().upper() or "INFO"


def get_default_workers() -> int:
    raw = os.getenv("DNSLSH_WORKERS", "1").strip()
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def get_default_seed() -> int:
    raw = os.getenv("DNSLSH_SEED", "42").strip()
    try:
        return int(raw)
    except ValueError:
        return 42


def get_suffix_list_path() -> Optional[str]:
    raw = os.getenv("DNSLSH_SUFFIX_LIST", "").strip()
    return raw or None


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(level=(level or get_log_level()), format=LOG_FORMAT, force=True)


def parse_int_list(raw: str) -> list[int]:
    return [int(x.strip()) for x in raw.split(",") if x.strip()]

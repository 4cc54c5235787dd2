from __future__ import annotations
import logging
from pathlib import Path
from typing import Iterable, Optional, Tuple

import tldextract

from app.errors import NoRegisteredDomainError

logger = logging.getLogger(__name__)


def normalize_qname(qname: str) -> str:
    return qname.strip().rstrip(".")


def strip_delimiters(subdomain: str, delimiters: Iterable[str]) -> str:
    drop = set(delimiters)
    return "".join(ch for ch in subdomain if ch not in drop)


class SuffixRules:
    """Public-suffix rule set used to find the registered domain (eTLD+1)."""

    def __init__(self, extractor: tldextract.TLDExtract, origin: str):
        self._extract = extractor
        self.origin = origin

    @classmethod
    def bundled(cls) -> "SuffixRules":
        # no URLs + snapshot fallback: the list pinned with the library, no network
        extractor = tldextract.TLDExtract(suffix_list_urls=(), cache_dir=None, fallback_to_snapshot=True)
        return cls(extractor, origin=f"tldextract-{getattr(tldextract, '__version__', 'unknown')}-snapshot")

    @classmethod
    def from_file(cls, path: str) -> "SuffixRules":
        p = Path(path).resolve()
        if not p.is_file():
            raise FileNotFoundError(f"Public suffix list not found: {path}")
        extractor = tldextract.TLDExtract(
            suffix_list_urls=(p.as_uri(),), cache_dir=None, fallback_to_snapshot=False
        )
        return cls(extractor, origin=str(p))

    @classmethod
    def load(cls, path: Optional[str] = None) -> "SuffixRules":
        rules = cls.from_file(path) if path else cls.bundled()
        logger.debug("Using public suffix rules from %s", rules.origin)
        return rules

    def split(self, qname: str) -> Tuple[str, str]:
        """(subdomain, registered_domain); matching is case-insensitive, output keeps case."""
        name = normalize_qname(qname)
        ext = self._extract.extract_str(name.lower())
        if not ext.suffix or not ext.domain:
            raise NoRegisteredDomainError(f"'{qname}' has no registered domain under a public suffix")
        reg_len = len(ext.domain) + 1 + len(ext.suffix)
        if reg_len > len(name):
            raise NoRegisteredDomainError(f"'{qname}' has no registered domain under a public suffix")
        registered = name[-reg_len:]
        subdomain = name[: max(0, len(name) - reg_len - 1)]
        return subdomain, registered


def extract_subdomain(qname: str, suffix_rules: SuffixRules) -> Tuple[str, str]:
    return suffix_rules.split(qname)

"""
Nilsimsa digests over DNS subdomains.

A width-5 window slides over the input; for every position the eight canonical
trigram combinations inside the window are mapped to one of 256 buckets through
the transition table below. A bucket's bit is set when its count is strictly
above the threshold: the lower median of the 256 counts, or total/256 in the
canonical mode.
"""

from __future__ import annotations
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from app.errors import InvalidArgumentError
from app.models import HashConfig

DIGEST_BITS = 256

TRAN = bytes.fromhex(
    "02D69E6FF91D04ABD022161FD873A1AC"
    "3B7062961E6E8F399D05144AA6BEAE0E"
    "CFB99C9AC76813E12DA4EB518D646B50"
    "23800341ECBB71CC7A867F98F2365EEE"
    "8ECE4FB832B65F59DC1B314C7BF06301"
    "6CBA07E81277493CDA46FE2F791C9B30"
    "E300067E2E0F383321ADA554CAA729FC"
    "5A47697DC595B5F40B90A3816D255535"
    "F575740A26BF195C1AC6FF995D84AA66"
    "3EAF78B32043C1ED24EAE63F18F3A042"
    "57085360C3C0834082D709BD442A67A8"
    "93E0C2569FD9DD8515B48A27289276DE"
    "EFF8B2B7C93D45944B110D65D5348B91"
    "0CFA87E97C5BB14DE5D4CB10A21789BC"
    "DBB0E2978852F748D3612C3A2BD18CFB"
    "F1CDE46AE7A9FDC437C8D2F6DF58724E"
)


@dataclass(frozen=True)
class Digest:
    """256 accumulator bits; bit i of ``value`` is bucket i."""

    value: int = 0

    @classmethod
    def zero(cls) -> "Digest":
        return cls(0)

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        text = text.strip().lower()
        if len(text) != 64:
            raise InvalidArgumentError(f"digest hex must be 64 characters, got {len(text)}")
        return cls(int(text, 16))

    def hex(self) -> str:
        # canonical byte order: bucket 255 is the top bit of the first pair
        return f"{self.value:064x}"

    def complement(self) -> "Digest":
        return Digest(self.value ^ ((1 << DIGEST_BITS) - 1))

    def popcount(self) -> int:
        return self.value.bit_count()

    def bits(self) -> np.ndarray:
        raw = np.frombuffer(self.value.to_bytes(32, "big"), dtype=np.uint8)
        return np.unpackbits(raw)


@dataclass(frozen=True)
class QueryDigests:
    slots: Tuple[Digest, ...]
    subdomain_length: int

    @property
    def slot_count(self) -> int:
        return len(self.slots)


def _tran3(a: int, b: int, c: int, n: int) -> int:
    return ((TRAN[(a + n) & 255] ^ (TRAN[b] * (n + n + 1))) + TRAN[c ^ TRAN[n]]) & 255


def accumulate(data: bytes) -> List[int]:
    """Bucket counts for ``data``; ``w0`` is the most recent preceding byte."""
    acc = [0] * DIGEST_BITS
    w0 = w1 = w2 = w3 = -1
    for ch in data:
        if w1 >= 0:
            acc[_tran3(ch, w0, w1, 0)] += 1
        if w2 >= 0:
            acc[_tran3(ch, w0, w2, 1)] += 1
            acc[_tran3(ch, w1, w2, 2)] += 1
        if w3 >= 0:
            acc[_tran3(ch, w0, w3, 3)] += 1
            acc[_tran3(ch, w1, w3, 4)] += 1
            acc[_tran3(ch, w2, w3, 5)] += 1
            acc[_tran3(w3, w0, ch, 6)] += 1
            acc[_tran3(w3, w2, ch, 7)] += 1
        w3, w2, w1, w0 = w2, w1, w0, ch
    return acc


def trigram_total(length: int) -> int:
    if length < 3:
        return 0
    if length == 3:
        return 1
    if length == 4:
        return 4
    return 8 * length - 28


def threshold_bits(acc: Sequence[int], threshold_mode: str, length: int) -> int:
    """Set bit i when bucket i is strictly above the threshold (lower median or mean)."""
    if threshold_mode == "median":
        threshold: float = sorted(acc)[DIGEST_BITS // 2 - 1]
    else:
        threshold = trigram_total(length) / DIGEST_BITS
    value = 0
    for i, count in enumerate(acc):
        if count > threshold:
            value |= 1 << i
    return value


@lru_cache(maxsize=65536)
def _digest_value(data: bytes, threshold_mode: str) -> int:
    if len(data) < 3:
        return 0
    return threshold_bits(accumulate(data), threshold_mode, len(data))


def nilsimsa_digest(data: bytes, config: HashConfig) -> Digest:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return Digest(_digest_value(bytes(data), config.threshold_mode))


def compare(a: Digest, b: Digest) -> int:
    """Matching bits minus 128, in [-128, 128]."""
    return 128 - (a.value ^ b.value).bit_count()


def segment_string(s: str, k: int) -> List[str]:
    if k < 1:
        raise InvalidArgumentError(f"segment count must be at least 1, got {k}")
    base, extra = divmod(len(s), k)
    out: List[str] = []
    pos = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        out.append(s[pos:pos + size])
        pos += size
    return out


def digest_query(subdomain: str, config: HashConfig) -> QueryDigests:
    slots: List[Digest] = []
    if config.include_global:
        slots.append(nilsimsa_digest(subdomain.encode("utf-8"), config))
    for segment in segment_string(subdomain, config.segment_count):
        slots.append(nilsimsa_digest(segment.encode("utf-8"), config))
    return QueryDigests(slots=tuple(slots), subdomain_length=len(subdomain))


def slot_layout(config: HashConfig) -> List[str]:
    names = ["global"] if config.include_global else []
    names.extend(f"seg{i + 1}" for i in range(config.segment_count))
    return names

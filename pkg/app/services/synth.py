from __future__ import annotations
import logging
import string
import struct
from typing import Callable, Dict, List, Sequence, Tuple

import dpkt
import numpy as np
from dnslib import DNSHeader, DNSQuestion, DNSRecord, QTYPE

from app.models import LEGITIMATE, DnsQueryRecord, SynthProfile
from app.services.service_registry import SYNTHETIC_FAMILY

logger = logging.getLogger(__name__)

VOCABULARY = ("www", "mail", "api", "cdn", "static", "img", "login", "m", "smtp", "ns1")
ALPHABETS: Dict[str, str] = {
    # delimiter characters are left out so cleaned payload lengths stay exact
    "base64url-like": string.ascii_letters + string.digits,
    "base32-like": string.ascii_lowercase + "234567",
    "hex-letters": "0123456789abcdef",
}
LENGTH_DEFAULTS: Dict[str, Tuple[int, int]] = {
    "benign-static": (0, 0),
    "benign-cdn": (6, 12),
    "tunnel-upload": (40, 60),
    "tunnel-download": (16, 28),
    "tunnel-idle": (12, 12),
}
QTYPES = {
    "benign-static": "A",
    "benign-cdn": "A",
    "tunnel-upload": "TXT",
    "tunnel-download": "TXT",
    "tunnel-idle": "A",
}
BEHAVIOR_OF = {"tunnel-upload": "upload", "tunnel-download": "download", "tunnel-idle": "idle"}
MAX_LABEL = 63


def _random_string(rng: np.random.Generator, alphabet: str, length: int) -> str:
    return "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=length))


def _mutate(rng: np.random.Generator, template: str, alphabet: str, randomness: float) -> str:
    fresh = _random_string(rng, alphabet, len(template))
    pick = rng.random(len(template)) < randomness
    return "".join(f if p else t for t, f, p in zip(template, fresh, pick))


def _as_labels(payload: str) -> str:
    return ".".join(payload[i:i + MAX_LABEL] for i in range(0, len(payload), MAX_LABEL))


def _lengths(profile: SynthProfile) -> Tuple[int, int]:
    lo, hi = LENGTH_DEFAULTS[profile.kind]
    lo = profile.min_length if profile.min_length is not None else lo
    hi = profile.max_length if profile.max_length is not None else max(hi, lo)
    return lo, max(lo, hi)


def _benign_static(profile: SynthProfile, rng: np.random.Generator, lo: int, hi: int, alphabet: str) -> List[str]:
    out: List[str] = []
    current = VOCABULARY[rng.integers(len(VOCABULARY))]
    for i in range(profile.query_count):
        if i and rng.random() >= profile.repeat_probability:
            current = VOCABULARY[rng.integers(len(VOCABULARY))]
        out.append(current)
    return out


def _benign_cdn(profile: SynthProfile, rng: np.random.Generator, lo: int, hi: int, alphabet: str) -> List[str]:
    out: List[str] = []
    current = ""
    for i in range(profile.query_count):
        if not i or rng.random() >= profile.repeat_probability:
            current = _random_string(rng, alphabet, int(rng.integers(lo, hi + 1)))
        out.append(current)
    return out


def _tunnel_upload(profile: SynthProfile, rng: np.random.Generator, lo: int, hi: int, alphabet: str) -> List[str]:
    template = _random_string(rng, alphabet, hi)
    out = []
    for _ in range(profile.query_count):
        length = int(rng.integers(lo, hi + 1))
        out.append(_as_labels(_mutate(rng, template[:length], alphabet, profile.payload_randomness)))
    return out


def _tunnel_download(profile: SynthProfile, rng: np.random.Generator, lo: int, hi: int, alphabet: str) -> List[str]:
    session = _random_string(rng, alphabet, 4)
    template = _random_string(rng, alphabet, hi)
    out = []
    for i in range(profile.query_count):
        length = int(rng.integers(lo, hi + 1))
        head = f"{session}{i % 0x10000:04x}"
        body = _mutate(rng, template[: max(0, length - len(head))], alphabet, profile.payload_randomness)
        out.append(_as_labels((head + body)[:length]))
    return out


def _tunnel_idle(profile: SynthProfile, rng: np.random.Generator, lo: int, hi: int, alphabet: str) -> List[str]:
    poll = _random_string(rng, alphabet, lo)
    return [f"{poll}.{i:x}" if poll else f"{i:x}" for i in range(profile.query_count)]


GENERATORS: Dict[str, Callable[..., List[str]]] = {
    "benign-static": _benign_static,
    "benign-cdn": _benign_cdn,
    "tunnel-upload": _tunnel_upload,
    "tunnel-download": _tunnel_download,
    "tunnel-idle": _tunnel_idle,
}


def generate(profile: SynthProfile) -> List[DnsQueryRecord]:
    rng = np.random.default_rng(profile.seed)
    lo, hi = _lengths(profile)
    subdomains = GENERATORS[profile.kind](profile, rng, lo, hi, ALPHABETS[profile.alphabet])
    benign = profile.kind.startswith("benign")
    family = LEGITIMATE if benign else SYNTHETIC_FAMILY
    behavior = None if benign else BEHAVIOR_OF[profile.kind]
    return [
        DnsQueryRecord(
            timestamp=profile.start_time + i * profile.interval,
            qname=f"{sub}.{profile.domain}" if sub else profile.domain,
            qtype=QTYPES[profile.kind],
            family_label=family,
            behavior_label=behavior,
            source=profile.source,
        )
        for i, sub in enumerate(subdomains)
    ]


def mixed_profiles(benign_queries: int = 5000, tunnel_queries: int = 5000, domains_per_side: int = 5,
                   seed: int = 42, source: str = "synth") -> List[SynthProfile]:
    """Benign domains alternate static/cdn; tunnel domains cycle upload/download/idle."""
    benign_kinds = ("benign-static", "benign-cdn")
    tunnel_kinds = ("tunnel-upload", "tunnel-download", "tunnel-idle")
    profiles: List[SynthProfile] = []
    for side, total, kinds, tld in (("benign", benign_queries, benign_kinds, "com"),
                                   ("tunnel", tunnel_queries, tunnel_kinds, "net")):
        base, extra = divmod(total, domains_per_side)
        for j in range(domains_per_side):
            kind = kinds[j % len(kinds)]
            profiles.append(SynthProfile(
                kind=kind,
                query_count=base + (1 if j < extra else 0),
                repeat_probability=0.2 if kind == "benign-cdn" else 0.7,
                payload_randomness=0.5 if kind == "tunnel-download" else 1.0,
                alphabet="base64url-like" if kind == "tunnel-upload" else "base32-like",
                domain=f"{side}{j}.{tld}",
                seed=seed * 1000 + len(profiles),
                source=source,
            ))
    return profiles


def mixed_dataset(benign_queries: int = 5000, tunnel_queries: int = 5000, domains_per_side: int = 5,
                  seed: int = 42, source: str = "synth") -> List[DnsQueryRecord]:
    records: List[DnsQueryRecord] = []
    for profile in mixed_profiles(benign_queries, tunnel_queries, domains_per_side, seed, source):
        records.extend(generate(profile))
    return records


def write_pcap(records: Sequence[DnsQueryRecord], path: str, tcp: bool = False, response: bool = False) -> None:
    """Minimal Ethernet/IPv4 captures carrying one DNS message per packet."""
    with open(path, "wb") as fh:
        writer = dpkt.pcap.Writer(fh)
        for i, r in enumerate(records):
            header = DNSHeader(id=i & 0xFFFF, qr=1 if response else 0, rd=1)
            msg = DNSRecord(header, q=DNSQuestion(r.qname, QTYPE.reverse.get(r.qtype, 1)))
            payload = msg.pack()
            sport = 40000 + i % 20000
            if tcp:
                segment = dpkt.tcp.TCP(sport=sport, dport=53, seq=i + 1, flags=dpkt.tcp.TH_PUSH | dpkt.tcp.TH_ACK,
                                       data=struct.pack("!H", len(payload)) + payload)
                proto = dpkt.ip.IP_PROTO_TCP
            else:
                segment = dpkt.udp.UDP(sport=sport, dport=53, data=payload)
                segment.ulen = 8 + len(payload)
                proto = dpkt.ip.IP_PROTO_UDP
            ip = dpkt.ip.IP(src=bytes([10, 0, 0, 2]), dst=bytes([10, 0, 0, 53]), p=proto, ttl=64, data=segment)
            ip.len = 20 + len(bytes(segment))
            eth = dpkt.ethernet.Ethernet(src=b"\x02\x00\x00\x00\x00\x01", dst=b"\x02\x00\x00\x00\x00\x35",
                                         type=dpkt.ethernet.ETH_TYPE_IP, data=ip)
            writer.writepkt(bytes(eth), ts=r.timestamp)
    logger.info("Wrote %d DNS %s to %s", len(records), "responses" if response else "queries", path)

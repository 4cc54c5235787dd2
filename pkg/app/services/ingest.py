from __future__ import annotations
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

import dpkt
import pandas as pd
from dnslib import DNSError, DNSRecord, QTYPE
from pydantic import ValidationError

from app.errors import DataError, NoRegisteredDomainError, RowError, SchemaError
from app.models import DEFAULT_DELIMITERS, DnsQueryRecord
from app.services.naming import SuffixRules, normalize_qname, strip_delimiters

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["ts", "qname", "qtype", "family", "behavior", "source"]
DNS_PORT = 53
PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"
_PARSER_LINE = re.compile(r"line (\d+)")


# -------------------- Record containers --------------------

@dataclass(frozen=True)
class CleanQuery:
    record: DnsQueryRecord
    registered_domain: str
    subdomain_clean: str


@dataclass
class DomainStream:
    key: Tuple[str, str]
    queries: List[CleanQuery] = field(default_factory=list)

    @property
    def key_str(self) -> str:
        return stream_key_str(self.key)

    def __len__(self) -> int:
        return len(self.queries)


@dataclass(frozen=True)
class ExcludedRecord:
    record: DnsQueryRecord
    reason: str


@dataclass
class StreamGrouping:
    streams: List[DomainStream]
    excluded: List[ExcludedRecord]


@dataclass
class PcapSummary:
    packets: int = 0
    dns_messages: int = 0
    queries: int = 0
    responses: int = 0
    malformed: int = 0
    fragmented: int = 0
    truncated: int = 0
    no_question: int = 0
    non_dns: int = 0

    @property
    def skipped(self) -> int:
        return self.malformed + self.fragmented + self.truncated + self.no_question


def stream_key_str(key: Tuple[str, str]) -> str:
    return f"{key[0]}|{key[1]}"


def source_of(stream_key: str) -> str:
    return stream_key.rsplit("|", 1)[0]


# -------------------- PCAP --------------------

def _open_reader(fh):
    head = fh.read(4)
    fh.seek(0)
    if head == PCAPNG_MAGIC:
        return dpkt.pcapng.Reader(fh)
    return dpkt.pcap.Reader(fh)


def _network_layer(buf: bytes, datalink: int):
    if datalink == dpkt.pcap.DLT_EN10MB:
        return dpkt.ethernet.Ethernet(buf).data
    if datalink == dpkt.pcap.DLT_LINUX_SLL:
        return dpkt.sll.SLL(buf).data
    if datalink in (dpkt.pcap.DLT_RAW, 101):
        version = buf[0] >> 4 if buf else 0
        return dpkt.ip6.IP6(buf) if version == 6 else dpkt.ip.IP(buf)
    return None


def _is_fragment(ip) -> bool:
    if isinstance(ip, dpkt.ip.IP):
        return bool(ip.off & (dpkt.ip.IP_MF | dpkt.ip.IP_OFFMASK))
    return False


def _dns_payloads(ip, summary: PcapSummary) -> Iterator[bytes]:
    transport = ip.data
    if isinstance(transport, dpkt.udp.UDP):
        if DNS_PORT not in (transport.sport, transport.dport):
            summary.non_dns += 1
        elif transport.ulen > 8 + len(transport.data):
            summary.truncated += 1
        else:
            yield bytes(transport.data)
        return
    if isinstance(transport, dpkt.tcp.TCP):
        if DNS_PORT not in (transport.sport, transport.dport):
            summary.non_dns += 1
            return
        data = bytes(transport.data)
        # DNS over TCP: 2-byte length prefix per message
        while data:
            if len(data) < 2:
                summary.truncated += 1
                return
            (length,) = struct.unpack("!H", data[:2])
            if len(data) < 2 + length:
                summary.truncated += 1
                return
            yield data[2:2 + length]
            data = data[2 + length:]
        return
    summary.non_dns += 1


def _records(reader, path: str, summary: PcapSummary) -> Iterator[Tuple[float, bytes]]:
    packets = iter(reader)
    while True:
        try:
            yield next(packets)
        except StopIteration:
            return
        except (dpkt.dpkt.UnpackError, struct.error) as e:
            # capture cut off inside a record header; keep what was read
            summary.truncated += 1
            logger.warning("%s: capture ends mid-record after %d packets: %s", path, summary.packets, e)
            return


def _qtype_name(qtype: int) -> str:
    return QTYPE.get(qtype, f"TYPE{qtype}")


def read_pcap(path: str) -> Tuple[List[DnsQueryRecord], PcapSummary]:
    summary = PcapSummary()
    records: List[DnsQueryRecord] = []
    source = Path(path).stem
    with open(path, "rb") as fh:
        try:
            reader = _open_reader(fh)
        except (ValueError, dpkt.dpkt.UnpackError) as e:
            raise OSError(f"{path} is not a readable pcap/pcapng capture: {e}") from e
        datalink = reader.datalink()
        for ts, buf in _records(reader, path, summary):
            summary.packets += 1
            try:
                ip = _network_layer(buf, datalink)
            except (dpkt.dpkt.UnpackError, dpkt.dpkt.NeedData, IndexError):
                summary.malformed += 1
                continue
            if not isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)):
                summary.non_dns += 1
                continue
            if _is_fragment(ip):
                summary.fragmented += 1
                continue
            for payload in _dns_payloads(ip, summary):
                try:
                    msg = DNSRecord.parse(payload)
                except (DNSError, struct.error, IndexError, UnicodeDecodeError):
                    summary.malformed += 1
                    continue
                summary.dns_messages += 1
                if msg.header.qr:
                    summary.responses += 1
                    continue
                if not msg.questions:
                    summary.no_question += 1
                    continue
                q = msg.questions[0]
                qname = normalize_qname(str(q.qname))
                if not qname:
                    summary.no_question += 1
                    continue
                records.append(DnsQueryRecord(
                    timestamp=float(ts),
                    qname=qname,
                    qtype=_qtype_name(q.qtype),
                    source=source,
                ))
                summary.queries += 1
    return records, summary


def parse_pcap(path: str) -> List[DnsQueryRecord]:
    records, summary = read_pcap(path)
    logger.info(
        "%s: %d packets, %d queries, %d responses filtered, %d skipped "
        "(malformed=%d fragmented=%d truncated=%d no-question=%d)",
        path, summary.packets, summary.queries, summary.responses, summary.skipped,
        summary.malformed, summary.fragmented, summary.truncated, summary.no_question,
    )
    if not records:
        logger.warning("%s: no DNS queries could be extracted", path)
    return records


# -------------------- CSV --------------------

def read_csv(path: str) -> List[DnsQueryRecord]:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise DataError(f"{path} is empty; expected header {','.join(CSV_COLUMNS)}") from e
    except pd.errors.ParserError as e:
        found = _PARSER_LINE.search(str(e))
        if found:
            raise RowError(int(found.group(1)), str(e).split("error: ")[-1].strip()) from e
        raise DataError(f"{path}: {e}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"{path} is not valid UTF-8 (byte offset {e.start})") from e
    for col in CSV_COLUMNS:
        if col not in df.columns:
            raise SchemaError(col, path)
    records: List[DnsQueryRecord] = []
    for offset, row in enumerate(df[CSV_COLUMNS].itertuples(index=False, name=None)):
        line = offset + 2  # header is line 1
        ts, qname, qtype, family, behavior, source = row
        try:
            records.append(DnsQueryRecord(
                timestamp=float(ts),
                qname=qname,
                qtype=qtype,
                family_label=family,
                behavior_label=behavior,
                source=source,
            ))
        except ValueError as e:
            detail = e.errors()[0]["msg"] if isinstance(e, ValidationError) else str(e)
            raise RowError(line, detail) from e
    return records


def write_csv(records: Sequence[DnsQueryRecord], path: str) -> None:
    df = pd.DataFrame(
        [
            (r.timestamp, r.qname, r.qtype, r.family_label or "", r.behavior_label or "", r.source)
            for r in records
        ],
        columns=CSV_COLUMNS,
    )
    df["ts"] = df["ts"].astype("float64")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


# -------------------- Grouping --------------------

def clean_record(record: DnsQueryRecord, suffix_rules: SuffixRules,
                 delimiters: Iterable[str] = DEFAULT_DELIMITERS) -> CleanQuery:
    subdomain, registered = suffix_rules.split(record.qname)
    return CleanQuery(
        record=record,
        registered_domain=registered,
        subdomain_clean=strip_delimiters(subdomain, delimiters),
    )


def group_by_domain(records: Iterable[DnsQueryRecord], suffix_rules: SuffixRules,
                    delimiters: Iterable[str] = DEFAULT_DELIMITERS) -> StreamGrouping:
    delimiters = tuple(delimiters)
    streams: Dict[Tuple[str, str], DomainStream] = {}
    excluded: List[ExcludedRecord] = []
    for record in records:
        try:
            cq = clean_record(record, suffix_rules, delimiters)
        except NoRegisteredDomainError:
            excluded.append(ExcludedRecord(record, NoRegisteredDomainError.reason))
            continue
        # registered domains compare case-insensitively
        key = (record.source, cq.registered_domain.lower())
        stream = streams.get(key)
        if stream is None:
            stream = streams[key] = DomainStream(key=key)
        stream.queries.append(cq)
    if excluded:
        logger.info("Excluded %d records without a registered domain", len(excluded))
    return StreamGrouping(streams=list(streams.values()), excluded=excluded)


def load_records(paths: Sequence[str]) -> List[DnsQueryRecord]:
    """Read a mix of CSV and pcap/pcapng inputs, in the order given."""
    records: List[DnsQueryRecord] = []
    for p in paths:
        if Path(p).suffix.lower() == ".csv":
            records.extend(read_csv(p))
        else:
            records.extend(parse_pcap(p))
    return records

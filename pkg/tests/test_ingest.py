from __future__ import annotations

import pytest

from app.errors import DataError, RowError, SchemaError
from app.models import DnsQueryRecord
from app.services.ingest import (
    group_by_domain,
    load_records,
    parse_pcap,
    read_csv,
    read_pcap,
    source_of,
    write_csv,
)
from app.services.synth import write_pcap
from tests.helpers import make_records, random_string

EXAMPLE_CSV = (
    "ts,qname,qtype,family,behavior,source\n"
    "1716200000.125,SGVsbG8gV29ybGQ.example.com,TXT,dnscat2,download,run1\n"
    "1716200001.000,www.example.com,A,legitimate,,isp-log\n"
    "1716200002.500,keepalive0.c2.net,A,roguerobin-ps,idle,run2\n"
)
HEADER = "ts,qname,qtype,family,behavior,source\n"


def test_read_example_rows(tmp_path):
    path = tmp_path / "q.csv"
    path.write_text(EXAMPLE_CSV, encoding="utf-8")
    records = read_csv(str(path))
    assert len(records) == 3
    first = records[0]
    assert first.timestamp == 1716200000.125
    assert first.qname == "SGVsbG8gV29ybGQ.example.com"
    assert first.qtype == "TXT"
    assert (first.family_label, first.behavior_label, first.source) == ("dnscat2", "download", "run1")
    assert records[1].behavior_label is None
    assert records[1].family_label == "legitimate"


def test_header_only_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(HEADER, encoding="utf-8")
    assert read_csv(str(path)) == []


def test_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("ts,qname,qtype,family,source\n1,a.example.com,A,,x\n", encoding="utf-8")
    with pytest.raises(SchemaError) as exc:
        read_csv(str(path))
    assert exc.value.column == "behavior"


@pytest.mark.parametrize(
    "row",
    [
        "-1,a.example.com,A,,,x",
        "1,,A,,,x",
        "1,a.example.com,A,legitimate,upload,x",
        "1,a.example.com,A,iodine,exfil,x",
        "soon,a.example.com,A,,,x",
        "2,b.example.com,A,,,x,surplus",
    ],
)
def test_bad_row_reports_line(tmp_path, row):
    path = tmp_path / "bad.csv"
    path.write_text(HEADER + "1,ok.example.com,A,,,x\n" + row + "\n", encoding="utf-8")
    with pytest.raises(RowError) as exc:
        read_csv(str(path))
    assert exc.value.line == 3


def test_invalid_utf8_is_a_data_error(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(HEADER.encode() + b"1,caf\xe9.example.com,A,,,x\n")
    with pytest.raises(DataError):
        read_csv(str(path))


def test_zero_byte_file_is_a_data_error(tmp_path):
    path = tmp_path / "nothing.csv"
    path.write_bytes(b"")
    with pytest.raises(DataError):
        read_csv(str(path))


def test_csv_write_read_identity(tmp_path, rng):
    families = ["legitimate", "iodine", "dnscat2", None]
    records = []
    for i in range(1000):
        family = families[int(rng.integers(len(families)))]
        behavior = "upload" if family not in (None, "legitimate") and rng.random() < 0.5 else None
        records.append(DnsQueryRecord(
            timestamp=float(rng.integers(0, 10**9)) + float(rng.integers(0, 1000)) / 1000,
            qname=f"{random_string(rng, int(rng.integers(1, 30)))}.example.com",
            qtype="TXT" if i % 3 else "A",
            family_label=family,
            behavior_label=behavior,
            source=f"cap,{i % 4}",
        ))
    path = tmp_path / "round.csv"
    write_csv(records, str(path))
    assert read_csv(str(path)) == records


def test_pcap_single_query(tmp_path):
    path = tmp_path / "one.pcap"
    write_pcap(make_records(["x"]), str(path))
    records, summary = read_pcap(str(path))
    assert [(r.qname, r.qtype) for r in records] == [("x.example.com", "A")]
    assert records[0].source == "one"
    assert summary.queries == 1


def test_pcap_response_only(tmp_path):
    path = tmp_path / "resp.pcap"
    write_pcap(make_records(["x"]), str(path), response=True)
    records, summary = read_pcap(str(path))
    assert records == []
    assert summary.responses == 1


@pytest.mark.parametrize("tcp", [False, True])
def test_pcap_hundred_queries_round_trip(tmp_path, rng, tcp):
    subs = [f"{random_string(rng, 20)}.{random_string(rng, 8)}" for _ in range(100)]
    written = make_records(subs, domain="tunnel.example.net")
    path = tmp_path / "many.pcap"
    write_pcap(written, str(path), tcp=tcp)
    records = parse_pcap(str(path))
    assert [r.qname for r in records] == [r.qname for r in written]
    assert [r.timestamp for r in records] == pytest.approx([r.timestamp for r in written])


def test_unreadable_capture(tmp_path):
    path = tmp_path / "junk.pcap"
    path.write_bytes(b"definitely not a capture")
    with pytest.raises(OSError):
        read_pcap(str(path))


def test_pcap_cut_inside_last_packet(tmp_path, rng):
    written = make_records([random_string(rng, 30) for _ in range(12)])
    path = tmp_path / "cut.pcap"
    write_pcap(written, str(path))
    path.write_bytes(path.read_bytes()[:-10])
    records, summary = read_pcap(str(path))
    assert [r.qname for r in records] == [r.qname for r in written[:-1]]
    assert summary.truncated == 1


def test_pcap_cut_inside_record_header(tmp_path, rng):
    written = make_records([random_string(rng, 30) for _ in range(12)])
    path = tmp_path / "tail.pcap"
    write_pcap(written, str(path))
    path.write_bytes(path.read_bytes() + bytes(6))
    records, summary = read_pcap(str(path))
    assert [r.qname for r in records] == [r.qname for r in written]
    assert summary.packets == 12
    assert summary.truncated == 1


def test_load_records_mixes_formats(tmp_path):
    csv_path = tmp_path / "q.csv"
    csv_path.write_text(EXAMPLE_CSV, encoding="utf-8")
    pcap_path = tmp_path / "cap.pcap"
    write_pcap(make_records(["a", "b"]), str(pcap_path))
    records = load_records([str(csv_path), str(pcap_path)])
    assert len(records) == 5
    assert records[-1].source == "cap"


def test_grouping_alternating_domains(suffix_rules):
    records = [
        DnsQueryRecord(timestamp=i, qname=q, source="s")
        for i, q in enumerate(["a.example.com", "b.other.net", "c.example.com", "d.other.net"])
    ]
    grouping = group_by_domain(records, suffix_rules)
    assert [s.key for s in grouping.streams] == [("s", "example.com"), ("s", "other.net")]
    assert [[q.subdomain_clean for q in s.queries] for s in grouping.streams] == [["a", "c"], ["b", "d"]]


def test_grouping_single_domain(suffix_rules):
    records = make_records([f"q{i}" for i in range(30)])
    grouping = group_by_domain(records, suffix_rules)
    assert len(grouping.streams) == 1
    assert len(grouping.streams[0]) == 30


def test_grouping_preserves_subsequence_order(suffix_rules, rng):
    domains = [f"site{i}.com" for i in range(5)]
    records = []
    for i, d in enumerate(rng.permutation(domains * 50)):
        records.append(DnsQueryRecord(timestamp=float(rng.integers(0, 5)), qname=f"n{i}.{d}", source="mix"))
    grouping = group_by_domain(records, suffix_rules)
    assert len(grouping.streams) == 5
    for stream in grouping.streams:
        expected = [r for r in records if r.qname.endswith("." + stream.key[1])]
        assert [q.record for q in stream.queries] == expected


def test_grouping_keys_by_source_and_case_insensitive_domain(suffix_rules):
    records = [
        DnsQueryRecord(timestamp=0, qname="A-1.Example.COM", source="cap1"),
        DnsQueryRecord(timestamp=1, qname="b_2.example.com", source="cap1"),
        DnsQueryRecord(timestamp=2, qname="c.example.com", source="cap2"),
    ]
    grouping = group_by_domain(records, suffix_rules)
    assert [s.key_str for s in grouping.streams] == ["cap1|example.com", "cap2|example.com"]
    assert [q.subdomain_clean for q in grouping.streams[0].queries] == ["A1", "b2"]
    assert source_of(grouping.streams[0].key_str) == "cap1"


def test_grouping_excludes_names_without_registered_domain(suffix_rules):
    records = [
        DnsQueryRecord(timestamp=0, qname="localhost", source="s"),
        DnsQueryRecord(timestamp=1, qname="x.example.com", source="s"),
    ]
    grouping = group_by_domain(records, suffix_rules)
    assert len(grouping.streams) == 1
    assert [(e.record.qname, e.reason) for e in grouping.excluded] == [("localhost", "no-registered-domain")]

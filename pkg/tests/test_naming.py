from __future__ import annotations

import pytest

from app.errors import NoRegisteredDomainError
from app.models import DEFAULT_DELIMITERS
from app.services.naming import SuffixRules, extract_subdomain, normalize_qname, strip_delimiters


@pytest.mark.parametrize(
    "qname,expected",
    [
        ("SGVsbG8gV29ybGQ.example.com", ("SGVsbG8gV29ybGQ", "example.com")),
        ("example.com", ("", "example.com")),
        ("a.b.site.co.uk", ("a.b", "site.co.uk")),
        ("x.example.com.", ("x", "example.com")),
        ("Mixed.Case.EXAMPLE.com", ("Mixed.Case", "EXAMPLE.com")),
    ],
)
def test_extract_subdomain(suffix_rules, qname, expected):
    assert extract_subdomain(qname, suffix_rules) == expected


@pytest.mark.parametrize("qname", ["localhost", "com", "co.uk"])
def test_names_without_registered_domain(suffix_rules, qname):
    with pytest.raises(NoRegisteredDomainError) as exc:
        suffix_rules.split(qname)
    assert exc.value.reason == "no-registered-domain"


def test_registered_domain_is_suffix_of_qname(suffix_rules):
    for qname in ["a.b.c.example.org", "deep.host.city.kawasaki.jp", "q1.api.example.co.uk"]:
        sub, reg = suffix_rules.split(qname)
        assert qname.endswith(reg)
        assert (f"{sub}.{reg}" if sub else reg) == qname


def test_suffix_list_file_overrides_snapshot(tmp_path):
    psl = tmp_path / "suffixes.dat"
    psl.write_text("// local rules\ncom\ncorp\n", encoding="utf-8")
    rules = SuffixRules.from_file(str(psl))
    assert rules.split("a.b.internal.corp") == ("a.b", "internal.corp")
    with pytest.raises(NoRegisteredDomainError):
        SuffixRules.bundled().split("a.b.internal.corp")


def test_missing_suffix_list_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        SuffixRules.from_file(str(tmp_path / "nope.dat"))


@pytest.mark.parametrize(
    "text,expected",
    [
        ("a.b.c", "abc"),
        ("chunk1-chunk2_x", "chunk1chunk2x"),
        ("SGVsbG8gV29ybGQ", "SGVsbG8gV29ybGQ"),
    ],
)
def test_strip_delimiters(text, expected):
    assert strip_delimiters(text, DEFAULT_DELIMITERS) == expected


def test_strip_only_configured_characters():
    assert strip_delimiters("a-b.c_d", ".") == "a-bc_d"


def test_normalize_qname():
    assert normalize_qname(" www.example.com. ") == "www.example.com"

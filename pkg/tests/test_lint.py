import dataclasses

import pytest
from hypothesis import given, strategies as st

from nrrach.frontend import SwitchingPolicy
from nrrach.lint import Finding, Severity, lint, suggest_k2
from nrrach.rach import RachConfig
from nrrach.scenario import LintFloors
from nrrach.sliv import Sliv

from conftest import FIXED_RACH, make_scenario


def _with(doc, **rach):
    return dataclasses.replace(doc.scenario, rach=dataclasses.replace(doc.scenario.rach, **rach))


def test_default_oai_flags_msg2_in_special_slot(oai_doc):
    rep = lint(oai_doc.scenario, oai_doc.lint)
    assert rep.has_errors
    assert rep.findings[0].code == "RACH001" and rep.findings[0].slot == 7
    assert "RACH001" in rep.codes()


def test_fixed_is_clean(fixed_doc):
    rep = lint(fixed_doc.scenario, fixed_doc.lint)
    assert rep.findings == ()
    assert rep.render() == "no findings\n"


def test_k2_7_from_last_downlink_slot_lands_in_downlink(fixed_doc):
    rep = lint(_with(fixed_doc, k2=7), fixed_doc.lint)
    assert rep.codes() == ["RACH002"]
    (f,) = rep.findings
    assert f.slot == 16 and f.suggested_k2 == 9
    assert "k2 = 9" in f.suggestion


def test_special_slot_rar_is_fine_with_symbol_switching(oai_doc):
    sc = dataclasses.replace(oai_doc.scenario, policy=SwitchingPolicy.SYMBOL_GRANULAR)
    assert "RACH001" not in lint(sc, oai_doc.lint).codes()


def test_floors_are_configurable(fixed_doc):
    assert lint(fixed_doc.scenario, LintFloors(14, 14)).codes() == ["RACH003"]
    rep = lint(_with(fixed_doc, msg2_sliv=Sliv(1, 7), msg3_sliv=Sliv(0, 8)), fixed_doc.lint)
    assert rep.codes() == ["RACH003", "RACH003"]
    assert not rep.has_errors
    assert all(f.severity is Severity.WARNING for f in rep.findings)


def test_errors_sort_before_warnings(oai_doc):
    findings = lint(oai_doc.scenario, oai_doc.lint).findings
    assert list(findings) == sorted(findings)
    severities = [f.severity for f in findings]
    assert severities == sorted(severities)


def test_rendering():
    f = Finding(Severity.ERROR, "RACH002", "bad", "k2 = 9 puts msg3 in uplink slot 18")
    assert str(f) == "Error RACH002: bad (suggestion: k2 = 9 puts msg3 in uplink slot 18)"
    assert str(Finding(Severity.WARNING, "RACH003", "short")) == "Warning RACH003: short"


@given(st.integers(0, 9), st.integers(0, 32))
def test_suggest_k2_matches_brute_force(msg2_slot, start):
    sc = make_scenario()
    pattern = sc.tdd.pattern_string * 2
    delta = 3  # mu = 1
    expected = next((k for k in range(start, start + 21)
                     if pattern[(msg2_slot + k + delta) % 20] == "U"), None)
    assert suggest_k2(sc, msg2_slot, start) == expected


@pytest.mark.parametrize("k2", range(0, 20))
def test_rach002_iff_msg3_not_in_uplink(k2):
    sc = make_scenario(rach=dataclasses.replace(FIXED_RACH, k2=k2))
    slot = (6 + k2 + 3) % 10
    assert ("RACH002" in lint(sc).codes()) == (sc.tdd.pattern_string[slot] != "U")


def test_lint_does_not_need_a_channel():
    sc = make_scenario(rach=RachConfig(), channel=None)
    assert lint(sc).has_errors

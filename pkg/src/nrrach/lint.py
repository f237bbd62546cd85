"""Static checks for scheduler/frontend mismatches in a scenario."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .frontend import build_timeline
from .rach import SchedulerPolicy, msg2_placement
from .scenario import LintFloors
from .sim import RachScenario
from .timing import Msg3Placement, SlotIndex, classify_msg3_slot, delta_for, msg3_slot


class Severity(enum.IntEnum):
    # lower sorts first
    ERROR = 0
    WARNING = 1

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True, order=True)
class Finding:
    severity: Severity
    code: str
    message: str
    suggestion: Optional[str] = None
    slot: Optional[int] = field(default=None, compare=False)          # offending slot in the period
    suggested_k2: Optional[int] = field(default=None, compare=False)

    def __str__(self):
        text = f"{self.severity.label} {self.code}: {self.message}"
        if self.suggestion:
            text += f" (suggestion: {self.suggestion})"
        return text


@dataclass(frozen=True)
class LintReport:
    findings: tuple[Finding, ...]

    @property
    def has_errors(self) -> bool:
        return any(f.severity is Severity.ERROR for f in self.findings)

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]

    def render(self) -> str:
        if not self.findings:
            return "no findings\n"
        return "".join(f"{f}\n" for f in self.findings)


def suggest_k2(scenario: RachScenario, msg2_slot: int, start_k2: int) -> Optional[int]:
    """Smallest ``k2 >= start_k2`` whose msg3 slot is a full uplink slot."""
    tdd = scenario.tdd
    mu = tdd.numerology.mu
    for k2 in range(start_k2, start_k2 + tdd.slots_per_frame + 1):
        slot = msg3_slot(SlotIndex(0, msg2_slot), k2, mu)
        if classify_msg3_slot(tdd, slot) is Msg3Placement.OK:
            return k2
    return None


def lint(scenario: RachScenario, floors: LintFloors = LintFloors()) -> LintReport:
    tdd, rach = scenario.tdd, scenario.rach
    timeline = build_timeline(tdd, scenario.policy, scenario.settling_symbols)
    findings = []

    slot, sliv = msg2_placement(rach, tdd)
    kind = tdd.pattern[slot].name.lower()
    dci_ok = timeline.span(slot, 0, 1) == "T"
    rar_span = timeline.span(slot, sliv.start, sliv.length)
    if not dci_ok or set(rar_span) != {"T"}:
        bad = [i for i in range(sliv.start, sliv.end + 1) if timeline.row(slot)[i] != "T"]
        if not dci_ok:
            bad.insert(0, 0)
        fix = None
        if rach.scheduler_policy is SchedulerPolicy.SPECIAL_SLOT:
            fix = "schedule msg2 in the last full downlink slot"
        findings.append(Finding(
            Severity.ERROR, "RACH001",
            f"msg2 in slot {slot} ({kind}) uses symbols {bad} that the "
            f"{scenario.policy.value} frontend does not amplify for transmit",
            fix, slot=slot))

    target = msg3_slot(SlotIndex(0, slot), rach.k2, tdd.numerology.mu)
    placement = classify_msg3_slot(tdd, target)
    if placement is not Msg3Placement.OK:
        delta = delta_for(tdd.numerology.mu)
        k2 = suggest_k2(scenario, slot, rach.k2)
        landing = tdd.kind_at(target.absolute(tdd.slots_per_frame))
        fix = None
        if k2 is not None:
            fix = f"k2 = {k2} puts msg3 in uplink slot {slot + k2 + delta}"
        findings.append(Finding(
            Severity.ERROR, "RACH002",
            f"msg3 granted from slot {slot} with k2 = {rach.k2} lands in slot "
            f"{slot + rach.k2 + delta} ({landing.name.lower()}, {placement.value})",
            fix, slot=slot + rach.k2 + delta, suggested_k2=k2))

    for name, length, floor in (("msg2", sliv.length, floors.msg2_min_length),
                                ("msg3", rach.msg3_sliv.length, floors.msg3_min_length)):
        if length < floor:
            findings.append(Finding(
                Severity.WARNING, "RACH003",
                f"{name} length {length} is below the reliability floor of {floor} symbols",
                f"use at least {floor} symbols"))

    return LintReport(tuple(sorted(findings)))


import dataclasses

import pytest

from nrrach.channel import ChannelParams, SiteProfile
from nrrach.frontend import SwitchingPolicy
from nrrach.rach import RachConfig, SchedulerPolicy
from nrrach.scenario import bundled, load_document
from nrrach.sim import RachScenario
from nrrach.sliv import Sliv
from nrrach.timing import DEFAULT_TDD

FIXED_RACH = RachConfig(scheduler_policy=SchedulerPolicy.LAST_FULL_DOWNLINK_SLOT, k2=9,
                        msg2_sliv=Sliv(1, 13), msg3_sliv=Sliv(0, 14))
LAB = SiteProfile("lab", 100.0)


def make_scenario(rach=None, channel=None, sites=(LAB,), **kw):
    return RachScenario(DEFAULT_TDD, rach or FIXED_RACH, kw.pop("policy", SwitchingPolicy.SLOT_GRANULAR),
                        tuple(sites), channel or ChannelParams.perfect(), **kw)


@pytest.fixture
def oai_doc():
    return load_document(bundled("default_oai.scenario"))


@pytest.fixture
def fixed_doc():
    return load_document(bundled("fixed.scenario"))


def with_channel(scenario, channel):
    return dataclasses.replace(scenario, channel=channel)


# --- acceptance reporting: one pass/fail line per criterion -----------------------

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    number, title = getattr(report, "criterion", (None, None))
    if number is None:
        return
    if report.when == "call" or report.outcome == "failed":
        passed, _ = _criteria.get(number, (True, title))
        _criteria[number] = (passed and report.outcome == "passed", title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        passed, title = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {title}")

"""Acceptance criteria 1-10. Run ``pytest tests/test_acceptance.py`` for the summary lines."""
import dataclasses
import itertools
import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from nrrach import report
from nrrach.channel import ChannelParams, Direction, SiteProfile, calibrate, decode_probability, \
    parse_targets, sample_decode
from nrrach.frontend import SwitchingPolicy, build_timeline
from nrrach.lint import lint
from nrrach.rach import FailureReason, MsgKind, RaMessage
from nrrach.sim import SweepSpec, contention_experiment, run_many, run_sweep, run_trial
from nrrach.sliv import MappingType, Sliv, decode_sliv, encode_sliv, enumerate_valid
from nrrach.timing import DEFAULT_TDD, Msg3Placement, SlotIndex, classify_msg3_slot, delta_for, \
    msg3_slot
from nrrach.scenario import bundled

criterion = pytest.mark.criterion


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f}s, budget {self.seconds}s"


@criterion(1, "SLIV exactness")
def test_sliv_exactness():
    with Budget(1.0):
        assert encode_sliv(1, 5).encoded == 57
        pairs = [(s, l) for s in range(14) for l in range(1, 15 - s)]
        assert len(pairs) == 105
        codes = {}
        for s, l in pairs:
            v = encode_sliv(s, l).encoded
            assert decode_sliv(v) == (s, l)
            codes.setdefault(v, []).append((s, l))
        assert all(len(v) == 1 for v in codes.values())
        assert Sliv.from_encoded(57) == Sliv(1, 5)


@criterion(2, "delta table")
def test_delta_table():
    assert tuple(delta_for(mu) for mu in range(4)) == (2, 3, 4, 6)


@criterion(3, "msg3 slot arithmetic")
@pytest.mark.parametrize("n,k2,slot,placement", [
    (6, 9, 18, Msg3Placement.OK),
    (6, 7, 16, Msg3Placement.DOWNLINK_COLLISION),
    (7, 7, 17, Msg3Placement.SPECIAL_SLOT_LANDING),
])
def test_msg3_slot_arithmetic(n, k2, slot, placement):
    target = msg3_slot(SlotIndex(0, n), k2, 1)
    assert target.absolute(DEFAULT_TDD.slots_per_frame) == slot
    assert classify_msg3_slot(DEFAULT_TDD, target) is placement


@criterion(4, "special-slot bug reproduction")
def test_bug_reproduction(oai_doc, fixed_doc):
    with Budget(10.0):
        perfect = ChannelParams.perfect()
        oai = dataclasses.replace(oai_doc.scenario, channel=perfect)
        outs = run_many(oai, 0, trials=1000)
        assert sum(o.connected for o in outs) == 0
        assert all(o.reason is FailureReason.RAR_RECEPTION_FAILED for o in outs)

        fixed = dataclasses.replace(fixed_doc.scenario, channel=perfect)
        outs = run_many(fixed, 0, trials=1000)
        assert sum(o.connected for o in outs) == 1000


@criterion(5, "frontend timeline golden")
def test_frontend_timeline_golden():
    slot = build_timeline(DEFAULT_TDD, SwitchingPolicy.SLOT_GRANULAR).dump()
    expected = "T" * 14 + "\n"
    expected = expected * 7 + ("R" * 14 + "\n") * 3
    assert slot == expected
    sym = build_timeline(DEFAULT_TDD, SwitchingPolicy.SYMBOL_GRANULAR)
    assert sym.row(7) == "TTTTTTGGGGRRRR"


@criterion(6, "channel monotonicity and Monte Carlo agreement")
def test_channel_monotonicity():
    with Budget(30.0):
        # 10 x 10 x 10 grid of (threshold, sigma, base SNR); each point checks L and distance
        for thr, sigma, base in itertools.product(np.linspace(-5, 25, 10), np.linspace(0, 10, 10),
                                                  np.linspace(10, 50, 10)):
            p = ChannelParams(base_snr_db=base, fading_sigma_db=sigma, decode_threshold_db=thr,
                              saturation_penalty_db=0)
            site = SiteProfile("s", 650, saturation_factor=1)
            for direction in Direction:
                by_len = [decode_probability(p, site, L, direction) for L in range(1, 15)]
                assert all(a <= b for a, b in zip(by_len, by_len[1:]))
                by_dist = [decode_probability(p, SiteProfile("s", d, saturation_factor=1), 6, direction)
                           for d in (100, 450, 650, 1000, 1600, 3000)]
                assert all(a >= b for a, b in zip(by_dist, by_dist[1:]))

        params = ChannelParams(fading_sigma_db=5, decode_threshold_db=10)
        timeline = build_timeline(DEFAULT_TDD, SwitchingPolicy.SLOT_GRANULAR)
        site = SiteProfile("s", 700)
        n = 10_000
        for length in (2, 5, 9, 13):
            msg = RaMessage(MsgKind.MSG2_RAR, SlotIndex(0, 6), 0, length)
            rng = np.random.default_rng(length)
            hits = sum(sample_decode(rng, params, site, msg, timeline).delivered for _ in range(n))
            mean = params.mean_snr_db(site, Direction.DOWNLINK) + \
                params.redundancy_gain_db_per_symbol * math.log2(length)
            expect = norm.sf(params.decode_threshold_db, loc=mean, scale=params.fading_sigma_db)
            assert expect == pytest.approx(decode_probability(params, site, length,
                                                              Direction.DOWNLINK))
            assert abs(hits / n - expect) <= 3 * math.sqrt(expect * (1 - expect) / n)


def _by_length(result):
    out = {}
    for (_, length), cell in result.cells.items():
        out.setdefault(length, []).append(cell.success(result.message))
    return out


@criterion(7, "calibrated field-trend reproduction")
def test_calibrated_reproduction(fixed_doc):
    with Budget(60.0):
        sc = fixed_doc.scenario
        targets = parse_targets(bundled("calibration_targets.txt").read_text().splitlines())
        fit = calibrate(targets, sc.sites, ChannelParams(),
                        msg3_attempts=sc.rach.msg3_retx_window_frames)
        assert fit.max_residual <= 0.10
        sc = dataclasses.replace(sc, channel=fit.params, trials=1000)
        type_a = tuple(enumerate_valid(MappingType.TYPE_A_PDSCH))
        type_b = tuple(enumerate_valid(MappingType.TYPE_B_PUSCH))

        def sweep(message, site):
            grid = type_a if message == 2 else type_b
            return _by_length(run_sweep(SweepSpec(message, grid, sc, sc.site_index(site))))

        n = 1000
        bio2, bio3 = sweep(2, "biorefinery"), sweep(3, "biorefinery")
        farm2, farm3 = sweep(2, "ag_farm"), sweep(3, "ag_farm")
        grain3 = sweep(3, "grain_bin")

    assert all(c >= 0.90 * n for L, cs in bio2.items() if L >= 8 for c in cs)
    assert all(c < 0.90 * n for L, cs in bio2.items() if L <= 5 for c in cs)
    assert all(c >= 0.90 * n for L, cs in bio3.items() if L >= 9 for c in cs)
    assert all(c >= 0.80 * n for L, cs in farm2.items() if L >= 3 for c in cs)
    assert all(c < 0.20 * n for L, cs in farm3.items() if L < 8 for c in cs)
    assert min(c for L, cs in grain3.items() if L >= 11 for c in cs) > \
        max(c for L, cs in grain3.items() if L <= 4 for c in cs)


@criterion(8, "contention statistics")
def test_contention_statistics(fixed_doc):
    with Budget(10.0):
        sc = dataclasses.replace(fixed_doc.scenario, channel=ChannelParams.perfect(),
                                 ue_count_per_site=2)
        res = contention_experiment(sc, 0, trials=10_000)
    assert sc.rach.cbra_preambles == 60
    assert abs(res.collision_rate - 1 / 60) <= 0.005
    assert res.collisions == len(res.winners_per_collision) > 0
    assert set(res.winners_per_collision) == {1}


@criterion(9, "lint correctness")
def test_lint_correctness(oai_doc, fixed_doc):
    assert "RACH001" in lint(oai_doc.scenario, oai_doc.lint).codes()
    k2_7 = dataclasses.replace(fixed_doc.scenario,
                               rach=dataclasses.replace(fixed_doc.scenario.rach, k2=7))
    findings = [f for f in lint(k2_7, fixed_doc.lint).findings if f.code == "RACH002"]
    assert [f.suggested_k2 for f in findings] == [9]
    assert lint(fixed_doc.scenario, fixed_doc.lint).findings == ()


def _artifacts(scenario, workers):
    csv, traces = [], []
    for site in range(len(scenario.sites)):
        csv.append(report.outcomes_csv(run_many(scenario, site, workers=workers)))
        for t in range(3):
            lines = []
            run_trial(scenario, site, t, trace=lines)
            traces.append("\n".join(lines))
    grid = tuple(enumerate_valid(MappingType.TYPE_B_PUSCH))[:30]
    csv.append(report.sweep_csv(run_sweep(SweepSpec(3, grid, scenario, 1), workers=workers)))
    return "".join(csv).encode(), "".join(traces).encode()


@criterion(10, "determinism")
@pytest.mark.parametrize("name", ["default_oai.scenario", "fixed.scenario"])
def test_determinism(name):
    from nrrach.scenario import load_scenario
    sc = dataclasses.replace(load_scenario(bundled(name)), trials=200, seed=2024)
    first = _artifacts(sc, 1)
    assert first == _artifacts(sc, 1)
    assert first == _artifacts(sc, 2)

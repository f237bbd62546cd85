"""Discrete-event engine and Monte Carlo runner.

Events live in a calendar ordered by ``(slot, symbol, actor, fifo)`` where the
gNB is actor 0 and UE ``i`` is actor ``i + 1``.  Every trial draws from its
own counter-based Philox stream keyed by ``(seed, site, trial)``; the draw
index is the stream counter, so trials can run in any order or in parallel
without changing a single draw.
"""
from __future__ import annotations

import functools
import heapq
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .channel import ChannelParams, DecodeVerdict, SiteProfile, sample_decode
from .frontend import SwitchingPolicy, build_timeline
from .rach import (
    Delivery,
    FailureReason,
    GnbState,
    MsgKind,
    Phase,
    RachConfig,
    RaMessage,
    Tick,
    gnb_step,
    initial_ue,
    ue_step,
)
from .sliv import MappingType, Sliv, validate_mapping
from .timing import ConfigError, SlotIndex, TddConfig

GNB = 0
_TICK, _TX, _RX = 0, 1, 2
_STOCHASTIC = (MsgKind.MSG2_RAR, MsgKind.MSG3, MsgKind.MSG4)
_MASK32 = (1 << 32) - 1


@dataclass(frozen=True)
class RachScenario:
    tdd: TddConfig
    rach: RachConfig
    policy: SwitchingPolicy
    sites: tuple[SiteProfile, ...]
    channel: ChannelParams
    ue_count_per_site: int = 1
    trials: int = 1000
    seed: int = 0
    horizon_frames: int = 64
    settling_symbols: int = 0
    workers: int = 1

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        out = []
        if self.trials < 1:
            out.append("sim.trials must be >= 1")
        if self.ue_count_per_site < 1:
            out.append("sim.ue_count_per_site must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            out.append("sim.seed must fit in 64 bits")
        if self.workers < 1:
            out.append("sim.workers must be >= 1")
        if self.settling_symbols < 0:
            out.append("frontend.settling_symbols must be >= 0")
        # one RA cycle is at most two frames before msg3 starts
        need = self.rach.msg3_retx_window_frames + 2
        if self.horizon_frames < need:
            out.append(f"sim.horizon_frames={self.horizon_frames} must be >= {need} "
                       f"(msg3 window plus one RA cycle)")
        if not self.sites:
            out.append("at least one site is required")
        names = [s.name for s in self.sites]
        if len(set(names)) != len(names):
            out.append("site names must be unique")
        if not 0 <= self.rach.msg1_slot < self.tdd.slots_per_frame:
            out.append(f"rach.msg1_slot={self.rach.msg1_slot} outside 0..{self.tdd.slots_per_frame - 1}")
        return out

    def site_index(self, name_or_index) -> int:
        if isinstance(name_or_index, int):
            if not 0 <= name_or_index < len(self.sites):
                raise IndexError(f"no site {name_or_index}")
            return name_or_index
        for i, s in enumerate(self.sites):
            if s.name == name_or_index:
                return i
        raise KeyError(f"no site named {name_or_index!r}")


class VerdictRecord(NamedTuple):
    message: RaMessage
    sender: int          # actor id, GNB = 0
    receiver: int
    ue: int              # UE tag the record belongs to
    cycle: int           # that UE's RA attempt number (1-based)
    verdict: DecodeVerdict


@dataclass(frozen=True)
class UeResult:
    ue_tag: int
    connected: bool
    reason: Optional[FailureReason]
    cycles_used: int

    @property
    def final(self) -> str:
        return "Connected" if self.connected else f"Failed({self.reason.value})"


@dataclass(frozen=True)
class TrialOutcome:
    site: str
    trial: int
    verdicts: tuple[VerdictRecord, ...]
    ues: tuple[UeResult, ...]

    @property
    def final(self) -> str:
        return self.ues[0].final

    @property
    def connected(self) -> bool:
        return self.ues[0].connected

    @property
    def reason(self) -> Optional[FailureReason]:
        return self.ues[0].reason

    @property
    def cycles_used(self) -> int:
        return self.ues[0].cycles_used

    def preamble(self, ue: int = 0, cycle: int = 1) -> Optional[int]:
        for r in self.verdicts:
            if r.message.kind is MsgKind.MSG1 and r.ue == ue and r.cycle == cycle:
                return r.message.preamble_tag
        return None

    def msg2_decoded(self, ue: int = 0, cycle: int = 1) -> bool:
        """DCI and RAR for this UE's preamble both reached it in ``cycle``."""
        p = self.preamble(ue, cycle)
        got = set()
        for r in self.verdicts:
            if (r.ue == ue and r.cycle == cycle and r.verdict.delivered
                    and r.message.preamble_tag == p
                    and r.message.kind in (MsgKind.MSG2_DCI, MsgKind.MSG2_RAR)):
                got.add(r.message.kind)
        return len(got) == 2

    def msg3_decoded(self, ue: int = 0, cycle: int = 1) -> bool:
        """Any msg3 (re)transmission of ``cycle`` decoded by the gNB."""
        return any(r.message.kind is MsgKind.MSG3 and r.ue == ue and r.cycle == cycle
                   and r.verdict.delivered for r in self.verdicts)


@functools.lru_cache(maxsize=64)
def _timelines(tdd: TddConfig, policy: SwitchingPolicy, settling: int):
    gnb_tl = build_timeline(tdd, policy, settling)
    return gnb_tl, gnb_tl.mirrored()


def _trial_key(seed: int, site: int, trial: int) -> np.ndarray:
    return np.array([seed, ((site & _MASK32) << 32) | (trial & _MASK32)], dtype=np.uint64)


def trial_rng(seed: int, site: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=_trial_key(seed, site, trial)))


class _StreamPool:
    """Re-keys one Philox generator per process; much cheaper than building a new one."""

    def __init__(self):
        self._bitgen = np.random.Philox(0)
        self.generator = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state

    def rekey(self, seed: int, site: int, trial: int) -> np.random.Generator:
        st = self._state
        st["state"]["key"] = _trial_key(seed, site, trial)
        st["state"]["counter"] = np.zeros(4, dtype=np.uint64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st
        return self.generator


_streams = _StreamPool()


def _stamp(slot: int, symbol: int, spf: int) -> str:
    frame, s = divmod(slot, spf)
    return f"{frame}.{s}.{symbol}"


def _actor(a: int) -> str:
    return "gnb" if a == GNB else f"ue{a - 1}"


def _fmt_verdict(v: DecodeVerdict) -> str:
    snr = "-inf" if v.effective_snr_db == -math.inf else f"{v.effective_snr_db:.3f}"
    return f"{v.reason.value} snr={snr}"


def _fmt_msg(m: RaMessage) -> str:
    parts = [f"slot={m.tx_slot}", f"symbols={m.start}+{m.length}"]
    if m.preamble_tag is not None:
        parts.append(f"preamble={m.preamble_tag}")
    if m.ue_tag is not None:
        parts.append(f"ue_tag={m.ue_tag}")
    if m.grant is not None:
        parts.append(f"grant={m.grant.slot}/{m.grant.sliv.start}+{m.grant.sliv.length}"
                     f"/{m.grant.placement.value}")
    return " ".join(parts)


def run_trial(scenario: RachScenario, site_index: int, trial_index: int,
              trace: Optional[list] = None) -> TrialOutcome:
    """Run one trial at ``sites[site_index]``; append trace lines to ``trace`` if given."""
    tdd, rach, channel = scenario.tdd, scenario.rach, scenario.channel
    site = scenario.sites[site_index]
    spf = tdd.slots_per_frame
    horizon = scenario.horizon_frames * spf
    gnb_tl, ue_tl = _timelines(tdd, scenario.policy, scenario.settling_symbols)
    rng = _streams.rekey(scenario.seed, site_index, trial_index)
    shadowing = 0.0
    if channel.shadowing_sigma_db > 0:
        shadowing = channel.shadowing_sigma_db * float(rng.standard_normal())

    n = scenario.ue_count_per_site
    ues = [initial_ue(i, rach) for i in range(n)]
    gnb = GnbState()
    records: list[VerdictRecord] = []
    queue: list = []
    fifo = itertools.count()
    pending_tick = [None] * n
    live = n

    def push(slot, symbol, actor, kind, payload=None):
        heapq.heappush(queue, (slot, symbol, actor, next(fifo), kind, payload))

    def log(slot, symbol, actor, kind, detail):
        if trace is not None:
            trace.append(f"{_stamp(slot, symbol, spf)} | {_actor(actor)} | {kind} | {detail}")

    def after_ue(i, old, new, msg, slot, symbol):
        nonlocal live
        ues[i] = new
        if msg is not None:
            push(msg.tx_slot.absolute(spf), msg.start, i + 1, _TX, msg)
        if trace is not None and new.phase is not old.phase:
            detail = new.phase.value
            if new.phase is Phase.FAILED:
                detail += f" reason={new.failure.value} attempt={new.attempt_count}"
            elif new.phase is Phase.AWAITING_RAR:
                detail += f" attempt={new.attempt_count}"
            log(slot, symbol, i + 1, "state", detail)
        if new.terminal:
            if not old.terminal:
                live -= 1
            return
        wake = new.next_wakeup()
        if wake is not None and wake != pending_tick[i]:
            pending_tick[i] = wake
            push(wake, 0, i + 1, _TICK)

    for i in range(n):
        pending_tick[i] = rach.msg1_slot
        push(rach.msg1_slot, 0, i + 1, _TICK)

    last = last_symbol = 0
    while queue and live:
        slot, symbol, actor, _, kind, payload = heapq.heappop(queue)
        if slot >= horizon:
            last, last_symbol = horizon, 0
            break
        last, last_symbol = slot, symbol
        if kind == _TICK:
            if actor == GNB:
                gnb, _out = gnb_step(gnb, Tick(slot), rach, tdd)
            else:
                i = actor - 1
                if pending_tick[i] == slot:
                    pending_tick[i] = None
                old = ues[i]
                new, msg = ue_step(old, Tick(slot), rach, tdd, rng)
                after_ue(i, old, new, msg, slot, symbol)
        elif kind == _TX:
            msg = payload
            if trace is not None:
                log(slot, symbol, actor, f"tx {msg.kind.value}", _fmt_msg(msg))
            if actor == GNB:
                if msg.kind is MsgKind.MSG4:
                    targets = [u.ue_tag for u in ues
                               if u.phase is Phase.AWAITING_MSG4 and u.grant == msg.grant]
                else:
                    targets = [u.ue_tag for u in ues if u.phase is Phase.AWAITING_RAR]
                timeline = gnb_tl
            else:
                targets = [None]
                timeline = ue_tl
            stochastic = msg.kind in _STOCHASTIC
            for t in targets:
                verdict = sample_decode(rng, channel, site, msg, timeline, shadowing, stochastic)
                ue = actor - 1 if t is None else t
                receiver = GNB if t is None else t + 1
                records.append(VerdictRecord(msg, actor, receiver, ue, ues[ue].attempt_count, verdict))
                if verdict.delivered:
                    push(slot, msg.end_symbol, receiver, _RX, msg)
                elif trace is not None:
                    log(slot, symbol, receiver, f"lost {msg.kind.value}", _fmt_verdict(verdict))
        else:
            msg = payload
            if trace is not None:
                log(slot, symbol, actor, f"rx {msg.kind.value}", _fmt_msg(msg))
            if actor == GNB:
                gnb, out = gnb_step(gnb, Delivery(msg, slot), rach, tdd)
                for m in out:
                    push(m.tx_slot.absolute(spf), m.start, GNB, _TX, m)
                    if m.kind is MsgKind.MSG2_RAR:
                        expiry = (m.grant.slot.absolute(spf)
                                  + (rach.msg3_retx_window_frames - 1) * spf + 1)
                        push(expiry, 0, GNB, _TICK)
            else:
                i = actor - 1
                old = ues[i]
                new, m = ue_step(old, Delivery(msg, slot), rach, tdd, rng)
                after_ue(i, old, new, m, slot, symbol)

    results = []
    for u in ues:
        if u.phase is Phase.CONNECTED:
            results.append(UeResult(u.ue_tag, True, None, u.attempt_count))
        elif u.terminal:
            results.append(UeResult(u.ue_tag, False, u.failure, u.attempt_count))
        else:
            results.append(UeResult(u.ue_tag, False, FailureReason.HORIZON_EXCEEDED, u.attempt_count))
    if trace is not None:
        for r in results:
            log(last, last_symbol, r.ue_tag + 1, "final", f"{r.final} cycles={r.cycles_used}")
    return TrialOutcome(site.name, trial_index, tuple(records), tuple(results))


# --- sweeps --------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    message: int                # 2 or 3
    grid: tuple[Sliv, ...]
    base: RachScenario
    site: int = 0

    def __post_init__(self):
        if self.message not in (2, 3):
            raise ValueError("message must be 2 or 3")
        if not self.grid:
            raise ValueError("sweep grid is empty")
        mapping = MappingType.TYPE_A_PDSCH if self.message == 2 else MappingType.TYPE_B_PUSCH
        bad = [s for s in self.grid if validate_mapping(s, mapping) is not None]
        if bad:
            raise ValueError(f"grid entries violate {mapping.value}: {bad}")


@dataclass(frozen=True)
class CellStats:
    msg2_success: int
    msg3_success: int
    msg3_given_msg2: int     # msg3 successes among trials whose msg2 was decoded
    trials: int

    def success(self, message: int) -> int:
        return self.msg2_success if message == 2 else self.msg3_success

    def probability(self, message: int) -> float:
        return self.success(message) / self.trials


@dataclass(frozen=True)
class SweepResult:
    site: str
    message: int
    cells: dict          # (S, L) -> CellStats, lexicographic key order

    def probability(self, start: int, length: int) -> float:
        return self.cells[(start, length)].probability(self.message)


def cell_scenario(spec: SweepSpec, sliv: Sliv) -> RachScenario:
    # one RA cycle per trial: each trial is one field iteration
    field_name = "msg2_sliv" if spec.message == 2 else "msg3_sliv"
    rach = replace(spec.base.rach, **{field_name: sliv}, max_attempts=1)
    return replace(spec.base, rach=rach)


def run_cell(spec: SweepSpec, sliv: Sliv) -> tuple[tuple[int, int], CellStats]:
    scenario = cell_scenario(spec, sliv)
    m2 = m3 = m3c = 0
    for t in range(scenario.trials):
        out = run_trial(scenario, spec.site, t)
        a, b = out.msg2_decoded(), out.msg3_decoded()
        m2 += a
        m3 += b
        m3c += a and b
    return (sliv.start, sliv.length), CellStats(m2, m3, m3c, scenario.trials)


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(spec: SweepSpec, workers: Optional[int] = None) -> SweepResult:
    workers = spec.base.workers if workers is None else workers
    jobs = [(spec, s) for s in spec.grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(_run_cell_args, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        pairs = [run_cell(*j) for j in jobs]
    cells = dict(sorted(pairs))
    return SweepResult(spec.base.sites[spec.site].name, spec.message, cells)


# --- contention -----------------------------------------------------------------

@dataclass(frozen=True)
class ContentionResult:
    trials: int
    collisions: int                    # trials with at least one shared preamble in cycle 1
    all_distinct: int
    winners_per_collision: tuple[int, ...]   # connected-in-cycle-1 count for each collided preamble

    @property
    def collision_rate(self) -> float:
        return self.collisions / self.trials

    @property
    def all_distinct_rate(self) -> float:
        return self.all_distinct / self.trials


def contention_experiment(scenario: RachScenario, site: int = 0,
                          trials: Optional[int] = None) -> ContentionResult:
    if scenario.ue_count_per_site < 2:
        raise ValueError("contention needs at least two UEs")
    trials = scenario.trials if trials is None else trials
    collisions = distinct = 0
    winners = []
    for t in range(trials):
        out = run_trial(scenario, site, t)
        groups: dict[int, list[int]] = {}
        for u in range(scenario.ue_count_per_site):
            groups.setdefault(out.preamble(u, 1), []).append(u)
        shared = [g for g in groups.values() if len(g) > 1]
        if shared:
            collisions += 1
        if len(groups) == scenario.ue_count_per_site:
            distinct += 1
        for g in shared:
            winners.append(sum(1 for u in g
                               if out.ues[u].connected and out.ues[u].cycles_used == 1))
    return ContentionResult(trials, collisions, distinct, tuple(winners))


def _run_block(args):
    scenario, site, lo, hi = args
    return [run_trial(scenario, site, t) for t in range(lo, hi)]


def run_many(scenario: RachScenario, site: int = 0, trials: Optional[int] = None,
             workers: Optional[int] = None) -> list[TrialOutcome]:
    """Trials ``0..trials-1`` at one site, in trial order whatever ``workers`` is."""
    trials = scenario.trials if trials is None else trials
    workers = scenario.workers if workers is None else workers
    if workers <= 1 or trials < 2:
        return _run_block((scenario, site, 0, trials))
    step = max(1, -(-trials // (4 * workers)))
    blocks = [(scenario, site, lo, min(trials, lo + step)) for lo in range(0, trials, step)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [o for block in pool.map(_run_block, blocks) for o in block]

"""gNB scheduler and UE state machine for 4-step contention-based random access.

Both machines are pure transition functions over frozen state:
``ue_step(ue, event, ...) -> (ue', message | None)`` and
``gnb_step(gnb, event, ...) -> (gnb', messages)``.  Time inside the state is
kept as absolute slot numbers (``frame * slots_per_frame + slot``); messages
carry frame-relative :class:`~nrrach.timing.SlotIndex` values.

RA-RNTI and contention-resolution identities are abstracted to tag matching:
``preamble_tag`` links msg1 to msg2, ``ue_tag`` links msg3 to msg4.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, NamedTuple, Optional, Union

from .channel import Direction
from .sliv import MappingType, Sliv, validate_mapping
from .timing import (
    SYMBOLS_PER_SLOT,
    ConfigError,
    Msg3Placement,
    SlotIndex,
    SlotKind,
    TddConfig,
    classify_msg3_slot,
    msg3_slot,
)

TOTAL_PREAMBLES = 64


class IllegalTransition(RuntimeError):
    pass


class WindowExceeded(RuntimeError):
    pass


class SchedulerPolicy(enum.Enum):
    SPECIAL_SLOT = "special_slot"
    LAST_FULL_DOWNLINK_SLOT = "last_full_downlink_slot"


class MsgKind(enum.Enum):
    MSG1 = "Msg1Preamble"
    MSG2_DCI = "Msg2Dci"
    MSG2_RAR = "Msg2Rar"
    MSG3 = "Msg3"
    MSG4 = "Msg4"


_UPLINK_KINDS = (MsgKind.MSG1, MsgKind.MSG3)


class Phase(enum.Enum):
    IDLE = "Idle"
    AWAITING_RAR = "AwaitingRar"
    AWAITING_MSG3_TX = "AwaitingMsg3Tx"
    AWAITING_MSG4 = "AwaitingMsg4"
    CONNECTED = "Connected"
    FAILED = "Failed"


class FailureReason(enum.Enum):
    RAR_RECEPTION_FAILED = "RarReceptionFailed"
    CONTENTION_RESOLUTION_TIMEOUT = "ContentionResolutionTimeout"
    CONTENTION_LOST = "ContentionLost"
    HORIZON_EXCEEDED = "HorizonExceeded"


@dataclass(frozen=True)
class RachConfig:
    """RA parameters.  Defaults reproduce the stock OAI gNB configuration."""

    scheduler_policy: SchedulerPolicy = SchedulerPolicy.SPECIAL_SLOT
    k0: int = 0
    k2: int = 7
    msg2_sliv: Sliv = Sliv(1, 5)
    msg3_sliv: Sliv = Sliv(10, 4)
    msg4_sliv: Sliv = Sliv(1, 13)
    msg1_slot: int = 19
    total_preambles: int = TOTAL_PREAMBLES
    cbra_preambles: int = 60
    ra_response_window_slots: int = 20
    msg3_retx_window_frames: int = 3
    max_attempts: int = 10

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        out = []
        if self.total_preambles != TOTAL_PREAMBLES:
            out.append(f"rach.total_preambles must be {TOTAL_PREAMBLES}")
        if not 1 <= self.cbra_preambles <= self.total_preambles:
            out.append(f"rach.cbra_preambles={self.cbra_preambles} outside 1..{self.total_preambles}")
        if self.msg3_retx_window_frames < 1:
            out.append("rach.msg3_retx_window_frames must be >= 1")
        if self.ra_response_window_slots < 1:
            out.append("rach.ra_response_window_slots must be >= 1")
        if self.k0 < 0 or self.k2 < 0:
            out.append("rach.k0 and rach.k2 must be >= 0")
        if self.msg1_slot < 0:
            out.append("rach.msg1_slot must be >= 0")
        if self.max_attempts < 1:
            out.append("rach.max_attempts must be >= 1")
        for name, mapping in (("msg2_sliv", MappingType.TYPE_A_PDSCH),
                              ("msg3_sliv", MappingType.TYPE_B_PUSCH),
                              ("msg4_sliv", MappingType.TYPE_A_PDSCH)):
            why = validate_mapping(getattr(self, name), mapping)
            if why:
                out.append(f"rach.{name} violates {mapping.value}: {why}")
        return out


@dataclass(frozen=True)
class Msg3Grant:
    slot: SlotIndex
    sliv: Sliv
    placement: Msg3Placement
    preamble: int = 0


@dataclass(frozen=True)
class RaMessage:
    kind: MsgKind
    tx_slot: SlotIndex
    start: int
    length: int
    preamble_tag: Optional[int] = None
    ue_tag: Optional[int] = None
    grant: Optional[Msg3Grant] = None

    def __post_init__(self):
        if self.kind is MsgKind.MSG2_DCI and (self.start, self.length) != (0, 1):
            raise ValueError("DCI occupies exactly symbol 0 of its slot")
        if self.start < 0 or self.length < 1 or self.start + self.length > SYMBOLS_PER_SLOT:
            raise ValueError(f"bad symbol span ({self.start}, {self.length})")

    @property
    def direction(self) -> Direction:
        return Direction.UPLINK if self.kind in _UPLINK_KINDS else Direction.DOWNLINK

    @property
    def end_symbol(self) -> int:
        return self.start + self.length - 1


class Tick(NamedTuple):
    slot: int


class Delivery(NamedTuple):
    message: RaMessage
    slot: int


Event = Union[Tick, Delivery]


def _evolve(state, **changes):
    """``dataclasses.replace`` without re-running ``__init__`` (hot path)."""
    new = object.__new__(type(state))
    d = state.__dict__.copy()
    d.update(changes)
    object.__setattr__(new, "__dict__", d)
    return new


def select_preamble(rng, config: RachConfig) -> int:
    """Uniform draw over the contention-based part of the preamble pool."""
    return int(rng.integers(config.cbra_preambles))


def _next_with_index(after: int, index: int, period: int) -> int:
    """Smallest absolute slot > ``after`` whose position in the period is ``index``."""
    first = after + 1
    return first + (index - first) % period


def msg2_placement(config: RachConfig, tdd: TddConfig) -> tuple[int, Sliv]:
    specials = tdd.indices_of(SlotKind.SPECIAL)
    if config.scheduler_policy is SchedulerPolicy.SPECIAL_SLOT and specials:
        # DCI takes the first DL symbol, the RAR the rest of the DL part
        return specials[0], Sliv(1, tdd.special_dl_symbols - 1)
    downs = tdd.indices_of(SlotKind.FULL_DOWNLINK)
    if not downs:
        raise WindowExceeded("pattern has no downlink slot for msg2")
    return downs[-1], config.msg2_sliv


def schedule_msg2(config: RachConfig, tdd: TddConfig, msg1_rx_slot: SlotIndex,
                  preamble: int) -> tuple[RaMessage, RaMessage]:
    """Place the msg2 DCI and RAR answering a preamble received in ``msg1_rx_slot``."""
    spf = tdd.slots_per_frame
    rx = msg1_rx_slot.absolute(spf)
    index, sliv = msg2_placement(config, tdd)
    dci_abs = _next_with_index(rx, index, tdd.period_slots)
    rar_abs = dci_abs + config.k0
    if rar_abs - rx > config.ra_response_window_slots:
        raise WindowExceeded(
            f"msg2 slot {SlotIndex.from_absolute(rar_abs, spf)} outside the "
            f"{config.ra_response_window_slots}-slot RAR window")
    rar_slot = SlotIndex.from_absolute(rar_abs, spf)
    grant = schedule_msg3_grant(config, tdd, rar_slot, preamble)
    dci = RaMessage(MsgKind.MSG2_DCI, SlotIndex.from_absolute(dci_abs, spf), 0, 1,
                    preamble_tag=preamble)
    rar = RaMessage(MsgKind.MSG2_RAR, rar_slot, sliv.start, sliv.length,
                    preamble_tag=preamble, grant=grant)
    return dci, rar


def schedule_msg3_grant(config: RachConfig, tdd: TddConfig, msg2_end_slot: SlotIndex,
                        preamble: int = 0) -> Msg3Grant:
    """The msg3 grant carried by a RAR; the placement diagnostic travels with it."""
    slot = msg3_slot(msg2_end_slot, config.k2, tdd.numerology.mu)
    return Msg3Grant(slot, config.msg3_sliv, classify_msg3_slot(tdd, slot), preamble)


def next_msg1_occasion(config: RachConfig, tdd: TddConfig, after: int) -> int:
    return _next_with_index(after, config.msg1_slot, tdd.slots_per_frame)


# --- UE ----------------------------------------------------------------------

@dataclass(frozen=True)
class UeState:
    ue_tag: int
    phase: Phase = Phase.IDLE
    chosen_preamble: Optional[int] = None
    attempt_count: int = 0
    next_msg1: Optional[int] = None
    rar_deadline: Optional[int] = None
    dci_seen: bool = False
    grant: Optional[Msg3Grant] = None
    msg3_next_tx: Optional[int] = None
    retx_deadline: Optional[int] = None
    cr_deadline: Optional[int] = None
    failure: Optional[FailureReason] = None

    @property
    def terminal(self) -> bool:
        return self.phase is Phase.CONNECTED or (self.phase is Phase.FAILED and self.next_msg1 is None)

    def next_wakeup(self) -> Optional[int]:
        """Absolute slot of the next timer this UE needs a tick for."""
        p = self.phase
        if p is Phase.IDLE or p is Phase.FAILED:
            return self.next_msg1
        if p is Phase.AWAITING_RAR:
            return self.rar_deadline + 1
        if p is Phase.AWAITING_MSG3_TX:
            return self.msg3_next_tx
        if p is Phase.AWAITING_MSG4:
            expiry = self.cr_deadline + 1
            return expiry if self.msg3_next_tx is None else min(expiry, self.msg3_next_tx)
        return None


def initial_ue(ue_tag: int, config: RachConfig) -> UeState:
    return UeState(ue_tag, next_msg1=config.msg1_slot)


def _fail(ue: UeState, reason: FailureReason, now: int, config: RachConfig, tdd: TddConfig) -> UeState:
    # no backoff: retry at the next PRACH occasion while attempts remain
    retry = None
    if ue.attempt_count < config.max_attempts:
        retry = next_msg1_occasion(config, tdd, now)
    return _evolve(ue, phase=Phase.FAILED, failure=reason, next_msg1=retry, dci_seen=False,
                   grant=None, msg3_next_tx=None, retx_deadline=None, cr_deadline=None,
                   rar_deadline=None)


def _msg3(ue: UeState, at: int, spf: int) -> RaMessage:
    g = ue.grant
    return RaMessage(MsgKind.MSG3, SlotIndex.from_absolute(at, spf), g.sliv.start, g.sliv.length,
                     preamble_tag=ue.chosen_preamble, ue_tag=ue.ue_tag, grant=g)


def ue_step(ue: UeState, event: Event, config: RachConfig, tdd: TddConfig,
            rng=None) -> tuple[UeState, Optional[RaMessage]]:
    spf = tdd.slots_per_frame
    if isinstance(event, Tick):
        now = event.slot
        phase = ue.phase
        if phase is Phase.IDLE or phase is Phase.FAILED:
            if ue.next_msg1 is None or now < ue.next_msg1:
                return ue, None
            at = ue.next_msg1
            preamble = select_preamble(rng, config)
            msg = RaMessage(MsgKind.MSG1, SlotIndex.from_absolute(at, spf), 0, SYMBOLS_PER_SLOT,
                            preamble_tag=preamble)
            return _evolve(ue, phase=Phase.AWAITING_RAR, chosen_preamble=preamble,
                           attempt_count=ue.attempt_count + 1, next_msg1=None,
                           rar_deadline=at + config.ra_response_window_slots,
                           failure=None), msg
        if phase is Phase.AWAITING_RAR:
            if now > ue.rar_deadline:
                return _fail(ue, FailureReason.RAR_RECEPTION_FAILED, now, config, tdd), None
            return ue, None
        if phase is Phase.AWAITING_MSG3_TX:
            if now < ue.msg3_next_tx:
                return ue, None
            at = ue.msg3_next_tx
            nxt = at + spf
            return _evolve(ue, phase=Phase.AWAITING_MSG4,
                           msg3_next_tx=nxt if nxt <= ue.retx_deadline else None), _msg3(ue, at, spf)
        if phase is Phase.AWAITING_MSG4:
            if now > ue.cr_deadline:
                return _fail(ue, FailureReason.CONTENTION_RESOLUTION_TIMEOUT, now, config, tdd), None
            if ue.msg3_next_tx is not None and now >= ue.msg3_next_tx:
                at = ue.msg3_next_tx
                nxt = at + spf
                return (_evolve(ue, msg3_next_tx=nxt if nxt <= ue.retx_deadline else None),
                        _msg3(ue, at, spf))
            return ue, None
        return ue, None

    msg = event.message
    if msg.kind in _UPLINK_KINDS:
        raise IllegalTransition(f"UE {ue.ue_tag} cannot receive uplink {msg.kind.value}")
    now = event.slot
    phase = ue.phase
    if msg.kind is MsgKind.MSG2_DCI:
        if (phase is Phase.AWAITING_RAR and msg.preamble_tag == ue.chosen_preamble
                and now <= ue.rar_deadline):
            return _evolve(ue, dci_seen=True), None
        return ue, None
    if msg.kind is MsgKind.MSG2_RAR:
        if (phase is Phase.AWAITING_RAR and ue.dci_seen and msg.preamble_tag == ue.chosen_preamble
                and now <= ue.rar_deadline):
            g = msg.grant
            first = g.slot.absolute(spf)
            window = config.msg3_retx_window_frames * spf
            return _evolve(ue, phase=Phase.AWAITING_MSG3_TX, grant=g, msg3_next_tx=first,
                           retx_deadline=first + window - spf, cr_deadline=first + window,
                           rar_deadline=None), None
        return ue, None
    # Msg4
    if phase is Phase.AWAITING_MSG4 and msg.grant == ue.grant:
        if msg.ue_tag == ue.ue_tag:
            return _evolve(ue, phase=Phase.CONNECTED, msg3_next_tx=None, next_msg1=None), None
        return _fail(ue, FailureReason.CONTENTION_LOST, now, config, tdd), None
    return ue, None


# --- gNB ---------------------------------------------------------------------

@dataclass(frozen=True)
class GrantRecord:
    grant: Msg3Grant
    expires: int             # last absolute slot a msg3 (re)transmission may arrive
    winner: Optional[int] = None


_EMPTY: Mapping = MappingProxyType({})


@dataclass(frozen=True)
class GnbState:
    pending_rars: Mapping[int, int] = field(default=_EMPTY)       # preamble -> RAR window end
    expected_msg3: Mapping[Msg3Grant, GrantRecord] = field(default=_EMPTY)
    resolved: frozenset = frozenset()


def _next_downlink(tdd: TddConfig, after: int) -> Optional[int]:
    downs = tdd.indices_of(SlotKind.FULL_DOWNLINK)
    if not downs:
        return None
    return min(_next_with_index(after, i, tdd.period_slots) for i in downs)


def gnb_step(gnb: GnbState, event: Event, config: RachConfig,
             tdd: TddConfig) -> tuple[GnbState, tuple[RaMessage, ...]]:
    spf = tdd.slots_per_frame
    if isinstance(event, Tick):
        now = event.slot
        pending = {p: end for p, end in gnb.pending_rars.items() if end >= now}
        expected = {g: r for g, r in gnb.expected_msg3.items() if r.expires >= now}
        if len(pending) == len(gnb.pending_rars) and len(expected) == len(gnb.expected_msg3):
            return gnb, ()
        return _evolve(gnb, pending_rars=pending, expected_msg3=expected), ()

    msg, now = event.message, event.slot
    if msg.kind is MsgKind.MSG1:
        p = msg.preamble_tag
        end = gnb.pending_rars.get(p)
        if end is not None and end >= now:
            # same preamble already answered in this window (contention or duplicate)
            return gnb, ()
        try:
            dci, rar = schedule_msg2(config, tdd, SlotIndex.from_absolute(now, spf), p)
        except WindowExceeded:
            return gnb, ()
        grant = rar.grant
        record = GrantRecord(grant, grant.slot.absolute(spf) + (config.msg3_retx_window_frames - 1) * spf)
        return _evolve(
            gnb,
            pending_rars={**gnb.pending_rars, p: now + config.ra_response_window_slots},
            expected_msg3={**gnb.expected_msg3, grant: record},
        ), (dci, rar)

    if msg.kind is MsgKind.MSG3:
        record = gnb.expected_msg3.get(msg.grant)
        if record is None:
            raise IllegalTransition(f"msg3 for unknown or expired grant at slot {now}")
        if record.winner is not None:
            return gnb, ()
        slot = _next_downlink(tdd, now)
        if slot is None:
            return gnb, ()
        expected = {**gnb.expected_msg3, msg.grant: _evolve(record, winner=msg.ue_tag)}
        msg4 = RaMessage(MsgKind.MSG4, SlotIndex.from_absolute(slot, spf),
                         config.msg4_sliv.start, config.msg4_sliv.length,
                         preamble_tag=msg.preamble_tag, ue_tag=msg.ue_tag, grant=msg.grant)
        return _evolve(gnb, expected_msg3=expected, resolved=gnb.resolved | {msg.ue_tag}), (msg4,)

    raise IllegalTransition(f"gNB cannot receive downlink {msg.kind.value}")

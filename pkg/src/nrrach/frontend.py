"""GPIO-driven PA/LNA switching of the SDR RF frontend.

A :class:`FrontendTimeline` holds one row of 14 states per slot of the TDD
period.  States are single characters so a timeline dumps directly to the
``T``/``R``/``G`` text format::

    TTTTTTTTTTTTTT
    ...
    TTTTTTGGGGRRRR
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .timing import SYMBOLS_PER_SLOT, SlotKind, TddConfig


class AmpState(enum.Enum):
    TX_AMPLIFIED = "T"
    RX_AMPLIFIED = "R"
    GUARD = "G"


class SwitchingPolicy(enum.Enum):
    # whole special slot driven low, as observed on the stock gNB
    SLOT_GRANULAR = "slot_granular"
    # control signal follows the special slot's DL/guard/UL split
    SYMBOL_GRANULAR = "symbol_granular"


_TX, _RX, _GUARD = "T", "R", "G"
_MIRROR = str.maketrans({_TX: _RX, _RX: _TX})


@dataclass(frozen=True)
class FrontendTimeline:
    rows: tuple[str, ...]

    def __post_init__(self):
        for row in self.rows:
            if len(row) != SYMBOLS_PER_SLOT or set(row) - {_TX, _RX, _GUARD}:
                raise ValueError(f"bad timeline row {row!r}")

    @property
    def period_slots(self) -> int:
        return len(self.rows)

    def row(self, slot: int) -> str:
        # slot may be frame-relative or absolute; the period divides both
        return self.rows[slot % len(self.rows)]

    def state(self, slot: int, symbol: int) -> AmpState:
        return AmpState(self.row(slot)[symbol])

    def span(self, slot: int, start: int, length: int) -> str:
        return self.row(slot)[start:start + length]

    def mirrored(self) -> "FrontendTimeline":
        """The far-end (UE) view: receive while the gNB transmits and vice versa."""
        return FrontendTimeline(tuple(r.translate(_MIRROR) for r in self.rows))

    def dump(self) -> str:
        return "".join(r + "\n" for r in self.rows)


def build_timeline(config: TddConfig, policy: SwitchingPolicy,
                   settling_symbols: int = 0) -> FrontendTimeline:
    """Per-symbol amplifier state over one period of ``config``.

    ``settling_symbols`` turns the first symbols after every TX/RX direction
    change into guard (unamplified) symbols.
    """
    if settling_symbols < 0:
        raise ValueError("settling_symbols must be >= 0")
    rows = []
    for kind in config.pattern:
        if kind is SlotKind.FULL_DOWNLINK:
            rows.append(_TX * SYMBOLS_PER_SLOT)
        elif kind is SlotKind.FULL_UPLINK or policy is SwitchingPolicy.SLOT_GRANULAR:
            rows.append(_RX * SYMBOLS_PER_SLOT)
        else:
            rows.append(_TX * config.special_dl_symbols
                        + _GUARD * config.guard_symbols
                        + _RX * config.special_ul_symbols)
    if settling_symbols:
        rows = _apply_settling(rows, settling_symbols)
    return FrontendTimeline(tuple(rows))


def _apply_settling(rows: list[str], settling: int) -> list[str]:
    flat = list("".join(rows))
    n = len(flat)
    orig = flat[:]
    for i in range(n):
        cur, prev = orig[i], orig[i - 1]
        if cur != _GUARD and cur != prev:
            j = i
            while j < i + settling and orig[j % n] == cur:
                flat[j % n] = _GUARD
                j += 1
    text = "".join(flat)
    return [text[k:k + SYMBOLS_PER_SLOT] for k in range(0, n, SYMBOLS_PER_SLOT)]


def is_transmittable(timeline: FrontendTimeline, slot: int, symbol: int) -> bool:
    return timeline.row(slot)[symbol] == _TX


def is_receivable(timeline: FrontendTimeline, slot: int, symbol: int) -> bool:
    return timeline.row(slot)[symbol] == _RX

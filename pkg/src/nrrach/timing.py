"""TDD frame, slot and symbol arithmetic.

Slots are addressed frame-relative (``SlotIndex(frame, slot)``) everywhere a
value leaves this module; internally the simulator also uses the absolute slot
count ``frame * slots_per_frame + slot``.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

SYMBOLS_PER_SLOT = 14
FRAME_US = 10_000
SUBFRAME_US = 1_000

# Extra PUSCH delay for RAR-granted transmissions, indexed by numerology.
_MSG3_DELTA = {0: 2, 1: 3, 2: 4, 3: 6}

_PATTERN_RE = re.compile(r"^D*S?U*$")


class ConfigError(ValueError):
    """A configuration violates one or more invariants.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UnsupportedNumerology(ValueError):
    pass


class PatternDoesNotTile(ValueError):
    pass


class SlotKind(enum.Enum):
    FULL_DOWNLINK = "D"
    SPECIAL = "S"
    FULL_UPLINK = "U"


class Msg3Placement(enum.Enum):
    OK = "Ok"
    DOWNLINK_COLLISION = "DownlinkCollision"
    SPECIAL_SLOT_LANDING = "SpecialSlotLanding"


@dataclass(frozen=True)
class Numerology:
    mu: int

    def __post_init__(self):
        if isinstance(self.mu, bool) or self.mu not in _MSG3_DELTA:
            raise UnsupportedNumerology(f"numerology mu={self.mu!r} not in 0..3")

    @property
    def scs_khz(self) -> int:
        return 15 << self.mu

    @property
    def slots_per_subframe(self) -> int:
        return 1 << self.mu

    @property
    def slots_per_frame(self) -> int:
        return 10 << self.mu

    @property
    def slot_duration_us(self) -> int:
        # exact for mu <= 3 (1000 / 8 = 125)
        return SUBFRAME_US >> self.mu


class SlotIndex(NamedTuple):
    """Frame-relative slot address; orders by (frame, slot)."""

    frame: int
    slot: int

    def absolute(self, slots_per_frame: int) -> int:
        return self.frame * slots_per_frame + self.slot

    @classmethod
    def from_absolute(cls, n: int, slots_per_frame: int) -> "SlotIndex":
        if n < 0:
            raise ValueError(f"negative slot {n}")
        return cls(*divmod(n, slots_per_frame))

    def __str__(self):
        return f"{self.frame}.{self.slot}"


def periodicity_to_us(value) -> int:
    """Convert a periodicity in ms (``5``, ``2.5``, ``"ms2p5"``, ``"ms0.625"``) to µs."""
    if isinstance(value, str):
        text = value.strip().lower()
        if text.startswith("ms"):
            text = text[2:]
        text = text.replace("p", ".")
    else:
        text = str(value)
    try:
        us = Fraction(text) * 1000
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"unparseable periodicity {value!r}") from None
    if us.denominator != 1 or us <= 0:
        raise ValueError(f"periodicity {value!r} is not a positive whole number of µs")
    return int(us)


@dataclass(frozen=True)
class TddConfig:
    """One TDD UL/DL pattern period.

    The guard period of the special slot is derived, never stored:
    ``guard_symbols = 14 - special_dl_symbols - special_ul_symbols``.
    """

    pattern: tuple[SlotKind, ...]
    periodicity_us: int
    numerology: Numerology
    special_dl_symbols: int
    special_ul_symbols: int
    symbols_per_slot: int = SYMBOLS_PER_SLOT

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_pattern(cls, pattern: str, periodicity_ms, mu: int,
                     special_dl_symbols: int, special_ul_symbols: int,
                     symbols_per_slot: int = SYMBOLS_PER_SLOT) -> "TddConfig":
        try:
            kinds = tuple(SlotKind(ch) for ch in pattern.upper())
        except ValueError:
            raise ConfigError([f"pattern {pattern!r} may only contain D, S and U"]) from None
        return cls(kinds, periodicity_to_us(periodicity_ms), Numerology(mu),
                   special_dl_symbols, special_ul_symbols, symbols_per_slot)

    def problems(self) -> list[str]:
        out = []
        if self.symbols_per_slot != SYMBOLS_PER_SLOT:
            out.append(f"symbols_per_slot must be 14 (normal cyclic prefix), got {self.symbols_per_slot}")
        if not self.pattern:
            out.append("pattern is empty")
        text = self.pattern_string
        if not _PATTERN_RE.match(text):
            out.append(f"pattern {text!r} must be D* S? U* (at most one S, D before S, U after)")
        expected = len(self.pattern) * self.numerology.slot_duration_us
        if expected != self.periodicity_us:
            out.append(
                f"pattern of {len(self.pattern)} slots at {self.numerology.slot_duration_us} us/slot "
                f"spans {expected} us, periodicity is {self.periodicity_us} us")
        for name in ("special_dl_symbols", "special_ul_symbols"):
            v = getattr(self, name)
            if not 0 <= v <= SYMBOLS_PER_SLOT:
                out.append(f"{name}={v} outside 0..14")
        if self.special_dl_symbols + self.special_ul_symbols > SYMBOLS_PER_SLOT:
            out.append(
                f"special slot DL+UL symbols {self.special_dl_symbols}+{self.special_ul_symbols} exceed 14")
        return out

    @property
    def pattern_string(self) -> str:
        return "".join(k.value for k in self.pattern)

    @property
    def guard_symbols(self) -> int:
        return SYMBOLS_PER_SLOT - self.special_dl_symbols - self.special_ul_symbols

    @property
    def period_slots(self) -> int:
        return len(self.pattern)

    @property
    def slots_per_frame(self) -> int:
        return self.numerology.slots_per_frame

    def check_tiles(self) -> None:
        if FRAME_US % self.periodicity_us:
            raise PatternDoesNotTile(
                f"periodicity {self.periodicity_us} us does not divide the 10 ms frame")

    def kind_at(self, absolute_slot: int) -> SlotKind:
        """Slot kind for an absolute slot number (assumes the pattern tiles)."""
        return self.pattern[absolute_slot % len(self.pattern)]

    def indices_of(self, kind: SlotKind) -> list[int]:
        return [i for i, k in enumerate(self.pattern) if k is kind]


DEFAULT_TDD = TddConfig.from_pattern("DDDDDDDSUU", "ms5", 1, 6, 4)


def expand_pattern(config: TddConfig, frame_count: int) -> list[SlotKind]:
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    config.check_tiles()
    n = frame_count * config.slots_per_frame
    return [config.pattern[i % config.period_slots] for i in range(n)]


def slot_kind(config: TddConfig, slot: SlotIndex) -> SlotKind:
    config.check_tiles()
    return config.kind_at(slot.absolute(config.slots_per_frame))


def delta_for(mu: int) -> int:
    try:
        return _MSG3_DELTA[mu]
    except (KeyError, TypeError):
        raise UnsupportedNumerology(f"no msg3 delay defined for mu={mu!r}") from None


def msg3_slot(msg2_end_slot: SlotIndex, k2: int, mu: int) -> SlotIndex:
    """Slot ``n + k2 + delta(mu)`` for a RAR ending in slot ``n``, with frame carry."""
    if k2 < 0:
        raise ValueError("k2 must be non-negative")
    spf = Numerology(mu).slots_per_frame
    n1 = msg2_end_slot.absolute(spf) + k2 + delta_for(mu)
    return SlotIndex.from_absolute(n1, spf)


def classify_msg3_slot(config: TddConfig, slot: SlotIndex) -> Msg3Placement:
    kind = slot_kind(config, slot)
    if kind is SlotKind.FULL_UPLINK:
        return Msg3Placement.OK
    if kind is SlotKind.FULL_DOWNLINK:
        return Msg3Placement.DOWNLINK_COLLISION
    return Msg3Placement.SPECIAL_SLOT_LANDING

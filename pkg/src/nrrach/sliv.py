"""Start and Length Indicator Values for PDSCH (msg2) and PUSCH (msg3)."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

SYMBOLS = 14
TYPE_A_MAX_START = 3
MSG3_MIN_LENGTH = 2


class InvalidSymbolRange(ValueError):
    pass


class UnknownSliv(ValueError):
    pass


class MappingType(enum.Enum):
    TYPE_A_PDSCH = "typeA_pdsch"
    TYPE_B_PUSCH = "typeB_pusch"


def _check_range(start: int, length: int) -> None:
    if not (0 <= start <= SYMBOLS - 1 and 1 <= length <= SYMBOLS and start + length <= SYMBOLS):
        raise InvalidSymbolRange(f"(S={start}, L={length}) is not a valid allocation in a 14-symbol slot")


def _encode(start: int, length: int) -> int:
    if length - 1 <= 7:
        return SYMBOLS * (length - 1) + start
    return SYMBOLS * (SYMBOLS - length + 1) + (SYMBOLS - 1 - start)


@dataclass(frozen=True, order=True)
class Sliv:
    start: int
    length: int
    encoded: int = field(init=False, compare=False)

    def __post_init__(self):
        _check_range(self.start, self.length)
        object.__setattr__(self, "encoded", _encode(self.start, self.length))

    @property
    def end(self) -> int:
        """Last occupied symbol (inclusive)."""
        return self.start + self.length - 1

    @classmethod
    def from_encoded(cls, value: int) -> "Sliv":
        return cls(*decode_sliv(value))


def encode_sliv(start: int, length: int) -> Sliv:
    return Sliv(start, length)


_DECODE_TABLE = {
    _encode(s, l): (s, l)
    for l in range(1, SYMBOLS + 1)
    for s in range(0, SYMBOLS - l + 1)
}


def decode_sliv(encoded: int) -> tuple[int, int]:
    try:
        return _DECODE_TABLE[encoded]
    except (KeyError, TypeError):
        raise UnknownSliv(f"no valid (S, L) encodes to {encoded!r}") from None


def validate_mapping(sliv: Sliv, mapping: MappingType,
                     max_type_a_start: int = TYPE_A_MAX_START) -> str | None:
    """Return ``None`` if the allocation is legal for ``mapping``, else the broken rule."""
    if mapping is MappingType.TYPE_A_PDSCH:
        if sliv.start > max_type_a_start:
            return f"start>{max_type_a_start}"
    elif mapping is MappingType.TYPE_B_PUSCH:
        if sliv.length < MSG3_MIN_LENGTH:
            return f"length<{MSG3_MIN_LENGTH}"
    else:
        raise ValueError(f"unknown mapping {mapping!r}")
    return None


def enumerate_valid(mapping: MappingType, max_type_a_start: int = TYPE_A_MAX_START) -> list[Sliv]:
    out = []
    for s in range(SYMBOLS):
        for l in range(1, SYMBOLS - s + 1):
            sliv = Sliv(s, l)
            if validate_mapping(sliv, mapping, max_type_a_start) is None:
                out.append(sliv)
    return out

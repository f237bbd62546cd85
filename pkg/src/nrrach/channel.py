"""Phenomenological link model for RA message decoding.

Each message of ``L`` symbols sees a mean SNR set by log-distance path loss
and obstruction.  The per-symbol fading of a message is treated as fully
correlated over the slot (static field UEs, slot far shorter than the channel
coherence time), so averaging the ``L`` per-symbol draws leaves a single
log-normal term.  Longer allocations add a coding-redundancy gain of
``redundancy_gain_db_per_symbol * log2(L)``.  Close to the gNB, short uplink
allocations lose a receiver-saturation penalty.  A message decodes when

    mean_snr + gain * log2(L) - saturation(L) + sigma * Z >= threshold

so the decode probability is ``Phi((margin) / sigma)``, non-decreasing in
``L`` whenever saturation is off.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, NamedTuple, Sequence

from scipy.optimize import minimize_scalar

from .timing import SYMBOLS_PER_SLOT


class Direction(enum.Enum):
    DOWNLINK = "downlink"
    UPLINK = "uplink"


class DecodeReason(enum.Enum):
    DECODED = "Decoded"
    BELOW_THRESHOLD = "BelowThreshold"
    NOT_AMPLIFIED = "NotAmplified"
    GUARD_DROPPED = "GuardDropped"


class CalibrationDiverged(RuntimeError):
    def __init__(self, message, params=None, residuals=()):
        super().__init__(message)
        self.params = params
        self.residuals = list(residuals)


@dataclass(frozen=True)
class SiteProfile:
    name: str
    distance_m: float
    los: bool = True
    obstruction_db: float = 0.0
    saturation_factor: float = 0.0

    def __post_init__(self):
        problems = []
        if not self.distance_m > 0:
            problems.append(f"site {self.name}: distance_m must be > 0")
        if self.los and self.obstruction_db != 0:
            problems.append(f"site {self.name}: a LoS site cannot have obstruction_db")
        if self.obstruction_db < 0:
            problems.append(f"site {self.name}: obstruction_db must be >= 0")
        if self.saturation_factor < 0:
            problems.append(f"site {self.name}: saturation_factor must be >= 0")
        if problems:
            from .timing import ConfigError
            raise ConfigError(problems)


@dataclass(frozen=True)
class ChannelParams:
    base_snr_db: float = 30.0
    reference_distance_m: float = 100.0
    pathloss_exponent: float = 3.0
    uplink_offset_db: float = -3.0
    fading_sigma_db: float = 4.0
    decode_threshold_db: float = 5.0
    redundancy_gain_db_per_symbol: float = 2.0
    saturation_penalty_db: float = 0.0
    near_field_radius_m: float = 1000.0
    saturation_length_exponent: float = 2.0
    shadowing_sigma_db: float = 0.0

    def __post_init__(self):
        problems = []
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                problems.append(f"channel.{f.name} must be finite")
        if self.redundancy_gain_db_per_symbol < 0:
            problems.append("channel.redundancy_gain_db_per_symbol must be >= 0")
        for name in ("fading_sigma_db", "saturation_penalty_db", "near_field_radius_m",
                     "saturation_length_exponent", "shadowing_sigma_db"):
            if getattr(self, name) < 0:
                problems.append(f"channel.{name} must be >= 0")
        if self.reference_distance_m <= 0:
            problems.append("channel.reference_distance_m must be > 0")
        if problems:
            from .timing import ConfigError
            raise ConfigError(problems)

    @classmethod
    def perfect(cls) -> "ChannelParams":
        """Every amplified message decodes."""
        return cls(base_snr_db=200.0, fading_sigma_db=0.0, decode_threshold_db=0.0,
                   saturation_penalty_db=0.0)

    def mean_snr_db(self, site: SiteProfile, direction: Direction) -> float:
        snr = (self.base_snr_db
               - 10.0 * self.pathloss_exponent * math.log10(site.distance_m / self.reference_distance_m)
               - site.obstruction_db)
        if direction is Direction.UPLINK:
            snr += self.uplink_offset_db
        return snr

    def saturation_db(self, site: SiteProfile, length: int, direction: Direction) -> float:
        # only the gNB receive chain saturates
        if direction is not Direction.UPLINK or not site.saturation_factor or not self.saturation_penalty_db:
            return 0.0
        proximity = max(0.0, 1.0 - site.distance_m / self.near_field_radius_m) if self.near_field_radius_m else 0.0
        shortness = max(0.0, (SYMBOLS_PER_SLOT - length) / (SYMBOLS_PER_SLOT - 2))
        return (self.saturation_penalty_db * site.saturation_factor * proximity
                * shortness ** self.saturation_length_exponent)

    def margin_db(self, site: SiteProfile, length: int, direction: Direction,
                  shadowing_db: float = 0.0) -> float:
        """Expected effective SNR minus the decode threshold."""
        return (self.mean_snr_db(site, direction) + shadowing_db
                + self.redundancy_gain_db_per_symbol * math.log2(length)
                - self.saturation_db(site, length, direction)
                - self.decode_threshold_db)


class DecodeVerdict(NamedTuple):
    delivered: bool         # true exactly when reason is DECODED
    effective_snr_db: float
    reason: DecodeReason


def _phi(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def decode_probability(params: ChannelParams, site: SiteProfile, length: int,
                       direction: Direction, shadowing_db: float = 0.0) -> float:
    if length < 1:
        raise ValueError("length must be >= 1")
    margin = params.margin_db(site, length, direction, shadowing_db)
    if params.fading_sigma_db == 0:
        return 1.0 if margin >= 0 else 0.0
    return _phi(margin / params.fading_sigma_db)


def window_probability(p: float, attempts: int) -> float:
    """Probability that at least one of ``attempts`` independent transmissions decodes."""
    return 1.0 - (1.0 - p) ** attempts


def sample_decode(rng, params: ChannelParams, site: SiteProfile, message, timeline,
                  shadowing_db: float = 0.0, stochastic: bool = True) -> DecodeVerdict:
    """Decide whether ``message`` reaches its receiver.

    ``timeline`` is the *sender's* frontend timeline.  The frontend check
    happens before any random draw, so frontend verdicts never depend on the
    channel.  With ``stochastic=False`` (preambles, PDCCH) an amplified
    message is decoded without consuming a draw.
    """
    span = timeline.span(message.tx_slot.slot, message.start, message.length)
    if "G" in span:
        return DecodeVerdict(False, -math.inf, DecodeReason.GUARD_DROPPED)
    if span.count("T") != len(span):
        return DecodeVerdict(False, -math.inf, DecodeReason.NOT_AMPLIFIED)
    direction = message.direction
    margin = params.margin_db(site, message.length, direction, shadowing_db)
    if stochastic and params.fading_sigma_db > 0:
        margin += params.fading_sigma_db * float(rng.standard_normal())
    snr = margin + params.decode_threshold_db
    if margin >= 0 or not stochastic:
        return DecodeVerdict(True, snr, DecodeReason.DECODED)
    return DecodeVerdict(False, snr, DecodeReason.BELOW_THRESHOLD)


# --- calibration -----------------------------------------------------------

@dataclass(frozen=True)
class CalibrationTarget:
    site: str
    msg_kind: str      # "msg2" or "msg3"
    length: int
    probability: float

    @property
    def direction(self) -> Direction:
        return Direction.DOWNLINK if self.msg_kind == "msg2" else Direction.UPLINK


@dataclass(frozen=True)
class CalibrationResult:
    params: ChannelParams
    residuals: tuple[tuple[CalibrationTarget, float, float], ...]   # (target, model p, error)
    sse: float

    @property
    def max_residual(self) -> float:
        return max((abs(e) for _, _, e in self.residuals), default=0.0)


FIT_PARAMETERS = ("decode_threshold_db", "fading_sigma_db",
                  "redundancy_gain_db_per_symbol", "saturation_penalty_db")

_BOUNDS = {
    "decode_threshold_db": (-40.0, 60.0),
    "fading_sigma_db": (0.05, 30.0),
    "redundancy_gain_db_per_symbol": (0.0, 20.0),
    "saturation_penalty_db": (0.0, 400.0),
}


def parse_targets(lines: Iterable[str]) -> list[CalibrationTarget]:
    """Parse ``site, msg_kind, length, probability`` lines (``#`` starts a comment)."""
    out = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 'site, msg_kind, length, probability'")
        site, kind, length, prob = parts
        kind = kind.lower()
        if kind not in ("msg2", "msg3"):
            raise ValueError(f"line {lineno}: msg_kind must be msg2 or msg3, got {kind!r}")
        try:
            length_i, prob_f = int(length), float(prob)
        except ValueError:
            raise ValueError(f"line {lineno}: bad number") from None
        if not 1 <= length_i <= SYMBOLS_PER_SLOT or not 0 <= prob_f <= 1:
            raise ValueError(f"line {lineno}: length or probability out of range")
        out.append(CalibrationTarget(site, kind, length_i, prob_f))
    return out


def model_probability(params: ChannelParams, site: SiteProfile, target: CalibrationTarget,
                      msg3_attempts: int = 1) -> float:
    p = decode_probability(params, site, target.length, target.direction)
    if target.msg_kind == "msg3":
        p = window_probability(p, msg3_attempts)
    return p


def calibrate(targets: Sequence[CalibrationTarget], sites: Sequence[SiteProfile],
              initial: ChannelParams | None = None, msg3_attempts: int = 1,
              max_residual: float = 0.1, sweeps: int = 60, tol: float = 1e-10,
              fit: Sequence[str] = FIT_PARAMETERS) -> CalibrationResult:
    """Fit channel parameters to decode-probability targets by coordinate descent.

    msg3 targets are matched against the probability of decoding within
    ``msg3_attempts`` transmissions (the retransmission window).  Parameters
    outside ``fit`` are held at their ``initial`` values.  Raises
    :class:`CalibrationDiverged` if any residual exceeds ``max_residual``.
    """
    if not targets:
        raise ValueError("no calibration targets")
    by_name = {s.name: s for s in sites}
    missing = sorted({t.site for t in targets} - by_name.keys())
    if missing:
        raise ValueError(f"targets name unknown sites: {', '.join(missing)}")
    params = initial or ChannelParams()

    def sse(p: ChannelParams) -> float:
        return sum((model_probability(p, by_name[t.site], t, msg3_attempts) - t.probability) ** 2
                   for t in targets)

    best = sse(params)
    for _ in range(sweeps):
        before = best
        for name in fit:
            lo, hi = _BOUNDS[name]
            line = lambda v: sse(replace(params, **{name: v}))  # noqa: E731
            # coarse scan first: probabilities saturate, so the slice has flat stretches
            step = (hi - lo) / 40
            grid = [lo + i * step for i in range(41)]
            i = min(range(41), key=lambda k: line(grid[k]))
            res = minimize_scalar(line, bounds=(max(lo, grid[i] - step), min(hi, grid[i] + step)),
                                  method="bounded", options={"xatol": 1e-6})
            if res.fun < best:
                params, best = replace(params, **{name: float(res.x)}), float(res.fun)
        if before - best <= tol:
            break

    residuals = []
    for t in targets:
        p = model_probability(params, by_name[t.site], t, msg3_attempts)
        residuals.append((t, p, p - t.probability))
    result = CalibrationResult(params, tuple(residuals), best)
    if result.max_residual > max_residual:
        raise CalibrationDiverged(
            f"calibration residual {result.max_residual:.3f} exceeds bound {max_residual}",
            params, residuals)
    return result

"""Scenario files: TOML documents that map onto :class:`~nrrach.sim.RachScenario`.

Layout::

    [tdd]       pattern, periodicity, numerology, special_dl_symbols, special_ul_symbols
    [rach]      RachConfig fields; SLIVs as [start, length] or an encoded integer
    [frontend]  policy, settling_symbols
    [sites.<name>]  distance_m, los, obstruction_db, saturation_factor
    [channel]   ChannelParams fields
    [sim]       ue_count_per_site, trials, seed, horizon_frames, workers
    [lint]      msg2_min_length, msg3_min_length
    [sweep]     message, site
    [output]    directory, trace_trials

Every section except ``[tdd]``/``[rach]``/``[sites]`` may be omitted.  Unknown
sections and keys are errors.  Loading collects every problem before raising.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .channel import ChannelParams, SiteProfile
from .frontend import SwitchingPolicy
from .rach import RachConfig, SchedulerPolicy
from .sim import RachScenario
from .sliv import InvalidSymbolRange, Sliv, UnknownSliv
from .timing import ConfigError, TddConfig, UnsupportedNumerology

DATA_DIR = Path(__file__).with_name("data")


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0, path: str = "<string>"):
        self.line, self.column, self.path = line, column, path
        super().__init__(f"{path}:{line}:{column}: {message}")


class ValidationError(ValueError):
    def __init__(self, problems, path: str = "<string>"):
        self.problems = list(problems)
        self.path = path
        super().__init__(f"{path}: " + "; ".join(self.problems))


@dataclass(frozen=True)
class LintFloors:
    msg2_min_length: int = 8
    msg3_min_length: int = 9


@dataclass(frozen=True)
class SweepDefaults:
    message: Optional[int] = None
    site: Optional[str] = None


@dataclass(frozen=True)
class OutputOptions:
    directory: Optional[str] = None
    trace_trials: int = 0


@dataclass(frozen=True)
class ScenarioDocument:
    """A loaded scenario plus the settings that only the tools consume."""

    scenario: RachScenario
    lint: LintFloors = field(default_factory=LintFloors)
    sweep: SweepDefaults = field(default_factory=SweepDefaults)
    output: OutputOptions = field(default_factory=OutputOptions)


_TDD_KEYS = {"pattern", "periodicity", "numerology", "special_dl_symbols", "special_ul_symbols",
             "symbols_per_slot"}
_RACH_KEYS = {f.name for f in dataclasses.fields(RachConfig)}
_SLIV_KEYS = {"msg2_sliv", "msg3_sliv", "msg4_sliv"}
_FRONTEND_KEYS = {"policy", "settling_symbols"}
_SITE_KEYS = {f.name for f in dataclasses.fields(SiteProfile)} - {"name"}
_CHANNEL_KEYS = {f.name for f in dataclasses.fields(ChannelParams)}
_SIM_KEYS = {"ue_count_per_site", "trials", "seed", "horizon_frames", "workers"}
_SECTIONS = {
    "tdd": _TDD_KEYS, "rach": _RACH_KEYS, "frontend": _FRONTEND_KEYS, "sites": None,
    "channel": _CHANNEL_KEYS, "sim": _SIM_KEYS,
    "lint": {f.name for f in dataclasses.fields(LintFloors)},
    "sweep": {f.name for f in dataclasses.fields(SweepDefaults)},
    "output": {f.name for f in dataclasses.fields(OutputOptions)},
}
_REQUIRED = ("tdd", "rach", "sites")


def parse_text(text: str, path: str = "<string>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", 0) or 0
        col = getattr(exc, "colno", 0) or 0
        msg = getattr(exc, "msg", str(exc))
        raise ParseError(msg, line, col, path) from None


def _enum(cls, value, where, problems):
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        problems.append(f"{where}={value!r} is not one of {allowed}")
        return None


def _sliv(value, where, problems):
    try:
        if isinstance(value, int) and not isinstance(value, bool):
            return Sliv.from_encoded(value)
        if isinstance(value, list) and len(value) == 2 and all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            return Sliv(*value)
    except (InvalidSymbolRange, UnknownSliv) as exc:
        problems.append(f"{where}: {exc}")
        return None
    problems.append(f"{where} must be [start, length] or an encoded SLIV integer")
    return None


def _check_types(section: str, table: dict, template, problems) -> dict:
    """Keep keys whose value type matches the dataclass default's type."""
    out = {}
    for key, value in table.items():
        default = getattr(template, key, None)
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = True
        if ok:
            out[key] = value
        else:
            problems.append(f"{section}.{key}={value!r} has the wrong type "
                            f"(expected {type(default).__name__})")
    return out


def _build(cls, kwargs, problems):
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        problems.extend(exc.problems)
    except (ValueError, TypeError) as exc:
        problems.append(str(exc))
    return None


def build_document(raw: dict, path: str = "<string>") -> ScenarioDocument:
    """Validate a parsed TOML mapping; raise :class:`ValidationError` listing every problem."""
    problems: list[str] = []
    for name in raw:
        if name not in _SECTIONS:
            problems.append(f"unknown section [{name}]")
        elif not isinstance(raw[name], dict):
            problems.append(f"[{name}] must be a table")
    for name in _REQUIRED:
        if name not in raw:
            problems.append(f"missing section [{name}]")
    sections = {k: v for k, v in raw.items() if k in _SECTIONS and isinstance(v, dict)}
    for name, allowed in _SECTIONS.items():
        if allowed is None or name not in sections:
            continue
        for key in sections[name]:
            if key not in allowed:
                problems.append(f"unknown key {name}.{key}")

    # [tdd]
    tdd = None
    t = sections.get("tdd", {})
    missing = sorted({"pattern", "periodicity", "numerology", "special_dl_symbols",
                      "special_ul_symbols"} - t.keys())
    if "tdd" in sections and missing:
        problems.append(f"[tdd] missing {', '.join(missing)}")
    elif "tdd" in sections:
        try:
            tdd = TddConfig.from_pattern(str(t["pattern"]), t["periodicity"], t["numerology"],
                                         t["special_dl_symbols"], t["special_ul_symbols"],
                                         t.get("symbols_per_slot", 14))
            tdd.check_tiles()
        except ConfigError as exc:
            problems.extend(f"tdd: {p}" for p in exc.problems)
            tdd = None
        except (UnsupportedNumerology, ValueError) as exc:
            problems.append(f"tdd: {exc}")
            tdd = None

    # [rach]
    r = {k: v for k, v in sections.get("rach", {}).items() if k in _RACH_KEYS}
    kwargs = _check_types("rach", {k: v for k, v in r.items()
                                   if k not in _SLIV_KEYS and k != "scheduler_policy"},
                          RachConfig(), problems)
    for key in _SLIV_KEYS & r.keys():
        s = _sliv(r[key], f"rach.{key}", problems)
        if s is not None:
            kwargs[key] = s
    if "scheduler_policy" in r:
        p = _enum(SchedulerPolicy, r["scheduler_policy"], "rach.scheduler_policy", problems)
        if p is not None:
            kwargs["scheduler_policy"] = p
    rach = _build(RachConfig, kwargs, problems) if "rach" in sections else None

    # [frontend]
    fe = sections.get("frontend", {})
    policy = SwitchingPolicy.SLOT_GRANULAR
    if "policy" in fe:
        policy = _enum(SwitchingPolicy, fe["policy"], "frontend.policy", problems)
    settling = fe.get("settling_symbols", 0)
    if isinstance(settling, bool) or not isinstance(settling, int):
        problems.append("frontend.settling_symbols must be an integer")
        settling = 0

    # [sites.*]
    sites = []
    for name, table in sections.get("sites", {}).items():
        if not isinstance(table, dict):
            problems.append(f"sites.{name} must be a table")
            continue
        unknown = sorted(table.keys() - _SITE_KEYS)
        problems.extend(f"unknown key sites.{name}.{k}" for k in unknown)
        if "distance_m" not in table:
            problems.append(f"sites.{name} missing distance_m")
            continue
        known = {k: v for k, v in table.items() if k in _SITE_KEYS}
        known = _check_types(f"sites.{name}", known, SiteProfile(name, 1.0), problems)
        site = _build(SiteProfile, {"name": name, **known}, problems)
        if site is not None:
            sites.append(site)
    if "sites" in sections and not sections["sites"]:
        problems.append("[sites] defines no site")

    channel = _build(ChannelParams, _check_types(
        "channel", {k: v for k, v in sections.get("channel", {}).items() if k in _CHANNEL_KEYS},
        ChannelParams(), problems), problems)
    sim = _check_types("sim", {k: v for k, v in sections.get("sim", {}).items() if k in _SIM_KEYS},
                       _SimDefaults, problems)
    for key, low in (("ue_count_per_site", 1), ("trials", 1), ("horizon_frames", 1), ("workers", 1)):
        if isinstance(sim.get(key), int) and sim[key] < low:
            problems.append(f"sim.{key} must be >= {low}")
    floors = _build(LintFloors, _check_types(
        "lint", sections.get("lint", {}), LintFloors(), problems), problems)
    sweep = _sweep_defaults(sections.get("sweep", {}), problems)
    output = _output_options(sections.get("output", {}), problems)

    scenario = None
    if not problems and None not in (tdd, rach, policy, channel):
        scenario = _build(RachScenario, dict(tdd=tdd, rach=rach, policy=policy,
                                             sites=tuple(sites), channel=channel,
                                             settling_symbols=settling, **sim), problems)
    if sweep.site is not None and scenario is not None and \
            sweep.site not in {s.name for s in scenario.sites}:
        problems.append(f"sweep.site={sweep.site!r} names no site")
    if problems or scenario is None:
        raise ValidationError(problems or ["scenario is incomplete"], path)
    return ScenarioDocument(scenario, floors, sweep, output)


class _SimDefaults:
    ue_count_per_site = 1
    trials = 1000
    seed = 0
    horizon_frames = 64
    workers = 1


def _sweep_defaults(table: dict, problems) -> SweepDefaults:
    message, site = table.get("message"), table.get("site")
    if message is not None and message not in (2, 3):
        problems.append(f"sweep.message={message!r} must be 2 or 3")
        message = None
    if site is not None and not isinstance(site, str):
        problems.append("sweep.site must be a site name")
        site = None
    return SweepDefaults(message, site)


def _output_options(table: dict, problems) -> OutputOptions:
    directory = table.get("directory")
    trace = table.get("trace_trials", 0)
    if directory is not None and not isinstance(directory, str):
        problems.append("output.directory must be a string")
        directory = None
    if isinstance(trace, bool) or not isinstance(trace, int) or trace < 0:
        problems.append("output.trace_trials must be a non-negative integer")
        trace = 0
    return OutputOptions(directory, trace)


def load_text(text: str, path: str = "<string>",
              overrides: Optional[dict] = None) -> ScenarioDocument:
    raw = parse_text(text, path)
    if overrides:
        raw = merge_overrides(raw, overrides)
    return build_document(raw, path)


def load_document(path, overrides: Optional[dict] = None) -> ScenarioDocument:
    p = Path(path)
    return load_text(p.read_text(encoding="utf-8"), str(p), overrides)


def load_scenario(path) -> RachScenario:
    return load_document(path).scenario


def bundled(name: str) -> Path:
    """Path of a scenario or targets file shipped with the package."""
    p = DATA_DIR / name
    if not p.exists():
        raise FileNotFoundError(f"no bundled file {name!r}")
    return p


# --- overrides -----------------------------------------------------------------

def parse_override(text: str) -> tuple[tuple[str, ...], Any]:
    """``section.key=value`` with ``value`` read as a TOML value (bare words become strings)."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form section.key=value")
    dotted, value = text.split("=", 1)
    keys = tuple(k.strip() for k in dotted.strip().split("."))
    if len(keys) < 2 or not all(keys):
        raise ValueError(f"override {text!r} needs a section and a key")
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return keys, parsed


def merge_overrides(raw: dict, overrides: dict) -> dict:
    """Return a copy of ``raw`` with ``{(section, ..., key): value}`` applied."""
    out = _deep_copy(raw)
    for keys, value in overrides.items():
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValueError(f"cannot override inside non-table {'.'.join(keys)}")
        node[keys[-1]] = value
    return out


def _deep_copy(d):
    return {k: _deep_copy(v) if isinstance(v, dict) else v for k, v in d.items()}


# --- echo ----------------------------------------------------------------------

def to_mapping(doc: ScenarioDocument) -> dict:
    """The effective scenario as plain TOML-ready data (round-trips through ``build_document``)."""
    sc = doc.scenario
    tdd = sc.tdd
    rach = {}
    for f in dataclasses.fields(RachConfig):
        v = getattr(sc.rach, f.name)
        if isinstance(v, Sliv):
            v = [v.start, v.length]
        elif isinstance(v, SchedulerPolicy):
            v = v.value
        rach[f.name] = v
    out = {
        "tdd": {
            "pattern": tdd.pattern_string,
            "periodicity": _periodicity_text(tdd.periodicity_us),
            "numerology": tdd.numerology.mu,
            "special_dl_symbols": tdd.special_dl_symbols,
            "special_ul_symbols": tdd.special_ul_symbols,
        },
        "rach": rach,
        "frontend": {"policy": sc.policy.value, "settling_symbols": sc.settling_symbols},
        "sites": {s.name: {"distance_m": s.distance_m, "los": s.los,
                           "obstruction_db": s.obstruction_db,
                           "saturation_factor": s.saturation_factor} for s in sc.sites},
        "channel": dataclasses.asdict(sc.channel),
        "sim": {k: getattr(sc, k) for k in sorted(_SIM_KEYS)},
        "lint": dataclasses.asdict(doc.lint),
    }
    sweep = {k: v for k, v in dataclasses.asdict(doc.sweep).items() if v is not None}
    if sweep:
        out["sweep"] = sweep
    output = {k: v for k, v in dataclasses.asdict(doc.output).items() if v is not None}
    out["output"] = output
    return out


def _periodicity_text(us: int) -> str:
    ms, rem = divmod(us, 1000)
    if not rem:
        return f"ms{ms}"
    frac = f"{rem / 1000:.3f}".rstrip("0")[2:]
    return f"ms{ms}p{frac}"


def dumps(doc: ScenarioDocument) -> str:
    return tomli_w.dumps(to_mapping(doc))


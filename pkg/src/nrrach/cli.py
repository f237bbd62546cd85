"""Command-line entry point: ``python -m nrrach {run,sweep,lint,calibrate} ...``.

Exit codes: 0 success, 1 lint found errors, 2 bad arguments or scenario,
3 calibration did not converge, 4 file system error.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import os
import sys
from pathlib import Path

from . import report
from .channel import CalibrationDiverged, calibrate, parse_targets
from .frontend import build_timeline
from .lint import lint
from .scenario import ParseError, ValidationError, dumps, load_document, parse_override
from .sim import SweepSpec, run_many, run_sweep, run_trial
from .sliv import MappingType, enumerate_valid

OUTPUT_ENV = "NRRACH_OUTPUT_DIR"
DEFAULT_OUTPUT = "nrrach-runs"

EXIT_OK, EXIT_LINT, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a scenario value (repeatable)")
    common.add_argument("--out", help="output root (file: output.directory, env: %s)" % OUTPUT_ENV)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--seed", type=int, help="sim.seed")
    sim.add_argument("--trials", type=int, help="sim.trials")
    sim.add_argument("--workers", type=int, help="sim.workers")

    p = argparse.ArgumentParser(prog="nrrach", description="5G NR random access simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common, sim], help="simulate every site")
    run.add_argument("scenario")
    run.add_argument("--trace", type=int, metavar="N", help="output.trace_trials: trace the first N trials")

    sw = sub.add_parser("sweep", parents=[common, sim], help="sweep msg2 or msg3 SLIVs")
    sw.add_argument("scenario")
    sw.add_argument("--msg", type=int, choices=(2, 3), help="sweep.message")
    sw.add_argument("--site", help="sweep.site (default: every site)")

    ln = sub.add_parser("lint", parents=[common], help="check scheduling against the frontend")
    ln.add_argument("scenario")
    ln.add_argument("--dump-timeline", action="store_true", help="print the gNB frontend timeline")

    cal = sub.add_parser("calibrate", parents=[common], help="fit channel parameters to targets")
    cal.add_argument("targets")
    cal.add_argument("scenario")
    return p


def _overrides(args) -> dict:
    out = {}
    for text in args.set:
        keys, value = parse_override(text)
        out[keys] = value
    flags = {("sim", "seed"): "seed", ("sim", "trials"): "trials", ("sim", "workers"): "workers",
             ("sweep", "message"): "msg", ("sweep", "site"): "site",
             ("output", "directory"): "out", ("output", "trace_trials"): "trace"}
    for keys, attr in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[keys] = value
    return out


def _run_dir(root: str, command: str, echo: str) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    digest = hashlib.sha256(echo.encode()).hexdigest()[:8]
    base = Path(root) / f"{command}-{stamp}-{digest}"
    path, n = base, 1
    while path.exists():
        n += 1
        path = base.with_name(f"{base.name}-{n}")
    path.mkdir(parents=True)
    return path


def _prepare(doc, command: str) -> Path:
    root = doc.output.directory or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT
    echo = dumps(doc)
    path = _run_dir(root, command, echo)
    (path / "scenario.toml").write_text(echo, encoding="utf-8")
    return path


def _cmd_run(doc, out) -> int:
    sc = doc.scenario
    rows = [("site", "final", "count")]
    outcomes = []
    for i, site in enumerate(sc.sites):
        results = run_many(sc, i)
        outcomes.extend(results)
        rows.extend(report.summary_rows(site.name, results))
        for t in range(min(doc.output.trace_trials, sc.trials)):
            lines: list[str] = []
            run_trial(sc, i, t, trace=lines)
            tdir = out / "traces"
            tdir.mkdir(exist_ok=True)
            (tdir / f"{site.name}-{t:05d}.trace").write_text("".join(l + "\n" for l in lines),
                                                             encoding="utf-8")
    (out / "outcomes.csv").write_text(report.outcomes_csv(outcomes), encoding="utf-8")
    summary = report.to_csv(rows)
    (out / "summary.csv").write_text(summary, encoding="utf-8")
    sys.stdout.write(summary)
    return EXIT_OK


def _cmd_sweep(doc, out) -> int:
    sc = doc.scenario
    message = doc.sweep.message
    if message is None:
        print("sweep: choose a message with --msg or [sweep] message", file=sys.stderr)
        return EXIT_USAGE
    mapping = MappingType.TYPE_A_PDSCH if message == 2 else MappingType.TYPE_B_PUSCH
    grid = tuple(enumerate_valid(mapping))
    sites = [sc.site_index(doc.sweep.site)] if doc.sweep.site else range(len(sc.sites))
    for i in sites:
        result = run_sweep(SweepSpec(message, grid, sc, i))
        for path in report.emit_results(result, out):
            print(path)
    return EXIT_OK


def _cmd_lint(doc, out, dump_timeline: bool) -> int:
    sc = doc.scenario
    rep = lint(sc, doc.lint)
    text = rep.render()
    sys.stdout.write(text)
    (out / "lint.txt").write_text(text, encoding="utf-8")
    if dump_timeline:
        tl = build_timeline(sc.tdd, sc.policy, sc.settling_symbols).dump()
        sys.stdout.write(tl)
        (out / "timeline.txt").write_text(tl, encoding="utf-8")
    return EXIT_LINT if rep.has_errors else EXIT_OK


def _cmd_calibrate(doc, out, targets_path: str) -> int:
    sc = doc.scenario
    targets = parse_targets(Path(targets_path).read_text(encoding="utf-8").splitlines())
    attempts = sc.rach.msg3_retx_window_frames
    code = EXIT_OK
    try:
        result = calibrate(targets, sc.sites, sc.channel, msg3_attempts=attempts)
        params, residuals = result.params, result.residuals
    except CalibrationDiverged as exc:
        print(f"calibrate: {exc}", file=sys.stderr)
        params, residuals, code = exc.params, exc.residuals, EXIT_DIVERGED
    rows = [("site", "msg", "length", "target", "model", "residual")]
    rows += [(t.site, t.msg_kind, t.length, f"{t.probability:.4f}", f"{p:.4f}", f"{e:+.4f}")
             for t, p, e in residuals]
    (out / "residuals.csv").write_text(report.to_csv(rows), encoding="utf-8")
    fitted = dataclasses.replace(doc, scenario=dataclasses.replace(sc, channel=params))
    (out / "calibrated.scenario").write_text(dumps(fitted), encoding="utf-8")
    for f in dataclasses.fields(params):
        print(f"{f.name} = {getattr(params, f.name):.4f}")
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        doc = load_document(args.scenario, _overrides(args))
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {exc.path}: invalid scenario", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        out = _prepare(doc, args.command)
        if args.command == "run":
            return _cmd_run(doc, out)
        if args.command == "sweep":
            return _cmd_sweep(doc, out)
        if args.command == "lint":
            return _cmd_lint(doc, out, args.dump_timeline)
        return _cmd_calibrate(doc, out, args.targets)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # bad targets file
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

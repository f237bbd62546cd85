"""CSV and heatmap-matrix emission for sweep results and trial outcomes."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

from .sim import SweepResult, TrialOutcome
from .sliv import SYMBOLS, Sliv

SWEEP_HEADER = ("site", "msg", "start", "length", "sliv", "success_count", "trials", "probability",
                "msg2_success_count", "msg3_given_msg2_count")


def _prob(p: float) -> str:
    return f"{p:.6f}"


def to_csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def sweep_csv(result: SweepResult) -> str:
    if not result.cells:
        raise ValueError("refusing to emit an empty sweep")
    rows = [SWEEP_HEADER]
    for (s, l), cell in sorted(result.cells.items()):
        rows.append((result.site, result.message, s, l, Sliv(s, l).encoded,
                     cell.success(result.message), cell.trials,
                     _prob(cell.probability(result.message)),
                     cell.msg2_success, cell.msg3_given_msg2))
    return to_csv(rows)


def heatmap_csv(result: SweepResult) -> str:
    """Rows L = 1..14, one column per start symbol in the grid; blank where (S, L) is not in it."""
    if not result.cells:
        raise ValueError("refusing to emit an empty sweep")
    starts = sorted({s for s, _ in result.cells})
    rows = [["L\\S", *starts]]
    for length in range(1, SYMBOLS + 1):
        row = [length]
        for s in starts:
            cell = result.cells.get((s, length))
            row.append("" if cell is None else _prob(cell.probability(result.message)))
        rows.append(row)
    return to_csv(rows)


def emit_results(result: SweepResult, directory, formats=("csv", "heatmap")) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"msg{result.message}-{result.site}"
    written = []
    for fmt in formats:
        if fmt == "csv":
            path, text = out / f"sweep-{stem}.csv", sweep_csv(result)
        elif fmt == "heatmap":
            path, text = out / f"heatmap-{stem}.csv", heatmap_csv(result)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


OUTCOME_HEADER = ("site", "trial", "ue", "final", "cycles_used", "msg2_decoded", "msg3_decoded")


def outcomes_csv(outcomes: Iterable[TrialOutcome]) -> str:
    rows = [OUTCOME_HEADER]
    for o in outcomes:
        for u in o.ues:
            rows.append((o.site, o.trial, u.ue_tag, u.final, u.cycles_used,
                         int(o.msg2_decoded(u.ue_tag)), int(o.msg3_decoded(u.ue_tag))))
    return to_csv(rows)


def summary_rows(site: str, outcomes: Sequence[TrialOutcome]) -> list[tuple]:
    """``(site, final, count)`` per distinct final state, sorted."""
    counts: dict[str, int] = {}
    for o in outcomes:
        for u in o.ues:
            counts[u.final] = counts.get(u.final, 0) + 1
    return [(site, final, n) for final, n in sorted(counts.items())]

"""Result tables: a per-system summary and a condition grid, as aligned text and CSV."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

CONDITIONS = ("a", "b", "c")


@dataclass
class MetricRow:
    system: str
    condition: str = ""
    wer: dict[str, float] = field(default_factory=dict)  # test set -> rate in [0, inf)
    swer: float | None = None
    mos_mean: float | None = None
    mos_ci: tuple[float, float] | None = None

    def __post_init__(self):
        if any(v < 0 for v in self.wer.values()):
            raise ValueError("WER must be non-negative")
        if self.mos_ci is not None:
            self.mos_ci = (float(self.mos_ci[0]), float(self.mos_ci[1]))
            if self.mos_mean is None or not self.mos_ci[0] <= self.mos_mean <= self.mos_ci[1]:
                raise ValueError("MOS interval must contain the mean")


def _pct(x):
    return "-" if x is None else f"{100 * x:.1f}"


def _mos(row):
    if row is None or row.mos_mean is None:
        return "-"
    if row.mos_ci is None:
        return f"{row.mos_mean:.2f}"
    return f"{row.mos_mean:.2f} ± {(row.mos_ci[1] - row.mos_ci[0]) / 2:.2f}"


def _table(header_rows, body, sep_before_last=False):
    cols = max(len(r) for r in header_rows + body)
    rows = [list(r) + [""] * (cols - len(r)) for r in header_rows + body]
    widths = [max(len(r[c]) for r in rows) for c in range(cols)]
    # cells are joined by " | ", so outer columns have one padding space and inner ones two
    pad = [1 if c in (0, cols - 1) else 2 for c in range(cols)]
    line = "+".join("-" * (w + p) for w, p in zip(widths, pad))
    out = []
    for i, r in enumerate(rows):
        if i == len(header_rows) or (sep_before_last and i == len(rows) - 1):
            out.append(line)
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        out.append(" | ".join(cells).rstrip())
    return "\n".join(out)


def eval_set_names(rows) -> list[str]:
    seen = []
    for r in rows:
        for name in r.wer:
            if name not in seen:
                seen.append(name)
    return seen


def _systems(rows):
    seen = []
    for r in rows:
        if r.system not in seen:
            seen.append(r.system)
    return seen


def summary_table(rows: list[MetricRow], reference: MetricRow | None = None,
                  condition: str = "c") -> str:
    """One line per system: WER per test set, MOS and sWER.

    Uses each system's row for ``condition``, falling back to the first row
    available for that system.
    """
    sets = eval_set_names(rows + ([reference] if reference else []))
    header = [["System"] + [f"WER {s} [%]" for s in sets] + ["MOS", "sWER [%]"]]
    body = []
    for system in _systems(rows):
        mine = [r for r in rows if r.system == system]
        row = next((r for r in mine if r.condition == condition), mine[0])
        body.append([system] + [_pct(row.wer.get(s)) for s in sets] + [_mos(row), _pct(row.swer)])
    if reference is not None:
        body.append([reference.system] + [_pct(reference.wer.get(s)) for s in sets]
                    + [_mos(reference), _pct(reference.swer)])
    return _table(header, body, sep_before_last=reference is not None)


def condition_table(rows: list[MetricRow], reference: MetricRow | None = None) -> str:
    """WER grid: for every test set one column per synthesis condition."""
    sets = eval_set_names(rows + ([reference] if reference else []))
    header = [["System"] + [s for s in sets for _ in CONDITIONS],
              [""] + [f"{c})" for _ in sets for c in CONDITIONS]]
    body = []
    for system in _systems(rows):
        by_cond = {r.condition: r for r in rows if r.system == system}
        cells = [system]
        for s in sets:
            cells += [_pct(by_cond[c].wer.get(s)) if c in by_cond else "-" for c in CONDITIONS]
        body.append(cells)
    if reference is not None:
        cells = [reference.system]
        for s in sets:
            cells += [_pct(reference.wer.get(s)), "", ""]
        body.append(cells)
    return _table(header, body, sep_before_last=reference is not None)


def csv_columns(rows: list[MetricRow]) -> list[str]:
    return (["system", "condition"] + [f"wer:{s}" for s in eval_set_names(rows)]
            + ["swer", "mos_mean", "mos_lo", "mos_hi"])


def _num(x):
    return "" if x is None else repr(float(x))


def to_csv(rows: list[MetricRow]) -> str:
    cols = csv_columns(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        lo, hi = r.mos_ci if r.mos_ci is not None else (None, None)
        rec = {"system": r.system, "condition": r.condition, "swer": _num(r.swer),
               "mos_mean": _num(r.mos_mean), "mos_lo": _num(lo), "mos_hi": _num(hi)}
        rec.update({f"wer:{k}": _num(v) for k, v in r.wer.items()})
        w.writerow([rec.get(c, "") for c in cols])
    return buf.getvalue()


def from_csv(text: str) -> list[MetricRow]:
    reader = csv.DictReader(io.StringIO(text))
    out = []

    def num(v):
        return None if v == "" else float(v)

    for rec in reader:
        wer = {k[4:]: float(v) for k, v in rec.items() if k.startswith("wer:") and v != ""}
        lo, hi = num(rec["mos_lo"]), num(rec["mos_hi"])
        out.append(MetricRow(rec["system"], rec["condition"], wer, num(rec["swer"]),
                             num(rec["mos_mean"]), None if lo is None else (lo, hi)))
    return out


def render_report(rows: list[MetricRow], reference: MetricRow | None = None) -> dict[str, str]:
    """Returns ``{"summary.txt", "conditions.txt", "metrics.csv"}`` contents."""
    if not rows:
        raise ValueError("report needs at least one row")
    all_rows = rows + ([reference] if reference else [])
    return {
        "summary.txt": summary_table(rows, reference) + "\n",
        "conditions.txt": condition_table(rows, reference) + "\n",
        "metrics.csv": to_csv(all_rows),
    }

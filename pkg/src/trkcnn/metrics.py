"""Confusion matrices, the Acc/Sp/Se/Pr/F1 block, and report tables.

Sensitivity, precision and F1 are one-vs-rest for each positive class.
Specificity is measured against class 0 (the "normal" class) only.
Values are kept at full precision and rounded half-up to two decimals
when rendered.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, List, Optional, Sequence

import numpy as np


class _Undefined:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        return False


UNDEFINED = _Undefined()
DASH = "-"


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise ValueError(f"confusion matrix must be square with N >= 2, got {c.shape}")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("counts must be non-negative integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def collapse(self, threshold: int) -> "ConfusionMatrix":
        """Binary matrix for "class >= threshold" against the rest."""
        if not 1 <= threshold <= self.n_classes - 1:
            raise ValueError(f"threshold {threshold} outside 1..{self.n_classes - 1}")
        groups = [slice(0, threshold), slice(threshold, None)]
        return ConfusionMatrix(np.array([[self.counts[r, c].sum() for c in groups] for r in groups]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + [str(i) for i in range(self.n_classes)])
        for i, row in enumerate(self.counts):
            w.writerow([str(i)] + [str(int(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        return cls(np.array([[int(v) for v in r[1:]] for r in rows[1:]]))


def confusion(y_true, y_pred, n_classes: Optional[int] = None) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"label sequences differ in length: {t.size} vs {p.size}")
    if n_classes is None:
        n_classes = max(int(t.max(initial=0)), int(p.max(initial=0))) + 1
        n_classes = max(n_classes, 2)
    for name, v in (("true", t), ("predicted", p)):
        bad = v[(v < 0) | (v >= n_classes)]
        if bad.size:
            raise ValueError(f"{name} label {int(bad[0])} outside 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float):
    return 100.0 * num / den if den > 0 else UNDEFINED


def f1(se, pr):
    if se is UNDEFINED or pr is UNDEFINED:
        return UNDEFINED
    if se + pr == 0:
        return UNDEFINED
    return 2.0 * se * pr / (se + pr)


def class_names(n_classes: int) -> List[str]:
    # superscripts used for the positive classes of a three-class report
    return ["S", "G"] if n_classes == 3 else [str(c) for c in range(1, n_classes)]


@dataclass
class MetricsReport:
    """One table row. ``values`` maps column names (``Acc``, ``Sp``, ``Se^S`` ...
    or ``Se``/``Pr``/``F1`` for a binary collapse) to percentages or UNDEFINED."""

    label: str
    values: Dict[str, object]
    n_samples: int
    binary: bool = False
    confusion: Optional[ConfusionMatrix] = field(default=None, repr=False)

    def __getitem__(self, key):
        return self.values[key]


def metrics(cm: ConfusionMatrix, label: str = "", binary: bool = None) -> MetricsReport:
    """Accuracy, specificity against class 0, and per-positive-class Se/Pr/F1.

    A two-class matrix is reported as a binary collapse (single Se/Pr/F1)
    unless ``binary=False``.
    """
    if cm.total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    c = cm.counts.astype(np.float64)
    binary = cm.n_classes == 2 if binary is None else binary
    values: Dict[str, object] = {
        "Acc": _ratio(np.trace(c), c.sum()),
        "Sp": _ratio(c[0, 0], c[0].sum()),
    }
    if binary:
        if cm.n_classes != 2:
            raise ValueError("binary reports need a two-class matrix; use ConfusionMatrix.collapse")
        names = [""]
    else:
        names = ["^" + n for n in class_names(cm.n_classes)]
    for pos, suffix in enumerate(names, start=1):
        tp = c[pos, pos]
        se = _ratio(tp, c[pos].sum())
        pr = _ratio(tp, c[:, pos].sum())
        values["Se" + suffix] = se
        values["Pr" + suffix] = pr
        values["F1" + suffix] = f1(se, pr)
    return MetricsReport(label, values, cm.total, binary, cm)


def report_columns(n_classes: int = 3) -> List[str]:
    names = class_names(n_classes)
    cols = ["Acc", "Sp"]
    for m in ("Se", "Pr", "F1"):
        cols += [f"{m}^{n}" for n in names]
    return cols


def format_percent(value) -> str:
    if value is UNDEFINED or value is None:
        return DASH
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _cell(report: MetricsReport, col: str) -> str:
    if col in report.values:
        return format_percent(report.values[col])
    if report.binary and "^" in col:
        # a binary row spans the per-class pair, as in a merged table cell
        return format_percent(report.values.get(col.split("^")[0], UNDEFINED))
    return DASH


def render_report(reports: Sequence[MetricsReport], n_classes: int = 3) -> str:
    """Fixed-width text table in column order Acc, Sp, Se^*, Pr^*, F1^*."""
    cols = report_columns(n_classes)
    rows = [[r.label] + [_cell(r, c) for c in cols] for r in reports]
    header = ["Method"] + [c + "(%)" for c in cols]
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("-" * len(lines[0]))
    for row in rows:
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


CSV_EXTRA = ["Se", "Pr", "F1"]


def report_csv(reports: Sequence[MetricsReport], n_classes: int = 3) -> str:
    """CSV with columns method, n, the table columns, then binary Se/Pr/F1.

    Cells hold two-decimal percentages, ``-`` for undefined values, and
    are empty where a column does not apply to the row.
    """
    cols = report_columns(n_classes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "n"] + cols + CSV_EXTRA)
    for r in reports:
        row = [r.label, str(r.n_samples)]
        for col in cols + CSV_EXTRA:
            row.append(format_percent(r.values[col]) if col in r.values else "")
        w.writerow(row)
    return buf.getvalue()


def read_report_csv(text: str) -> List[MetricsReport]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        values = {}
        for key, cell in row.items():
            if key in ("method", "n") or cell == "":
                continue
            values[key] = UNDEFINED if cell == DASH else float(cell)
        binary = "Se" in values
        out.append(MetricsReport(row["method"], values, int(row["n"]), binary))
    return out

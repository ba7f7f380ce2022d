"""Ground-truth evaluation: ROC curves, AUC, and the contingency chi-square.

The ROC sweep reuses the classifier's flagging rule (flag iff lambda > T) at
every distinct score value, so +inf scores are flagged at every finite
threshold.  A cluster of +inf scores therefore produces a vertical segment
at the left edge of the curve, and a cluster of zero-lambda scores produces
a horizontal segment at the top; both shapes are real signal, not artifacts.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .bernoulli import MisclassificationScore
from .matrix import FileId, _atomic_write


class RocPoint(NamedTuple):
    p_fa: float
    p_d: float
    threshold: float  # log-lambda scale; -inf row means "flag everything"


@dataclass(frozen=True)
class RocCurve:
    """Detection/false-alarm staircase over all thresholds, with its AUC."""

    points: tuple[RocPoint, ...]
    auc: float
    excluded_indeterminate: tuple[FileId, ...] = ()


def roc(
    scores: Sequence[MisclassificationScore],
    truth: Mapping[FileId, bool],
) -> RocCurve:
    """Sweep thresholds over the scores against misclassification truth.

    ``truth`` maps file_id -> True for truly misclassified files.  Each
    determinate score needs a truth entry; indeterminate files are excluded
    from the sweep and reported on the returned curve.  Thresholds are on
    the log-lambda scale, descending from a +inf sentinel (nothing flagged)
    to a -inf sentinel (every determinate file flagged).
    """
    excluded = tuple(s.file_id for s in scores if s.indeterminate)
    determinate = [s for s in scores if not s.indeterminate]
    missing = [s.file_id for s in determinate if s.file_id not in truth]
    if missing:
        raise ValueError(f"scores lack ground truth for files {missing[:5]}")

    values = np.array([s.log_lambda for s in determinate])
    labels = np.array([truth[s.file_id] for s in determinate], dtype=bool)
    n_mis = int(labels.sum())
    n_cor = len(labels) - n_mis
    if n_mis == 0 or n_cor == 0:
        raise ValueError(
            "degenerate truth: need at least one misclassified and one "
            "correctly classified determinate file"
        )

    thresholds = [math.inf]
    thresholds += sorted(set(values.tolist()), reverse=True)
    if thresholds[-1] != -math.inf:
        thresholds.append(-math.inf)

    points = []
    for t in thresholds:
        if t == -math.inf:
            flagged = np.ones_like(labels)  # lambda >= 0 exceeds any T < 0
        else:
            flagged = values > t
        p_d = float((flagged & labels).sum()) / n_mis
        p_fa = float((flagged & ~labels).sum()) / n_cor
        points.append(RocPoint(p_fa=p_fa, p_d=p_d, threshold=t))

    curve = RocCurve(points=tuple(points), auc=0.0, excluded_indeterminate=excluded)
    return RocCurve(
        points=curve.points, auc=auc(curve), excluded_indeterminate=excluded
    )


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the (p_fa, p_d) polyline.

    Endpoints (0,0) and (1,1) are appended when absent so hand-built curves
    integrate over the full false-alarm range.
    """
    pts = [(p.p_fa, p.p_d) for p in curve.points]
    pts.sort()
    if pts[0] != (0.0, 0.0):
        pts.insert(0, (0.0, 0.0))
    if pts[-1] != (1.0, 1.0):
        pts.append((1.0, 1.0))
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    return float(np.trapezoid(y, x))


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Dataset-by-compliance file counts (two datasets, valid/rejected)."""

    a_valid: int
    a_rejected: int
    b_valid: int
    b_rejected: int

    def __post_init__(self) -> None:
        cells = (self.a_valid, self.a_rejected, self.b_valid, self.b_rejected)
        if any(c < 0 for c in cells):
            raise ValueError("cell counts must be nonnegative")
        if sum(cells) == 0:
            raise ValueError("table total must be positive")


def chi_square_independence(t: ContingencyTable2x2) -> tuple[float, float]:
    """Pearson chi-square test of independence on a 2x2 table.

    One degree of freedom, no continuity correction.  The p-value uses the
    closed-form survival function erfc(sqrt(x/2)).  Raises if any marginal
    is zero (expected counts would vanish).
    """
    obs = np.array(
        [[t.a_valid, t.a_rejected], [t.b_valid, t.b_rejected]], dtype=np.float64
    )
    row_sums = obs.sum(axis=1)
    col_sums = obs.sum(axis=0)
    total = obs.sum()
    if np.any(row_sums == 0) or np.any(col_sums == 0):
        raise ValueError("zero marginal: expected cell counts would be zero")
    expected = np.outer(row_sums, col_sums) / total
    statistic = float(((obs - expected) ** 2 / expected).sum())
    p_value = math.erfc(math.sqrt(statistic / 2.0))
    return statistic, p_value


def _format_threshold(value: float) -> str:
    if value == math.inf:
        return "+inf"
    if value == -math.inf:
        return "-inf"
    return repr(value)


def save_roc(curve: RocCurve, path: str | os.PathLike[str]) -> None:
    """Write ``threshold,p_fa,p_d`` CSV with a trailing ``# auc=`` summary."""
    path = Path(path)

    def write(fh) -> None:
        w = csv.writer(fh)
        w.writerow(["threshold", "p_fa", "p_d"])
        for p in curve.points:
            w.writerow([_format_threshold(p.threshold), repr(p.p_fa), repr(p.p_d)])
        fh.write(f"# auc={curve.auc!r}\n")

    _atomic_write(path, write)


def load_roc(path: str | os.PathLike[str]) -> RocCurve:
    points = []
    area = 0.0
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line or line == "threshold,p_fa,p_d":
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("auc="):
                    area = float(body[4:])
                continue
            t_s, fa_s, d_s = line.split(",")
            points.append(
                RocPoint(p_fa=float(fa_s), p_d=float(d_s), threshold=float(t_s))
            )
    return RocCurve(points=tuple(points), auc=area)

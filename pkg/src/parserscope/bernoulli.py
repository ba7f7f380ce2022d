"""Bernoulli pseudo-likelihood ratio misclassification statistic.

Each message is modeled as an independent Bernoulli indicator whose
probability depends on the dataset.  A file's pseudo-likelihood under a
probability vector p is the product over messages of
``p_k f_k + (1 - p_k)(1 - f_k)`` where f_k is the file's binary indicator
for message k.  The misclassification statistic is the ratio of the
pseudo-likelihood under the *other* dataset's probabilities to that under
the file's *own* dataset's probabilities: large ratios mean the file looks
like it belongs to the other dataset.

Everything is computed in the log domain: products of several hundred
probabilities underflow doubles long before they stop carrying ordering
information, and exact zero likelihoods (a file exhibiting a message its
dataset never produces) must map cleanly to -inf rather than to garbage.
The independence assumption is deliberately false; it trades recall for
precision and keeps the statistic usable for classification only, not for
uncertainty quantification.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .matrix import BinaryRelationMatrix, FileId, _atomic_write, _parse_file_id

_CHUNK = 1024  # columns scored per vectorized block


@dataclass(frozen=True)
class ErrorProbabilities:
    """Per-message occurrence probabilities estimated from one dataset."""

    dataset_label: str
    p: np.ndarray
    smoothing_alpha: float = 0.0

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=np.float64)
        object.__setattr__(self, "p", p)
        if p.ndim != 1:
            raise ValueError("p must be a vector")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.smoothing_alpha < 0:
            raise ValueError("smoothing_alpha must be nonnegative")
        if self.smoothing_alpha > 0 and (np.any(p == 0) or np.any(p == 1)):
            raise ValueError("smoothed probabilities must be strictly inside (0, 1)")


@dataclass(frozen=True)
class MisclassificationScore:
    """Log ratio statistic for one file.

    ``log_lambda`` is +inf when only the own-dataset pseudo-likelihood is
    zero (strongest misclassification evidence) and -inf when only the other
    one is.  When both are zero the ratio carries no ordering meaning:
    ``indeterminate`` is set and the file is excluded from ROC sweeps.
    """

    file_id: FileId
    log_lambda: float
    indeterminate: bool = False


def estimate_probabilities(
    m: BinaryRelationMatrix, alpha: float = 0.0
) -> ErrorProbabilities:
    """Row means with optional Laplace smoothing.

    p_k = (ones_k + alpha) / (M + 2 alpha); alpha=0 is the plain per-row
    average and can produce exact 0 and 1 entries.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if m.n_cols == 0:
        raise ValueError("cannot estimate probabilities from a matrix with no files")
    nnz = m.row_nnz()
    ones = np.array([nnz[r] for r in m.rows], dtype=np.float64)
    p = (ones + alpha) / (m.n_cols + 2.0 * alpha)
    return ErrorProbabilities(
        dataset_label=m.dataset_label, p=p, smoothing_alpha=alpha
    )


def _log_factors(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        return np.log(p), np.log1p(-p)


def pseudo_log_likelihood(
    column: np.ndarray | Sequence[int], probs: ErrorProbabilities
) -> float:
    """Sum of log(p_k f_k + (1-p_k)(1-f_k)) over messages.

    Returns -inf exactly when some factor is zero: the file exhibits a
    message with p_k = 0, or lacks a message with p_k = 1.
    """
    f = np.asarray(column, dtype=bool)
    if f.shape != probs.p.shape:
        raise ValueError(
            f"column length {f.shape} does not match probabilities {probs.p.shape}"
        )
    log_p, log_q = _log_factors(probs.p)
    return float(np.where(f, log_p, log_q).sum())


def lambda_statistic(
    column: np.ndarray | Sequence[int],
    probs_own: ErrorProbabilities,
    probs_other: ErrorProbabilities,
    file_id: FileId = 0,
) -> MisclassificationScore:
    """Log pseudo-likelihood ratio (other over own) for one file column."""
    ll_own = pseudo_log_likelihood(column, probs_own)
    ll_other = pseudo_log_likelihood(column, probs_other)
    return _combine(file_id, ll_own, ll_other)


def _combine(fid: FileId, ll_own: float, ll_other: float) -> MisclassificationScore:
    if math.isinf(ll_own) and math.isinf(ll_other):
        return MisclassificationScore(file_id=fid, log_lambda=math.nan, indeterminate=True)
    return MisclassificationScore(file_id=fid, log_lambda=ll_other - ll_own)


def score_matrix(
    m: BinaryRelationMatrix,
    probs_own: ErrorProbabilities,
    probs_other: ErrorProbabilities,
) -> list[MisclassificationScore]:
    """Score every column of ``m`` against a fixed pair of probability vectors.

    Output is ordered by file id.  This is the workhorse behind
    score_dataset and also serves train/test splits where the probabilities
    come from reference corpora rather than from ``m`` itself.
    """
    if probs_own.p.shape != (m.n_rows,) or probs_other.p.shape != (m.n_rows,):
        raise ValueError("probability vector length must equal the matrix row count")
    dense = m.to_dense(dtype=np.int8).astype(bool)
    lp_own, lq_own = _log_factors(probs_own.p)
    lp_oth, lq_oth = _log_factors(probs_other.p)

    ll_own = np.empty(m.n_cols)
    ll_oth = np.empty(m.n_cols)
    for start in range(0, m.n_cols, _CHUNK):
        block = dense[:, start : start + _CHUNK]
        ll_own[start : start + _CHUNK] = np.where(
            block, lp_own[:, None], lq_own[:, None]
        ).sum(axis=0)
        ll_oth[start : start + _CHUNK] = np.where(
            block, lp_oth[:, None], lq_oth[:, None]
        ).sum(axis=0)

    scores = [
        _combine(fid, ll_own[j], ll_oth[j]) for j, fid in enumerate(m.cols)
    ]
    scores.sort(key=lambda s: (isinstance(s.file_id, str), s.file_id))
    return scores


def score_dataset(
    m_own: BinaryRelationMatrix,
    m_other: BinaryRelationMatrix,
    alpha: float = 0.0,
    leave_one_out: bool = False,
) -> list[MisclassificationScore]:
    """Score every file of ``m_own`` against own/other estimated probabilities.

    Own-dataset probabilities include the scored file itself by default;
    ``leave_one_out`` re-estimates the own vector per file (useful for small
    corpora where a single file can dominate a rare message's estimate).
    """
    if m_own.rows != m_other.rows:
        raise ValueError("matrices must share an identical row space")
    probs_other = estimate_probabilities(m_other, alpha)
    if not leave_one_out:
        probs_own = estimate_probabilities(m_own, alpha)
        return score_matrix(m_own, probs_own, probs_other)

    if m_own.n_cols < 2:
        raise ValueError("leave-one-out needs at least two files")
    nnz = m_own.row_nnz()
    ones = np.array([nnz[r] for r in m_own.rows], dtype=np.float64)
    dense = m_own.to_dense(dtype=np.int8).astype(bool)
    scores = []
    for j, fid in enumerate(m_own.cols):
        col = dense[:, j]
        p = (ones - col + alpha) / (m_own.n_cols - 1 + 2.0 * alpha)
        probs_own = ErrorProbabilities(m_own.dataset_label, p, alpha)
        ll_own = pseudo_log_likelihood(col, probs_own)
        ll_oth = pseudo_log_likelihood(col, probs_other)
        scores.append(_combine(fid, ll_own, ll_oth))
    scores.sort(key=lambda s: (isinstance(s.file_id, str), s.file_id))
    return scores


def classify(
    scores: Iterable[MisclassificationScore], threshold: float = 1.0
) -> set[FileId]:
    """File ids whose ratio statistic exceeds ``threshold`` (lambda scale).

    Indeterminate files are never flagged; report them separately.  The
    threshold is on the lambda scale (the natural cutoff is 1), compared
    against stored log values without ever exponentiating.
    """
    flagged: set[FileId] = set()
    log_t = None
    if threshold > 0 and not math.isinf(threshold):
        log_t = math.log(threshold)
    for s in scores:
        if s.indeterminate:
            continue
        if threshold == math.inf:
            continue
        if threshold < 0 or threshold == -math.inf:
            flagged.add(s.file_id)  # lambda >= 0 > threshold always
        elif threshold == 0:
            if s.log_lambda > -math.inf:
                flagged.add(s.file_id)
        elif s.log_lambda > log_t:
            flagged.add(s.file_id)
    return flagged


def _format_log_lambda(value: float) -> str:
    if math.isnan(value):
        return "nan"
    if value == math.inf:
        return "+inf"
    if value == -math.inf:
        return "-inf"
    return repr(value)


def save_scores(
    scores: Sequence[MisclassificationScore], path: str | os.PathLike[str]
) -> None:
    """Write ``file_id,log_lambda,indeterminate`` CSV with +inf/-inf literals."""
    path = Path(path)

    def write(fh) -> None:
        w = csv.writer(fh)
        w.writerow(["file_id", "log_lambda", "indeterminate"])
        for s in scores:
            w.writerow(
                [s.file_id, _format_log_lambda(s.log_lambda), str(s.indeterminate).lower()]
            )

    _atomic_write(path, write)


def load_scores(path: str | os.PathLike[str]) -> list[MisclassificationScore]:
    scores = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["file_id", "log_lambda", "indeterminate"]:
            raise ValueError(f"{path}: expected header file_id,log_lambda,indeterminate")
        for fid_s, ll_s, ind_s in reader:
            scores.append(
                MisclassificationScore(
                    file_id=_parse_file_id(fid_s),
                    log_lambda=float(ll_s),
                    indeterminate=ind_s == "true",
                )
            )
    return scores

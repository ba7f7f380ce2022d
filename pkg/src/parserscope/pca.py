"""Principal components analysis for file-space and parser-space views.

Files are points whose coordinates are their binary message indicators;
parsers are points whose coordinates are their per-file total error counts.
Data is mean-centered but not standardized (zero-variance coordinates are
common and standardizing them is undefined).  Eigenvector signs being
arbitrary, each component is flipped so its largest-magnitude entry is
positive, which keeps projections reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrix import BinaryRelationMatrix, FileId, ParserCountMatrix


@dataclass(frozen=True)
class PcaResult:
    components: np.ndarray  # k x D, orthonormal rows
    variances: np.ndarray  # k, nonincreasing
    total_variance: float
    projections: np.ndarray  # P x k
    point_ids: tuple[FileId, ...] | None = None


@dataclass(frozen=True)
class Scree:
    variances: np.ndarray  # all min(P-1, D) eigenvalues, nonincreasing
    fractions: np.ndarray  # per-component share of total variance


def _decompose(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Centered SVD: (components, eigenvalues, projections, total variance)."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be a P x D matrix")
    n_points = x.shape[0]
    if n_points < 2:
        raise ValueError("PCA needs at least 2 points")
    centered = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    eigenvalues = s**2 / (n_points - 1)
    projections = u * s
    # Deterministic sign: largest-magnitude entry of each component positive.
    for i in range(vt.shape[0]):
        j = int(np.argmax(np.abs(vt[i])))
        if vt[i, j] < 0:
            vt[i] = -vt[i]
            projections[:, i] = -projections[:, i]
    total = float((centered**2).sum() / (n_points - 1))
    return vt, eigenvalues, projections, total


def pca(points: np.ndarray, k: int) -> PcaResult:
    """Top-k principal components of a P x D point cloud.

    Variances are sample-covariance eigenvalues (divisor P-1); projections
    are the centered points expressed in component coordinates.  Requires
    1 <= k <= min(P-1, D).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be a P x D matrix")
    limit = min(x.shape[0] - 1, x.shape[1])
    if not 1 <= k <= limit:
        raise ValueError(f"k must be in 1..{limit} for {x.shape[0]}x{x.shape[1]} data")
    vt, eigenvalues, projections, total = _decompose(x)
    return PcaResult(
        components=vt[:k].copy(),
        variances=eigenvalues[:k].copy(),
        total_variance=total,
        projections=projections[:, :k].copy(),
    )


def scree(points: np.ndarray) -> Scree:
    """All covariance eigenvalues with their variance-explained fractions.

    Fractions sum to 1 for any data with nonzero total variance; for a
    degenerate all-identical cloud they are reported as zeros.
    """
    _, eigenvalues, _, total = _decompose(points)
    fractions = eigenvalues / total if total > 0 else np.zeros_like(eigenvalues)
    return Scree(variances=eigenvalues, fractions=fractions)


def project_files(m: BinaryRelationMatrix, k: int = 3) -> PcaResult:
    """File-space PCA: columns are points, message rows are coordinates.

    ``k`` is clamped to the data's rank budget min(M-1, N) so small corpora
    still project (with fewer axes) instead of erroring.
    """
    if m.n_cols < 2:
        raise ValueError("file-space PCA needs at least 2 files")
    points = m.to_dense(dtype=np.int8).T.astype(np.float64)
    result = pca(points, min(k, m.n_cols - 1, m.n_rows))
    return PcaResult(
        components=result.components,
        variances=result.variances,
        total_variance=result.total_variance,
        projections=result.projections,
        point_ids=m.cols,
    )


def project_parsers(agg: ParserCountMatrix, k: int = 3) -> PcaResult:
    """Parser-space PCA: parsers are points, per-file raw counts are coordinates."""
    if len(agg.parsers) < 2:
        raise ValueError("parser-space PCA needs at least 2 parsers")
    points = agg.counts.astype(np.float64)
    result = pca(points, min(k, len(agg.parsers) - 1, len(agg.cols)))
    return PcaResult(
        components=result.components,
        variances=result.variances,
        total_variance=result.total_variance,
        projections=result.projections,
        point_ids=agg.parsers,
    )


def scree_of_files(m: BinaryRelationMatrix) -> Scree:
    if m.n_cols < 2:
        raise ValueError("file-space scree needs at least 2 files")
    return scree(m.to_dense(dtype=np.int8).T.astype(np.float64))

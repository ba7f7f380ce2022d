"""Relation-matrix core.

A relation matrix tabulates how often each catalog message fired for each
file: rows are message patterns, columns are files, entries are nonnegative
counts.  The data is overwhelmingly sparse, so only nonzero entries are
stored as (row, col) -> count triplets.  Binary matrices keep the same shape
with entries clamped to {0, 1} (multiple firings of one message collapse
to "fired").
"""

from __future__ import annotations

import csv
import os
import tempfile
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO, Union

import numpy as np

from .catalog import MessageCatalog, parser_row_ranges
from .harness import ParserRun, match_messages

FileId = Union[int, str]

VALID = "valid"
REJECTED = "rejected"

# file_id -> "valid" | "rejected"
GroundTruth = dict[FileId, str]


def _sort_key(fid: FileId) -> tuple[int, int | str]:
    # Integer ids sort numerically and before string ids.
    return (0, fid) if isinstance(fid, int) else (1, fid)


@dataclass(frozen=True, eq=False)
class RelationMatrix:
    """Sparse message-by-file occurrence count table."""

    dataset_label: str
    rows: tuple[int, ...]
    cols: tuple[FileId, ...]
    counts: dict[tuple[int, FileId], int]

    def __post_init__(self) -> None:
        if len(set(self.rows)) != len(self.rows):
            raise ValueError("duplicate row indices")
        if len(set(self.cols)) != len(self.cols):
            raise ValueError("duplicate file ids")
        row_set, col_set = set(self.rows), set(self.cols)
        for (r, c), v in self.counts.items():
            if not self._entry_ok(v):
                raise ValueError(f"entry ({r}, {c}) has invalid stored value {v}")
            if r not in row_set or c not in col_set:
                raise ValueError(f"entry ({r}, {c}) outside declared rows/cols")

    @staticmethod
    def _entry_ok(v: int) -> bool:
        return v > 0

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.cols)

    def __eq__(self, other: object) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return (
            self.dataset_label == other.dataset_label
            and self.rows == other.rows
            and self.cols == other.cols
            and self.counts == other.counts
        )

    def to_dense(self, dtype=np.int64) -> np.ndarray:
        """Dense n_rows x n_cols array (use sparingly at full corpus scale)."""
        row_pos = {r: i for i, r in enumerate(self.rows)}
        col_pos = {c: j for j, c in enumerate(self.cols)}
        dense = np.zeros((self.n_rows, self.n_cols), dtype=dtype)
        for (r, c), v in self.counts.items():
            dense[row_pos[r], col_pos[c]] = v
        return dense

    def row_nnz(self) -> dict[int, int]:
        """Number of nonzero entries per row (rows with none map to 0)."""
        nnz = Counter(r for (r, _c) in self.counts)
        return {r: nnz.get(r, 0) for r in self.rows}


@dataclass(frozen=True, eq=False)
class BinaryRelationMatrix(RelationMatrix):
    """Relation matrix with entries in {0, 1}: entry is 1 iff count >= 1."""

    @staticmethod
    def _entry_ok(v: int) -> bool:
        return v == 1


def build_relation_matrix(
    runs: Sequence[ParserRun],
    catalog: MessageCatalog,
    dataset_label: str = "",
    include_exit_rows: bool = False,
) -> RelationMatrix:
    """Tabulate parser runs into a relation matrix.

    Entry (k, f) is the total number of times message k fired over all runs
    of file f.  With ``include_exit_rows`` one synthetic row per parser is
    appended after the catalog rows (N+1..N+P, catalog parser order) counting
    runs that exited nonzero; timed-out runs have no exit code and are not
    counted there.
    """
    seen: set[tuple[FileId, str]] = set()
    counts: dict[tuple[int, FileId], int] = {}
    file_ids: set[FileId] = set()
    exit_row = {
        p.name: catalog.size + i + 1 for i, p in enumerate(catalog.parsers)
    }
    for run in runs:
        key = (run.file_id, run.parser)
        if key in seen:
            raise ValueError(
                f"duplicate run for file {run.file_id!r} parser {run.parser!r}: "
                "aggregation would be ambiguous"
            )
        seen.add(key)
        file_ids.add(run.file_id)
        for row, n in match_messages(run, catalog).items():
            counts[(row, run.file_id)] = counts.get((row, run.file_id), 0) + n
        if include_exit_rows and run.exit_code not in (0, None):
            r = exit_row[run.parser]
            counts[(r, run.file_id)] = counts.get((r, run.file_id), 0) + 1
    n = catalog.size + (len(catalog.parsers) if include_exit_rows else 0)
    return RelationMatrix(
        dataset_label=dataset_label,
        rows=tuple(range(1, n + 1)),
        cols=tuple(sorted(file_ids, key=_sort_key)),
        counts=counts,
    )


def binarize(m: RelationMatrix) -> BinaryRelationMatrix:
    """Entrywise indicator of count >= 1.  Idempotent."""
    return BinaryRelationMatrix(
        dataset_label=m.dataset_label,
        rows=m.rows,
        cols=m.cols,
        counts={k: 1 for k in m.counts},
    )


def hconcat(a: RelationMatrix, b: RelationMatrix) -> RelationMatrix:
    """Concatenate two matrices with identical row spaces column-wise.

    File ids are namespaced ``<dataset_label>/<id>`` so columns stay unique.
    Works on count and binary matrices alike (both inputs must be the same
    kind); the result's label is ``<label_a>+<label_b>``.
    """
    if type(a) is not type(b):
        raise ValueError("cannot concatenate count and binary matrices")
    if a.rows != b.rows:
        diff = next(
            (i for i, (ra, rb) in enumerate(zip(a.rows, b.rows)) if ra != rb),
            min(len(a.rows), len(b.rows)),
        )
        raise ValueError(
            f"row spaces differ at position {diff}: "
            f"{a.rows[diff] if diff < len(a.rows) else '<end>'} vs "
            f"{b.rows[diff] if diff < len(b.rows) else '<end>'}"
        )

    def ns(m: RelationMatrix, c: FileId) -> str:
        return f"{m.dataset_label}/{c}"

    counts: dict[tuple[int, FileId], int] = {}
    for (r, c), v in a.counts.items():
        counts[(r, ns(a, c))] = v
    for (r, c), v in b.counts.items():
        counts[(r, ns(b, c))] = v
    cols = tuple(ns(a, c) for c in a.cols) + tuple(ns(b, c) for c in b.cols)
    return type(a)(
        dataset_label=f"{a.dataset_label}+{b.dataset_label}",
        rows=a.rows,
        cols=cols,
        counts=counts,
    )


def drop_zero_variance_rows(
    m: BinaryRelationMatrix,
) -> tuple[BinaryRelationMatrix, list[int]]:
    """Remove rows that are constant across all columns.

    All-zero rows carry no information; all-one rows are removed too because
    Pearson correlation is undefined for any zero-variance row.  Returns the
    reduced matrix and the removed row indices in row order.
    """
    nnz = m.row_nnz()
    removed = [r for r in m.rows if nnz[r] == 0 or nnz[r] == m.n_cols]
    removed_set = set(removed)
    kept = tuple(r for r in m.rows if r not in removed_set)
    counts = {(r, c): v for (r, c), v in m.counts.items() if r not in removed_set}
    reduced = BinaryRelationMatrix(
        dataset_label=m.dataset_label, rows=kept, cols=m.cols, counts=counts
    )
    return reduced, removed


def row_means(m: BinaryRelationMatrix) -> np.ndarray:
    """Fraction of files exhibiting each message, in matrix row order."""
    if m.n_cols == 0:
        raise ValueError("row means undefined for a matrix with no files")
    nnz = m.row_nnz()
    return np.array([nnz[r] / m.n_cols for r in m.rows], dtype=np.float64)


@dataclass(frozen=True)
class ParserCountMatrix:
    """Per-parser total message counts per file (parsers x files, dense)."""

    parsers: tuple[str, ...]
    cols: tuple[FileId, ...]
    counts: np.ndarray

    def __post_init__(self) -> None:
        if self.counts.shape != (len(self.parsers), len(self.cols)):
            raise ValueError("counts shape does not match parsers x cols")


def aggregate_by_parser(
    m: RelationMatrix, catalog: MessageCatalog
) -> ParserCountMatrix:
    """Sum raw counts over each parser's row set.

    Column sums are preserved: every matrix row must belong to some parser.
    """
    ranges = parser_row_ranges(catalog)
    owner: dict[int, str] = {}
    for name, rows in ranges.items():
        for r in rows:
            owner[r] = name
    unknown = [r for r in m.rows if r not in owner]
    if unknown:
        raise ValueError(f"matrix rows not owned by any catalog parser: {unknown[:5]}")
    parser_pos = {p.name: i for i, p in enumerate(catalog.parsers)}
    col_pos = {c: j for j, c in enumerate(m.cols)}
    dense = np.zeros((len(catalog.parsers), m.n_cols), dtype=np.int64)
    for (r, c), v in m.counts.items():
        dense[parser_pos[owner[r]], col_pos[c]] += v
    return ParserCountMatrix(
        parsers=tuple(p.name for p in catalog.parsers), cols=m.cols, counts=dense
    )


# ---------------------------------------------------------------------------
# CSV persistence
#
# Triplet CSV with a comment header:
#   # dataset=<label> n_rows=<N> n_cols=<M>
#   row,col,count
# Rows default to 1..N and integer cols to 1..M; when a matrix's rows or
# cols are not canonical (e.g. after row removal or concatenation) extra
# "# rows=" / "# cols=" comment lines record them explicitly.
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, write_fn) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def save_relation_matrix(m: RelationMatrix, path: str | os.PathLike[str]) -> None:
    """Write a matrix as triplet CSV (atomic, deterministic order)."""
    path = Path(path)
    canonical_rows = m.rows == tuple(range(1, m.n_rows + 1))
    canonical_cols = m.cols == tuple(range(1, m.n_cols + 1))

    def write(fh: TextIO) -> None:
        fh.write(f"# dataset={m.dataset_label} n_rows={m.n_rows} n_cols={m.n_cols}\n")
        if not canonical_rows:
            fh.write("# rows=" + ",".join(str(r) for r in m.rows) + "\n")
        if not canonical_cols:
            fh.write("# cols=" + ",".join(str(c) for c in m.cols) + "\n")
        fh.write("row,col,count\n")
        row_pos = {r: i for i, r in enumerate(m.rows)}
        col_pos = {c: j for j, c in enumerate(m.cols)}
        for (r, c), v in sorted(
            m.counts.items(), key=lambda kv: (row_pos[kv[0][0]], col_pos[kv[0][1]])
        ):
            fh.write(f"{r},{c},{v}\n")

    _atomic_write(path, write)


def load_relation_matrix(path: str | os.PathLike[str]) -> RelationMatrix:
    """Read a triplet CSV written by save_relation_matrix."""
    label = ""
    n_rows = n_cols = 0
    rows: tuple[int, ...] | None = None
    cols: tuple[FileId, ...] | None = None
    counts: dict[tuple[int, FileId], int] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("rows="):
                    rows = tuple(int(x) for x in body[5:].split(",") if x)
                elif body.startswith("cols="):
                    cols = tuple(_parse_file_id(x) for x in body[5:].split(",") if x)
                else:
                    for tok in body.split():
                        key, _, val = tok.partition("=")
                        if key == "dataset":
                            label = val
                        elif key == "n_rows":
                            n_rows = int(val)
                        elif key == "n_cols":
                            n_cols = int(val)
                continue
            if line == "row,col,count":
                continue
            r_s, c_s, v_s = line.split(",")
            counts[(int(r_s), _parse_file_id(c_s))] = int(v_s)
    if rows is None:
        rows = tuple(range(1, n_rows + 1))
    if cols is None:
        cols = tuple(range(1, n_cols + 1))
    return RelationMatrix(dataset_label=label, rows=rows, cols=cols, counts=counts)


def _parse_file_id(text: str) -> FileId:
    try:
        return int(text)
    except ValueError:
        return text


def save_ground_truth(truth: GroundTruth, path: str | os.PathLike[str]) -> None:
    path = Path(path)

    def write(fh: TextIO) -> None:
        w = csv.writer(fh)
        w.writerow(["file_id", "label"])
        for fid in sorted(truth, key=_sort_key):
            w.writerow([fid, truth[fid]])

    _atomic_write(path, write)


def load_ground_truth(path: str | os.PathLike[str]) -> GroundTruth:
    truth: GroundTruth = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["file_id", "label"]:
            raise ValueError(f"{path}: expected header file_id,label")
        for fid_s, label in reader:
            if label not in (VALID, REJECTED):
                raise ValueError(f"{path}: bad label {label!r} for file {fid_s}")
            truth[_parse_file_id(fid_s)] = label
    return truth


def restrict_truth(truth: GroundTruth, cols: Iterable[FileId]) -> GroundTruth:
    """Subset of a ground-truth mapping covering the given file ids."""
    col_set = set(cols)
    return {fid: lab for fid, lab in truth.items() if fid in col_set}


def misclassified_flags(
    truth: Mapping[FileId, str], native_label: str
) -> dict[FileId, bool]:
    """Per-file misclassification truth for a corpus whose files are
    predominantly ``native_label`` ("valid" or "rejected")."""
    if native_label not in (VALID, REJECTED):
        raise ValueError(f"native_label must be {VALID!r} or {REJECTED!r}")
    return {fid: lab != native_label for fid, lab in truth.items()}

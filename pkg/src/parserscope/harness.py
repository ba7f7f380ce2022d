"""Corpus execution harness.

Runs every catalog parser over every corpus file (or ingests pre-captured
stderr logs) and matches the captured stderr against the catalog's message
patterns.  Only stderr is inspected; exit codes are recorded but feed the
matrix only through the optional synthetic nonzero-exit rows.  Hung parsers
are killed at their timeout and reported in-band (``timed_out=True``), never
treated as fatal.
"""

from __future__ import annotations

import csv
import logging
import os
import re
import shutil
import signal
import subprocess
import time
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .catalog import MessageCatalog, ParserSpec, parser_row_ranges

logger = logging.getLogger(__name__)

_LOG_NAME_RE = re.compile(r"^f(\d{6})\.(.+)\.stderr$")


class MissingParserError(RuntimeError):
    """A parser executable could not be resolved before the run."""


@dataclass(frozen=True)
class ManifestEntry:
    file_id: int
    path: Path
    ground_truth: str | None = None  # "valid" | "rejected" | None


@dataclass(frozen=True)
class CorpusManifest:
    dataset_label: str
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        ids = sorted(e.file_id for e in self.entries)
        if ids != list(range(1, len(self.entries) + 1)):
            raise ValueError("manifest file_id values must be exactly 1..M")
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be distinct")


@dataclass(frozen=True)
class ParserRun:
    """Outcome of one parser invocation on one file."""

    file_id: int
    parser: str
    exit_code: int | None
    stderr_text: str
    duration_s: float
    timed_out: bool

    def __post_init__(self) -> None:
        if self.timed_out and self.exit_code is not None:
            raise ValueError("timed-out run cannot carry an exit code")


def load_manifest(
    path: str | os.PathLike[str], dataset_label: str | None = None
) -> CorpusManifest:
    """Read a ``file_id,path,ground_truth`` CSV.

    The dataset label defaults to the file's stem; ground_truth may be empty
    (unknown).
    """
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["file_id", "path", "ground_truth"]:
            raise ValueError(f"{path}: expected header file_id,path,ground_truth")
        for row in reader:
            fid_s, file_path, truth = row
            if truth not in ("", "valid", "rejected"):
                raise ValueError(f"{path}: bad ground_truth {truth!r}")
            entries.append(
                ManifestEntry(
                    file_id=int(fid_s),
                    path=Path(file_path),
                    ground_truth=truth or None,
                )
            )
    return CorpusManifest(
        dataset_label=dataset_label if dataset_label is not None else path.stem,
        entries=tuple(entries),
    )


def save_manifest(manifest: CorpusManifest, path: str | os.PathLike[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file_id", "path", "ground_truth"])
        for e in manifest.entries:
            w.writerow([e.file_id, e.path, e.ground_truth or ""])


def _resolve_executable(parser: ParserSpec) -> None:
    cmd = parser.command
    found = shutil.which(cmd) if os.sep not in cmd else (
        cmd if os.path.isfile(cmd) and os.access(cmd, os.X_OK) else None
    )
    if found is None:
        raise MissingParserError(
            f"parser {parser.name!r}: executable {cmd!r} not found"
        )


def _run_one(parser: ParserSpec, entry: ManifestEntry) -> ParserRun:
    argv = parser.command_line(entry.path)
    start = time.monotonic()
    # New session so a timeout can kill the whole process group.
    proc = subprocess.Popen(
        argv,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.PIPE,
        start_new_session=True,
    )
    timed_out = False
    try:
        _, err = proc.communicate(timeout=parser.timeout_s)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            pass
        _, err = proc.communicate()
    duration = time.monotonic() - start
    return ParserRun(
        file_id=entry.file_id,
        parser=parser.name,
        exit_code=None if timed_out else proc.returncode,
        stderr_text=(err or b"").decode("utf-8", errors="replace"),
        duration_s=duration,
        timed_out=timed_out,
    )


def run_corpus(
    manifest: CorpusManifest,
    catalog: MessageCatalog,
    parallelism: int = 1,
) -> list[ParserRun]:
    """Execute every parser on every corpus file.

    Fails fast (before any run) if a parser executable is missing.  Runs up
    to ``parallelism`` subprocesses concurrently; the returned sequence is
    always sorted by (file_id, parser) regardless of interleaving.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    for parser in catalog.parsers:
        _resolve_executable(parser)
    jobs = [
        (parser, entry) for entry in manifest.entries for parser in catalog.parsers
    ]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        runs = list(pool.map(lambda j: _run_one(*j), jobs))
    runs.sort(key=lambda r: (r.file_id, r.parser))
    return runs


def ingest_captured(
    directory: str | os.PathLike[str],
    manifest: CorpusManifest,
    catalog: MessageCatalog,
) -> list[ParserRun]:
    """Build runs from pre-captured stderr logs.

    Layout: ``<dir>/f<file_id 6 digits>.<parser>.stderr`` with an optional
    ``.meta`` JSON sidecar carrying exit_code/duration_s/timed_out.  Missing
    logs yield empty-stderr runs and a logged warning; files that match
    ``*.stderr`` but not the layout are an error.
    """
    directory = Path(directory)
    known_parsers = {p.name for p in catalog.parsers}
    max_id = len(manifest.entries)
    for p in sorted(directory.glob("*.stderr")):
        m = _LOG_NAME_RE.match(p.name)
        if m is None:
            raise ValueError(f"unrecognized captured-log filename: {p}")
        if m.group(2) not in known_parsers or not 1 <= int(m.group(1)) <= max_id:
            raise ValueError(f"captured log references unknown parser or file: {p}")

    runs = []
    n_missing = 0
    for entry in manifest.entries:
        for parser in catalog.parsers:
            stem = f"f{entry.file_id:06d}.{parser.name}"
            log_path = directory / f"{stem}.stderr"
            exit_code: int | None = None
            duration = 0.0
            timed_out = False
            if log_path.exists():
                text = log_path.read_bytes().decode("utf-8", errors="replace")
                meta_path = directory / f"{stem}.meta"
                if meta_path.exists():
                    meta = json.loads(meta_path.read_text(encoding="utf-8"))
                    exit_code = meta.get("exit_code")
                    duration = float(meta.get("duration_s", 0.0))
                    timed_out = bool(meta.get("timed_out", False))
            else:
                text = ""
                n_missing += 1
                logger.warning("missing captured log: %s", log_path)
            runs.append(
                ParserRun(
                    file_id=entry.file_id,
                    parser=parser.name,
                    exit_code=exit_code,
                    stderr_text=text,
                    duration_s=duration,
                    timed_out=timed_out,
                )
            )
    if n_missing:
        logger.warning(
            "%d of %d expected captured logs missing under %s",
            n_missing,
            len(runs),
            directory,
        )
    runs.sort(key=lambda r: (r.file_id, r.parser))
    return runs


def match_messages(run: ParserRun, catalog: MessageCatalog) -> dict[int, int]:
    """Count catalog-message firings in one run's stderr.

    Each stderr line is tested against the running parser's patterns in row
    order and increments only the first match, so catch-all patterns placed
    after specific ones cannot double count.  Pure function of (stderr text,
    catalog).
    """
    rows = sorted(parser_row_ranges(catalog).get(run.parser, ()))
    if not rows and run.parser not in {p.name for p in catalog.parsers}:
        raise ValueError(f"run references undeclared parser {run.parser!r}")
    counts: dict[int, int] = {}
    for line in run.stderr_text.splitlines():
        for row in rows:
            if catalog.compiled(row).search(line):
                counts[row] = counts.get(row, 0) + 1
                break
    return counts

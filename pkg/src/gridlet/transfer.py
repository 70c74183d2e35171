"""Resumable chunked download client with an on-disk checkpoint journal.

A download fetches the remote size and md5 first, then pulls the file in
fixed-size chunks via ranged `file.read` calls, appending to a temporary
`<destination>.part` file. After every chunk the journal entry records how
many bytes are safely on disk, so an interruption at any instant loses at
most one chunk: `resume` truncates the temp file to the journalled byte
count and continues from there. On completion the local md5 is verified
against the one fetched up front, the temp file is atomically renamed to
the destination, and the journal entry is dropped. A checksum mismatch
keeps both the temp file and the entry for inspection.

Journal file format, one record per line, rewritten atomically:

    v1 <urlencoded remote> <urlencoded temp> <bytes> <chunk> <md5|->
"""

from __future__ import annotations

import hashlib
import os
import urllib.parse
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

DEFAULT_CHUNK_BYTES = 65536
TEMP_SUFFIX = ".part"
JOURNAL_VERSION = "v1"


class ChecksumMismatch(Exception):
    """Downloaded bytes do not hash to the server-reported md5."""


class EntryMissing(Exception):
    """Resume requested but the journal entry or temp file is unusable."""


class CorruptJournal(Exception):
    """Journal file cannot be parsed; message names the offending line."""


class RemoteFileSource(Protocol):
    """What the downloader needs from a server."""

    def size(self, remote_path: str) -> int: ...

    def md5(self, remote_path: str) -> str: ...

    def read(self, remote_path: str, offset: int, length: int) -> bytes: ...


@dataclass
class TransferCheckpoint:
    remote_path: str
    temp_path: str
    bytes_completed: int
    chunk_bytes: int
    expected_md5: Optional[str] = None

    def to_line(self) -> str:
        quote = urllib.parse.quote
        md5 = self.expected_md5 or "-"
        return (
            f"{JOURNAL_VERSION} {quote(self.remote_path, safe='')} "
            f"{quote(self.temp_path, safe='')} {self.bytes_completed} "
            f"{self.chunk_bytes} {md5}"
        )

    @classmethod
    def from_line(cls, line: str, line_no: int) -> "TransferCheckpoint":
        parts = line.split(" ")
        if len(parts) != 6:
            raise CorruptJournal(f"line {line_no}: expected 6 fields, got {len(parts)}")
        version, remote, temp, completed, chunk, md5 = parts
        if version != JOURNAL_VERSION:
            raise CorruptJournal(f"line {line_no}: unknown version {version!r}")
        try:
            bytes_completed = int(completed)
            chunk_bytes = int(chunk)
        except ValueError:
            raise CorruptJournal(f"line {line_no}: non-integer byte counts") from None
        if bytes_completed < 0 or chunk_bytes <= 0:
            raise CorruptJournal(f"line {line_no}: negative or zero byte counts")
        return cls(
            remote_path=urllib.parse.unquote(remote),
            temp_path=urllib.parse.unquote(temp),
            bytes_completed=bytes_completed,
            chunk_bytes=chunk_bytes,
            expected_md5=None if md5 == "-" else md5,
        )


class Journal:
    """At most one checkpoint per remote path, rewritten via temp+rename."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.entries: dict[str, TransferCheckpoint] = {}

    @classmethod
    def load(cls, path: Path | str) -> "Journal":
        journal = cls(path)
        journal_path = Path(path)
        if not journal_path.exists():
            return journal
        text = journal_path.read_text(encoding="utf-8")
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            checkpoint = TransferCheckpoint.from_line(line, line_no)
            journal.entries[checkpoint.remote_path] = checkpoint
        return journal

    def store(self) -> None:
        lines = [self.entries[key].to_line() for key in sorted(self.entries)]
        data = "\n".join(lines) + ("\n" if lines else "")
        tmp = self.path.with_name(self.path.name + ".tmp")
        tmp.write_text(data, encoding="utf-8")
        os.replace(tmp, self.path)

    def set(self, checkpoint: TransferCheckpoint) -> None:
        self.entries[checkpoint.remote_path] = checkpoint
        self.store()

    def remove(self, remote_path: str) -> None:
        if self.entries.pop(remote_path, None) is not None:
            self.store()


def _md5_file(path: Path) -> str:
    digest = hashlib.md5()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def download(
    source: RemoteFileSource,
    remote_path: str,
    local_path: Path | str,
    chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    journal: Optional[Journal] = None,
) -> Path:
    """Fetch remote_path into local_path, journalling progress per chunk."""
    if chunk_bytes <= 0:
        raise ValueError("chunk_bytes must be positive")
    local = Path(local_path)
    journal = journal if journal is not None else Journal(local.with_name(local.name + ".journal"))
    expected_md5 = source.md5(remote_path)
    checkpoint = TransferCheckpoint(
        remote_path=remote_path,
        temp_path=str(local) + TEMP_SUFFIX,
        bytes_completed=0,
        chunk_bytes=chunk_bytes,
        expected_md5=expected_md5,
    )
    with open(checkpoint.temp_path, "wb"):
        pass  # create/truncate
    journal.set(checkpoint)
    return _run_transfer(source, checkpoint, journal, local)


def resume(
    source: RemoteFileSource,
    journal: Journal,
    remote_path: str,
) -> Path:
    """Continue an interrupted download from its journalled checkpoint."""
    checkpoint = journal.entries.get(remote_path)
    if checkpoint is None:
        raise EntryMissing(f"no journal entry for {remote_path}")
    temp = Path(checkpoint.temp_path)
    if not temp.exists():
        raise EntryMissing(f"temp file {temp} is gone")
    if temp.stat().st_size < checkpoint.bytes_completed:
        raise EntryMissing(
            f"temp file shorter ({temp.stat().st_size}) than journalled "
            f"progress ({checkpoint.bytes_completed})"
        )
    with open(temp, "r+b") as fh:
        fh.truncate(checkpoint.bytes_completed)
    if not str(checkpoint.temp_path).endswith(TEMP_SUFFIX):
        raise EntryMissing(f"temp path {checkpoint.temp_path!r} lacks the {TEMP_SUFFIX} suffix")
    local = Path(checkpoint.temp_path[: -len(TEMP_SUFFIX)])
    return _run_transfer(source, checkpoint, journal, local)


def _run_transfer(
    source: RemoteFileSource,
    checkpoint: TransferCheckpoint,
    journal: Journal,
    local: Path,
) -> Path:
    size = source.size(checkpoint.remote_path)
    with open(checkpoint.temp_path, "ab") as temp:
        while checkpoint.bytes_completed < size:
            want = min(checkpoint.chunk_bytes, size - checkpoint.bytes_completed)
            blob = source.read(checkpoint.remote_path, checkpoint.bytes_completed, want)
            if len(blob) != want:
                raise OSError(
                    f"short read at {checkpoint.bytes_completed}: got {len(blob)}, wanted {want}"
                )
            temp.write(blob)
            temp.flush()
            checkpoint.bytes_completed += len(blob)
            journal.set(checkpoint)
    actual_md5 = _md5_file(Path(checkpoint.temp_path))
    if checkpoint.expected_md5 and actual_md5 != checkpoint.expected_md5:
        raise ChecksumMismatch(
            f"{checkpoint.remote_path}: got {actual_md5}, expected {checkpoint.expected_md5}"
        )
    os.replace(checkpoint.temp_path, local)
    journal.remove(checkpoint.remote_path)
    return local

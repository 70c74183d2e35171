"""Worker peer: job staging, execution, status, outputs, and the file service.

A forwarded job is staged as one directory per input file:

    <staging-root>/<job_id>/
        manifest.tsv          # staged-file digests, run-dir scans exclude these
        run-0/ {executable, submit file, input[0]}
        run-1/ {executable, submit file, input[1]}
        ...

The executable and submit file are copied into every run directory, named
as the submit file / request declare; each run holds exactly its own input.
Runs map 1:1 onto executor clusters; the mapping is persisted to
clusters.tsv (job_id, run_index, cluster_id) so status survives restarts
even though a restarted executor reports pre-restart clusters as unknown.

Output files are whatever a run left behind that was not staged, or whose
content changed; they are listed with size and md5 and fetched by range.
The file service exposes the publishing area: ls with * and ? wildcards,
range reads, md5, and line grep. Every path is resolved against its root
and rejected if it escapes.
"""

from __future__ import annotations

import hashlib
import re
import shutil
import threading
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .executor import (
    COMPLETED,
    FAILED,
    KILLED,
    QUEUED,
    RUNNING,
    Executor,
    LocalProcessExecutor,
    SubmitSpec,
    parse_submit_file,
)
from .faults import (
    BadPattern,
    DuplicateJob,
    InputFetchFailed,
    Io,
    NotFound,
    OutsideRoot,
    RangeError,
    UnknownJob,
)

MANIFEST_NAME = "manifest.tsv"
CLUSTERS_NAME = "clusters.tsv"


def aggregate_status(run_states: Sequence[str]) -> str:
    """Fold per-run states into one job state.

    completed iff all runs completed; killed if any killed; failed if any
    failed and none killed; running if any running; else queued.
    """
    states = list(run_states)
    if states and all(s == COMPLETED for s in states):
        return COMPLETED
    if any(s == KILLED for s in states):
        return KILLED
    if any(s == FAILED for s in states):
        return FAILED
    if any(s == RUNNING for s in states):
        return RUNNING
    return QUEUED


@dataclass
class JobRequest:
    """The five submission parameters."""

    job_name: str
    executable: bytes
    submit_file: bytes
    submit_file_name: str
    input_file_names: list[str]

    def validate(self) -> None:
        if not self.job_name:
            raise ValueError("job_name must be non-empty")
        for name in (self.job_name, self.submit_file_name):
            if "/" in name or "\\" in name:
                raise ValueError(f"name {name!r} must not contain path separators")
        if not self.submit_file_name:
            raise ValueError("submit_file_name must be non-empty")
        if not self.executable:
            raise ValueError("executable must be non-empty")
        if not self.input_file_names:
            raise ValueError("at least one input file is required")

    def to_struct(self) -> dict:
        return {
            "job_name": self.job_name,
            "executable": self.executable,
            "submit_file": self.submit_file,
            "submit_file_name": self.submit_file_name,
            "input_file_names": list(self.input_file_names),
        }

    @classmethod
    def from_struct(cls, data: dict) -> "JobRequest":
        try:
            request = cls(
                job_name=str(data["job_name"]),
                executable=bytes(data["executable"]),
                submit_file=bytes(data["submit_file"]),
                submit_file_name=str(data["submit_file_name"]),
                input_file_names=[str(p) for p in data["input_file_names"]],
            )
        except KeyError as exc:
            raise ValueError(f"job request missing field {exc}") from None
        request.validate()
        return request


@dataclass
class StagingLayout:
    root: Path
    job_dir: Path
    run_dirs: list[Path]
    staged_names: list[list[str]]  # per run: [executable, submit file, input]


@dataclass
class JobStatus:
    job_id: str
    run_states: list[str]
    aggregate: str

    def to_struct(self) -> dict:
        return {"job_id": self.job_id, "runs": list(self.run_states), "aggregate": self.aggregate}


@dataclass
class _JobRecord:
    job_id: str
    job_dir: Path
    run_dirs: list[Path]
    cluster_ids: list[int]
    input_names: list[str] = field(default_factory=list)


def _md5_file(path: Path) -> str:
    digest = hashlib.md5()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _read_range(path: Path, offset: int, length: int) -> bytes:
    size = path.stat().st_size
    if offset < 0 or length < 0:
        raise RangeError("offset and length must be non-negative")
    if offset > size:
        raise RangeError(f"offset {offset} beyond size {size}")
    if length == 0:
        length = size - offset
    if offset + length > size:
        raise RangeError(f"range {offset}+{length} exceeds size {size}")
    with open(path, "rb") as fh:
        fh.seek(offset)
        return fh.read(length)


def _glob_to_regex(pattern: str) -> re.Pattern:
    # Only * and ? are wildcards; everything else is literal.
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append("[^/]*")
        elif ch == "?":
            parts.append("[^/]")
        else:
            parts.append(re.escape(ch))
    return re.compile("^" + "".join(parts) + "$")


class FileService:
    """Read-only view of a publishing area, guarded against path escapes."""

    def __init__(self, root: Path | str):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)

    def _resolve(self, path: str) -> Path:
        candidate = (self.root / path.lstrip("/")).resolve()
        if candidate != self.root and self.root not in candidate.parents:
            raise OutsideRoot(f"path {path!r} escapes the publishing area")
        return candidate

    def ls(self, path: str, pattern: str = "*") -> list[dict]:
        directory = self._resolve(path)
        if not directory.is_dir():
            raise NotFound(f"no such directory: {path}")
        regex = _glob_to_regex(pattern)
        entries = []
        for child in sorted(directory.iterdir(), key=lambda p: p.name):
            if not regex.match(child.name):
                continue
            is_dir = child.is_dir()
            entries.append({
                "name": child.name,
                "size": 0 if is_dir else child.stat().st_size,
                "is_dir": is_dir,
            })
        return entries

    def read(self, path: str, offset: int, length: int) -> bytes:
        target = self._resolve(path)
        if not target.is_file():
            raise NotFound(f"no such file: {path}")
        return _read_range(target, offset, length)

    def md5(self, path: str) -> str:
        target = self._resolve(path)
        if not target.is_file():
            raise NotFound(f"no such file: {path}")
        return _md5_file(target)

    def size(self, path: str) -> int:
        target = self._resolve(path)
        if not target.is_file():
            raise NotFound(f"no such file: {path}")
        return target.stat().st_size

    def grep(self, target: str, pattern: str) -> list[dict]:
        try:
            regex = re.compile(pattern)
        except re.error as exc:
            raise BadPattern(f"bad regex: {exc}") from None
        matches = []
        for rel in self._expand_targets(target):
            path = self._resolve(rel)
            try:
                text = path.read_text(encoding="utf-8")
            except (UnicodeDecodeError, OSError):
                continue  # binary or unreadable files are skipped
            for line_no, line in enumerate(text.splitlines(), start=1):
                if regex.search(line):
                    matches.append({"path": rel, "line": line_no, "text": line})
        return matches

    def _expand_targets(self, target: str) -> list[str]:
        cleaned = target.lstrip("/")
        if "*" not in cleaned and "?" not in cleaned:
            resolved = self._resolve(cleaned)
            if not resolved.is_file():
                raise NotFound(f"no such file: {target}")
            return [cleaned]
        regex = _glob_to_regex_path(cleaned)
        found = []
        for path in sorted(self.root.rglob("*")):
            if not path.is_file():
                continue
            rel = path.relative_to(self.root).as_posix()
            if regex.match(rel):
                found.append(rel)
        return found


def _glob_to_regex_path(pattern: str) -> re.Pattern:
    # Like _glob_to_regex but * may cross directory boundaries for grep targets.
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append("[^/]")
        else:
            parts.append(re.escape(ch))
    return re.compile("^" + "".join(parts) + "$")


class WorkerCore:
    """Accepts forwarded jobs, stages them, and answers job queries."""

    def __init__(
        self,
        data_dir: Path | str,
        self_url: str = "",
        executor: Optional[Executor] = None,
        max_parallel: int = 1,
        fetch_remote: Optional[Callable[[str, str], bytes]] = None,
    ):
        self.data_dir = Path(data_dir)
        self.staging_root = self.data_dir / "staging"
        self.staging_root.mkdir(parents=True, exist_ok=True)
        self.files = FileService(self.data_dir / "pub")
        self.self_url = self_url
        self._fetch_remote = fetch_remote
        self._lock = threading.Lock()
        self._jobs: dict[str, _JobRecord] = {}
        self._clusters_path = self.data_dir / CLUSTERS_NAME
        first_cluster = self._load_clusters() + 1
        self.executor = executor or LocalProcessExecutor(
            max_parallel=max_parallel, first_cluster_id=first_cluster
        )

    # -- cluster map persistence ----------------------------------------------

    def _load_clusters(self) -> int:
        highest = 0
        if not self._clusters_path.exists():
            return highest
        for line in self._clusters_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            job_id, run_index, cluster_id = line.split("\t")
            cluster = int(cluster_id)
            highest = max(highest, cluster)
            record = self._jobs.get(job_id)
            if record is None:
                job_dir = self.staging_root / job_id
                record = _JobRecord(job_id, job_dir, [], [])
                self._jobs[job_id] = record
            index = int(run_index)
            while len(record.cluster_ids) <= index:
                record.cluster_ids.append(-1)
                record.run_dirs.append(record.job_dir / f"run-{len(record.run_dirs)}")
            record.cluster_ids[index] = cluster
        return highest

    def _save_clusters_locked(self) -> None:
        lines = []
        for record in self._jobs.values():
            for index, cluster in enumerate(record.cluster_ids):
                lines.append(f"{record.job_id}\t{index}\t{cluster}")
        tmp = self._clusters_path.with_suffix(".tmp")
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        tmp.replace(self._clusters_path)

    # -- job intake ------------------------------------------------------------

    def accept_job(self, request: JobRequest, job_id: str, forwarder_url: str) -> None:
        with self._lock:
            if job_id in self._jobs:
                raise DuplicateJob(f"job {job_id} already staged")
        request.validate()
        spec = parse_submit_file(request.submit_file)
        inputs = self._gather_inputs(request, forwarder_url)
        layout = self.stage_job(request, job_id, inputs, spec)
        try:
            cluster_ids = self.execute(layout, spec)
        except Exception:
            shutil.rmtree(layout.job_dir, ignore_errors=True)
            raise
        with self._lock:
            self._jobs[job_id] = _JobRecord(
                job_id=job_id,
                job_dir=layout.job_dir,
                run_dirs=layout.run_dirs,
                cluster_ids=cluster_ids,
                input_names=[Path(p).name for p in request.input_file_names],
            )
            self._save_clusters_locked()

    def _gather_inputs(self, request: JobRequest, forwarder_url: str) -> list[tuple[str, bytes]]:
        local = forwarder_url == self.self_url or not forwarder_url
        inputs = []
        for path in request.input_file_names:
            name = Path(path).name
            if not name:
                raise InputFetchFailed(f"input path {path!r} has no file name")
            try:
                if local:
                    data = self.files.read(path, 0, 0)
                else:
                    if self._fetch_remote is None:
                        raise InputFetchFailed("no remote fetch configured")
                    data = self._fetch_remote(forwarder_url, path)
            except InputFetchFailed:
                raise
            except Exception as exc:
                raise InputFetchFailed(f"input {path!r}: {exc}") from None
            inputs.append((name, data))
        return inputs

    def stage_job(
        self,
        request: JobRequest,
        job_id: str,
        inputs: list[tuple[str, bytes]],
        spec: Optional[SubmitSpec] = None,
    ) -> StagingLayout:
        """Build the per-run directory tree; one run per input file."""
        if spec is None:
            spec = parse_submit_file(request.submit_file)
        job_dir = self.staging_root / job_id
        try:
            job_dir.mkdir(parents=True, exist_ok=False)
        except FileExistsError:
            raise DuplicateJob(f"staging for {job_id} already exists") from None
        except OSError as exc:
            raise Io(f"cannot create staging dir: {exc}") from None
        run_dirs: list[Path] = []
        staged_names: list[list[str]] = []
        manifest_lines: list[str] = []
        try:
            for index, (input_name, input_data) in enumerate(inputs):
                run_dir = job_dir / f"run-{index}"
                run_dir.mkdir()
                staged = [
                    (spec.executable, request.executable),
                    (request.submit_file_name, request.submit_file),
                    (input_name, input_data),
                ]
                if len({name for name, _ in staged}) != 3:
                    raise ValueError("executable, submit file, and input names must differ")
                for name, data in staged:
                    (run_dir / name).write_bytes(data)
                (run_dir / spec.executable).chmod(0o755)
                run_dirs.append(run_dir)
                staged_names.append([name for name, _ in staged])
                for name, data in staged:
                    digest = hashlib.md5(data).hexdigest()
                    manifest_lines.append(f"{index}\t{urllib.parse.quote(name)}\t{digest}")
            (job_dir / MANIFEST_NAME).write_text(
                "\n".join(manifest_lines) + "\n", encoding="utf-8"
            )
        except OSError as exc:
            shutil.rmtree(job_dir, ignore_errors=True)
            raise Io(f"staging failed: {exc}") from None
        except Exception:
            shutil.rmtree(job_dir, ignore_errors=True)
            raise
        return StagingLayout(self.staging_root, job_dir, run_dirs, staged_names)

    def execute(self, layout: StagingLayout, spec: SubmitSpec) -> list[int]:
        """Hand every run directory to the executor; returns cluster ids."""
        return [self.executor.submit(run_dir, spec) for run_dir in layout.run_dirs]

    # -- job queries -------------------------------------------------------------

    def _record(self, job_id: str) -> _JobRecord:
        with self._lock:
            record = self._jobs.get(job_id)
        if record is None:
            raise UnknownJob(f"no such job: {job_id}")
        return record

    def has_job(self, job_id: str) -> bool:
        with self._lock:
            return job_id in self._jobs

    def query_status(self, job_id: str) -> JobStatus:
        record = self._record(job_id)
        states = self.executor.query(record.cluster_ids)
        run_states = [states[cid] for cid in record.cluster_ids]
        return JobStatus(job_id, run_states, aggregate_status(run_states))

    def kill_job(self, job_id: str) -> None:
        record = self._record(job_id)
        for cluster_id in record.cluster_ids:
            self.executor.kill(cluster_id)

    def list_outputs(self, job_id: str) -> list[dict]:
        record = self._record(job_id)
        manifest = self._load_manifest(record.job_dir)
        results = []
        for index, run_dir in enumerate(record.run_dirs):
            staged = manifest.get(index, {})
            files = []
            if run_dir.is_dir():
                for path in sorted(run_dir.rglob("*")):
                    if not path.is_file():
                        continue
                    rel = path.relative_to(run_dir).as_posix()
                    digest = _md5_file(path)
                    if staged.get(rel) == digest:
                        continue  # unchanged staged file
                    files.append({"name": rel, "size": path.stat().st_size, "md5": digest})
            results.append({"run": index, "files": files})
        return results

    def fetch_output(self, job_id: str, run_index: int, name: str, offset: int, length: int) -> bytes:
        record = self._record(job_id)
        if not 0 <= run_index < len(record.run_dirs):
            raise NotFound(f"job {job_id} has no run {run_index}")
        run_dir = record.run_dirs[run_index]
        target = (run_dir / name).resolve()
        if run_dir.resolve() not in target.parents:
            raise OutsideRoot(f"output name {name!r} escapes the run directory")
        if not target.is_file():
            raise NotFound(f"no such output: {name}")
        return _read_range(target, offset, length)

    def purge(self, job_id: str) -> None:
        record = self._record(job_id)
        for cluster_id in record.cluster_ids:
            self.executor.kill(cluster_id)
        shutil.rmtree(record.job_dir, ignore_errors=True)
        with self._lock:
            self._jobs.pop(job_id, None)
            self._save_clusters_locked()

    def job_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._jobs)

    def active_run_count(self) -> int:
        executor = self.executor
        if isinstance(executor, LocalProcessExecutor):
            return executor.active_count()
        with self._lock:
            clusters = [cid for record in self._jobs.values() for cid in record.cluster_ids]
        states = executor.query(clusters)
        return sum(1 for state in states.values() if state in (QUEUED, RUNNING))

    def _load_manifest(self, job_dir: Path) -> dict[int, dict[str, str]]:
        manifest: dict[int, dict[str, str]] = {}
        path = job_dir / MANIFEST_NAME
        if not path.exists():
            return manifest
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            index, quoted_name, digest = line.split("\t")
            manifest.setdefault(int(index), {})[urllib.parse.unquote(quoted_name)] = digest
        return manifest

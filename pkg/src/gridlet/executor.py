"""Pluggable job executor and the bundled local-process implementation.

An executor turns one prepared run directory into a "cluster": an opaque
integer handle whose state can later be queried or killed. The bundled
LocalProcessExecutor runs the staged executable as a child process in the
run directory, capturing stdout/stderr to the files the submit file
declares. A Condor shell-out adapter could implement the same three-method
interface; nothing above this module would change.

Submit-file subset (UTF-8, `#` comments):

    executable=count.sh
    arguments=-n 10          # optional, shell-style word splitting
    output=out.txt           # optional stdout capture
    error=err.txt            # optional stderr capture
    queue                    # bare terminator, required

Run states: queued, running, completed, failed, killed, unknown.
Killed and completed/failed are terminal; kill on a terminal run is a
no-op. cluster ids are unique for the lifetime of the executor and never
reused across restarts when the caller seeds `first_cluster_id` from its
persisted cluster map.
"""

from __future__ import annotations

import shlex
import subprocess
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .faults import SubmitParseError

QUEUED = "queued"
RUNNING = "running"
COMPLETED = "completed"
FAILED = "failed"
KILLED = "killed"
UNKNOWN = "unknown"

RUN_STATES = (QUEUED, RUNNING, COMPLETED, FAILED, KILLED, UNKNOWN)
TERMINAL_STATES = frozenset({COMPLETED, FAILED, KILLED})

_SUBMIT_KEYS = ("executable", "arguments", "output", "error")


@dataclass(frozen=True)
class SubmitSpec:
    """Parsed submit file."""

    executable: str
    arguments: tuple[str, ...] = ()
    output: Optional[str] = None
    error: Optional[str] = None


def parse_submit_file(data: bytes | str) -> SubmitSpec:
    """Parse the line-based key=value submit format; `queue` terminates it."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError:
            raise SubmitParseError("submit file is not UTF-8") from None
    else:
        text = data
    values: dict[str, str] = {}
    queued = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "queue":
            queued = True
            break
        if "=" not in line:
            raise SubmitParseError(f"submit file line {line_no}: expected key=value or queue")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _SUBMIT_KEYS:
            raise SubmitParseError(f"submit file line {line_no}: unknown key {key!r}")
        values[key] = value.strip()
    if not queued:
        raise SubmitParseError("submit file has no queue line")
    executable = values.get("executable")
    if not executable:
        raise SubmitParseError("submit file declares no executable")
    if "/" in executable or "\\" in executable:
        raise SubmitParseError("executable name must not contain path separators")
    try:
        arguments = tuple(shlex.split(values.get("arguments", "")))
    except ValueError as exc:
        raise SubmitParseError(f"bad arguments: {exc}") from None
    for key in ("output", "error"):
        name = values.get(key)
        if name and ("/" in name or "\\" in name):
            raise SubmitParseError(f"{key} name must not contain path separators")
    return SubmitSpec(
        executable=executable,
        arguments=arguments,
        output=values.get("output") or None,
        error=values.get("error") or None,
    )


class Executor:
    """Interface the worker drives; implementations manage their own runs."""

    def submit(self, run_dir: Path, spec: SubmitSpec) -> int:
        raise NotImplementedError

    def query(self, cluster_ids: Sequence[int]) -> dict[int, str]:
        raise NotImplementedError

    def kill(self, cluster_id: int) -> None:
        raise NotImplementedError


@dataclass
class _Run:
    cluster_id: int
    run_dir: Path
    spec: SubmitSpec
    state: str = QUEUED
    proc: Optional[subprocess.Popen] = None
    files: list = field(default_factory=list)


class LocalProcessExecutor(Executor):
    """Runs staged executables as child processes, max_parallel at a time.

    Submissions are FIFO: dispatcher threads pull from a queue, so a
    single-slot executor processes runs strictly in submission order.
    """

    def __init__(self, max_parallel: int = 1, first_cluster_id: int = 1):
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self._cv = threading.Condition()
        self._runs: dict[int, _Run] = {}
        self._queue: deque[int] = deque()
        self._next_id = first_cluster_id
        self._shutdown = False
        self._threads = [
            threading.Thread(target=self._dispatch_loop, name=f"executor-{i}", daemon=True)
            for i in range(max_parallel)
        ]
        for thread in self._threads:
            thread.start()

    def submit(self, run_dir: Path, spec: SubmitSpec) -> int:
        with self._cv:
            if self._shutdown:
                raise RuntimeError("executor is shut down")
            cluster_id = self._next_id
            self._next_id += 1
            self._runs[cluster_id] = _Run(cluster_id, Path(run_dir), spec)
            self._queue.append(cluster_id)
            self._cv.notify()
        return cluster_id

    def query(self, cluster_ids: Sequence[int]) -> dict[int, str]:
        with self._cv:
            return {
                cid: self._runs[cid].state if cid in self._runs else UNKNOWN
                for cid in cluster_ids
            }

    def kill(self, cluster_id: int) -> None:
        with self._cv:
            run = self._runs.get(cluster_id)
            if run is None or run.state in TERMINAL_STATES:
                return
            proc = run.proc
            run.state = KILLED
        if proc is not None:
            proc.terminate()
            try:
                proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def active_count(self) -> int:
        """Queued plus running runs; feeds the queue-depth metric source."""
        with self._cv:
            return sum(1 for run in self._runs.values() if run.state in (QUEUED, RUNNING))

    def shutdown(self) -> None:
        with self._cv:
            self._shutdown = True
            self._cv.notify_all()
            procs = [run.proc for run in self._runs.values() if run.state == RUNNING and run.proc]
        for proc in procs:
            proc.terminate()
        for thread in self._threads:
            thread.join(timeout=5.0)

    # -- dispatcher ----------------------------------------------------------

    def _dispatch_loop(self) -> None:
        while True:
            with self._cv:
                while not self._queue and not self._shutdown:
                    self._cv.wait()
                if self._shutdown and not self._queue:
                    return
                run = self._runs[self._queue.popleft()]
                if run.state != QUEUED:  # killed while waiting
                    continue
                run.state = RUNNING
                try:
                    run.proc = self._spawn(run)
                except OSError:
                    run.state = FAILED
                    continue
            returncode = run.proc.wait()
            for handle in run.files:
                handle.close()
            with self._cv:
                if run.state == RUNNING:  # not killed meanwhile
                    run.state = COMPLETED if returncode == 0 else FAILED

    def _spawn(self, run: _Run) -> subprocess.Popen:
        spec = run.spec
        stdout = stderr = subprocess.DEVNULL
        if spec.output:
            stdout = open(run.run_dir / spec.output, "wb")
            run.files.append(stdout)
        if spec.error:
            stderr = open(run.run_dir / spec.error, "wb")
            run.files.append(stderr)
        command = [str(run.run_dir / spec.executable), *spec.arguments]
        try:
            return subprocess.Popen(
                command,
                cwd=run.run_dir,
                stdout=stdout,
                stderr=stderr,
                stdin=subprocess.DEVNULL,
            )
        except OSError:
            for handle in run.files:
                handle.close()
            run.files.clear()
            raise

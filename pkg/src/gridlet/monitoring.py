"""End-host metric sampling and the load coefficient.

The coefficient ranks hosts for job routing: with cpu_usage clamped to at
most 99.9 to dodge the reciprocal singularity,

    coeff = clock_rate / (1 - cpu_usage/100)
            + w_mem * mem_usage + w_disk * disk_io
            + w_load1 * load1 + w_nprocs * nprocs

Lower means less loaded. Units are intentionally mixed (MHz plus weighted
percentages, Mbps, and counts); the value is a dimensionless ranking
score, never a physical quantity. The 5- and 15-minute load averages are
sampled alongside for display but take no part in the formula.

A MonitorAgent publishes the coefficient to the broker every
`interval` seconds (10 by default) as a `monitor.report` call; delivery
failures are logged and counted, never buffered — the next tick simply
reports fresher data.
"""

from __future__ import annotations

import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .faults import SourceUnavailable

log = logging.getLogger(__name__)

DEFAULT_INTERVAL_S = 10.0
CPU_USAGE_CLAMP = 99.9


@dataclass
class LoadSample:
    """One host metric snapshot.

    cpu_usage and mem_usage are percentages in [0, 100]; clock_rate is MHz
    (> 0); disk_io is Mbps (>= 0); load averages are dimensionless; nprocs
    is a process count.
    """

    cpu_usage: float
    clock_rate: float
    mem_usage: float
    disk_io: float
    load1: float
    nprocs: int
    load5: float = 0.0
    load15: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.cpu_usage <= 100.0:
            raise ValueError(f"cpu_usage {self.cpu_usage} outside [0, 100]")
        if not 0.0 <= self.mem_usage <= 100.0:
            raise ValueError(f"mem_usage {self.mem_usage} outside [0, 100]")
        if self.clock_rate <= 0.0:
            raise ValueError("clock_rate must be positive")
        if self.disk_io < 0.0 or self.load1 < 0.0 or self.nprocs < 0:
            raise ValueError("disk_io, load1, and nprocs must be non-negative")

    def to_struct(self) -> dict:
        return {
            "cpu_usage": float(self.cpu_usage),
            "clock_rate": float(self.clock_rate),
            "mem_usage": float(self.mem_usage),
            "disk_io": float(self.disk_io),
            "load1": float(self.load1),
            "nprocs": int(self.nprocs),
            "load5": float(self.load5),
            "load15": float(self.load15),
        }

    @classmethod
    def from_struct(cls, data: dict) -> "LoadSample":
        return cls(
            cpu_usage=float(data["cpu_usage"]),
            clock_rate=float(data["clock_rate"]),
            mem_usage=float(data["mem_usage"]),
            disk_io=float(data["disk_io"]),
            load1=float(data["load1"]),
            nprocs=int(data["nprocs"]),
            load5=float(data.get("load5", 0.0)),
            load15=float(data.get("load15", 0.0)),
        )


@dataclass(frozen=True)
class WeightVector:
    """Weighting factors, one per monitoring parameter."""

    mem_usage: float = 1.0
    disk_io: float = 1.0
    load1: float = 1.0
    nprocs: float = 1.0

    def __post_init__(self):
        for name in ("mem_usage", "disk_io", "load1", "nprocs"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"weight {name} must be finite and non-negative")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.mem_usage, self.disk_io, self.load1, self.nprocs)


DEFAULT_WEIGHTS = WeightVector()


@dataclass
class LoadReport:
    peer_url: str
    coefficient: float
    sample: LoadSample
    timestamp: int

    @classmethod
    def build(cls, peer_url: str, sample: LoadSample, weights: WeightVector,
              timestamp: Optional[int] = None) -> "LoadReport":
        return cls(
            peer_url=peer_url,
            coefficient=load_coefficient(sample, weights),
            sample=sample,
            timestamp=int(time.time()) if timestamp is None else timestamp,
        )


def load_coefficient(sample: LoadSample, weights: WeightVector = DEFAULT_WEIGHTS) -> float:
    """Ranking score for a host; strictly increasing in cpu_usage below the clamp."""
    cpu = min(sample.cpu_usage, CPU_USAGE_CLAMP)
    free_fraction = 1.0 - cpu / 100.0
    return sample.clock_rate / free_fraction + (
        weights.mem_usage * sample.mem_usage
        + weights.disk_io * sample.disk_io
        + weights.load1 * sample.load1
        + weights.nprocs * sample.nprocs
    )


class MetricSource:
    """Interface: produce one LoadSample per call."""

    def sample(self) -> LoadSample:
        raise NotImplementedError


def sample_metrics(source: MetricSource) -> LoadSample:
    """Draw one sample from the configured source; always range-valid."""
    if source is None:
        raise SourceUnavailable("no metric source configured")
    return source.sample()


class ScriptedMetricSource(MetricSource):
    """Replays a fixed sequence of samples; for tests and simulations."""

    def __init__(self, samples: Iterable[LoadSample]):
        self._samples = list(samples)
        self._pos = 0

    def sample(self) -> LoadSample:
        if self._pos >= len(self._samples):
            raise SourceUnavailable("scripted metric source exhausted")
        sample = self._samples[self._pos]
        self._pos += 1
        return sample


class QueueDepthSource(MetricSource):
    """Synthetic source whose process count tracks a worker's active runs.

    Gives deterministic routing behaviour in tests and demos where the jobs
    (sleeps) barely move real host metrics.
    """

    def __init__(self, active_runs: Callable[[], int], clock_rate: float = 1000.0):
        self._active_runs = active_runs
        self._clock_rate = clock_rate

    def sample(self) -> LoadSample:
        return LoadSample(
            cpu_usage=0.0,
            clock_rate=self._clock_rate,
            mem_usage=0.0,
            disk_io=0.0,
            load1=0.0,
            nprocs=max(0, int(self._active_runs())),
        )


class HostMetricSource(MetricSource):
    """Real host metrics via psutil, clamped into the invariant ranges."""

    def __init__(self):
        try:
            import psutil
        except ImportError as exc:  # pragma: no cover
            raise SourceUnavailable(f"psutil unavailable: {exc}") from None
        self._psutil = psutil
        self._last_disk: Optional[tuple[float, int]] = None
        psutil.cpu_percent(interval=None)  # prime the cpu_percent delta

    def _clock_rate_mhz(self) -> float:
        freq = None
        try:
            freq = self._psutil.cpu_freq()
        except Exception:
            pass
        if freq and freq.current and freq.current > 0:
            return float(freq.current)
        try:
            with open("/proc/cpuinfo") as fh:
                for line in fh:
                    if line.lower().startswith("cpu mhz"):
                        return float(line.split(":", 1)[1])
        except (OSError, ValueError):
            pass
        return 1000.0

    def _disk_mbps(self) -> float:
        try:
            counters = self._psutil.disk_io_counters()
        except Exception:
            counters = None
        if counters is None:
            return 0.0
        now = time.monotonic()
        total = counters.read_bytes + counters.write_bytes
        rate = 0.0
        if self._last_disk is not None:
            then, prev_total = self._last_disk
            elapsed = now - then
            if elapsed > 0 and total >= prev_total:
                rate = (total - prev_total) * 8 / 1e6 / elapsed
        self._last_disk = (now, total)
        return max(0.0, rate)

    def sample(self) -> LoadSample:
        psutil = self._psutil
        try:
            cpu = float(psutil.cpu_percent(interval=None))
            mem = float(psutil.virtual_memory().percent)
            load1, load5, load15 = (0.0, 0.0, 0.0)
            try:
                load1, load5, load15 = os.getloadavg()
            except OSError:
                pass
            nprocs = len(psutil.pids())
        except Exception as exc:
            raise SourceUnavailable(f"host metrics unreadable: {exc}") from None
        return LoadSample(
            cpu_usage=min(100.0, max(0.0, cpu)),
            clock_rate=self._clock_rate_mhz(),
            mem_usage=min(100.0, max(0.0, mem)),
            disk_io=self._disk_mbps(),
            load1=max(0.0, load1),
            nprocs=max(0, nprocs),
            load5=max(0.0, load5),
            load15=max(0.0, load15),
        )


@dataclass
class AgentStats:
    sent: int = 0
    failed: int = 0
    consecutive_failures: int = 0


class MonitorAgent:
    """Periodic publisher of load reports to the broker.

    `deliver` performs the actual `monitor.report` call (the node wires in
    an RPC client bound to the current broker URL); any exception counts as
    a delivery failure and the agent simply retries on the next tick.
    `after_tick` runs every cycle regardless of outcome — the failover
    monitor hangs off it.
    """

    def __init__(
        self,
        peer_url: str,
        source: MetricSource,
        deliver: Callable[[LoadReport], None],
        interval: float = DEFAULT_INTERVAL_S,
        weights: WeightVector = DEFAULT_WEIGHTS,
        after_tick: Optional[Callable[[bool], None]] = None,
    ):
        if interval <= 0:
            raise ValueError("interval must be positive")
        self.peer_url = peer_url
        self.interval = interval
        self.weights = weights
        self.stats = AgentStats()
        self._source = source
        self._deliver = deliver
        self._after_tick = after_tick
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def tick(self) -> bool:
        """One sample-compute-report cycle; returns delivery success."""
        ok = False
        try:
            sample = sample_metrics(self._source)
            report = LoadReport.build(self.peer_url, sample, self.weights)
            self._deliver(report)
            ok = True
            self.stats.sent += 1
            self.stats.consecutive_failures = 0
        except Exception as exc:
            self.stats.failed += 1
            self.stats.consecutive_failures += 1
            log.warning("load report from %s failed: %s", self.peer_url, exc)
        if self._after_tick is not None:
            try:
                self._after_tick(ok)
            except Exception:
                log.exception("after_tick hook failed")
        return ok

    def run(self) -> None:
        while not self._stop.is_set():
            self.tick()
            self._stop.wait(self.interval)

    def start(self) -> None:
        self._thread = threading.Thread(target=self.run, name=f"monitor-{self.peer_url}", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

"""Resource broker: peer registry, load ingestion, routing, and failover.

Every node embeds one of these; exactly one acts as leader at a time.
The leader ingests `monitor.report` calls, routes `job.submit` to the
fresh peer with the minimum load coefficient (ties broken by smallest
peer_id), records job_id -> owner in the job index, and pushes registry
and index mutations to all peers via `broker.sync` so any of them can
take over.

Failover: each standby counts consecutive failed report deliveries; after
K of them it probes the leader directly, and on probe failure elects the
live peer with the lexicographically smallest peer_id. The winner bumps
the announce epoch, serves from the replicated state, and announces
itself to every peer; a higher epoch always wins, so a restarted old
leader demotes itself as soon as it hears the newer announce or sync.

Job ids are `J-<owner_peer_id>-<seq>`; the embedded owner is a hint only,
the index stays authoritative.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .faults import (
    Fault,
    ForwardFailed,
    NoFreshPeers,
    NotLeader,
    OwnerUnreachable,
    UnknownJob,
    UnknownPeer,
)

log = logging.getLogger(__name__)

LEADER = "leader"
STANDBY = "standby"

DEFAULT_FAILOVER_K = 3


@dataclass
class LastReport:
    coefficient: float
    timestamp: int  # sender's wall clock, whole seconds; orders same-peer reports
    received_at: float = 0.0  # broker's clock at ingest; the freshness reference
    sample: dict = field(default_factory=dict)


@dataclass
class PeerInfo:
    peer_id: str
    url: str
    registered_at: float = 0.0
    last_report: Optional[LastReport] = None

    def to_struct(self, now: Optional[float] = None, freshness_window: Optional[float] = None) -> dict:
        info: dict = {"peer_id": self.peer_id, "url": self.url}
        if self.last_report is not None:
            info["coefficient"] = self.last_report.coefficient
            info["timestamp"] = self.last_report.timestamp
            if now is not None and freshness_window is not None:
                info["fresh"] = (now - self.last_report.received_at) <= freshness_window
        return info


@dataclass
class JobIndexEntry:
    job_id: str
    owner_peer: str
    submitted_at: float
    client_dn: str

    def to_struct(self) -> dict:
        return {
            "job_id": self.job_id,
            "owner_peer": self.owner_peer,
            "submitted_at": float(self.submitted_at),
            "client_dn": self.client_dn,
        }


def select_target(
    peers: list[PeerInfo],
    now: float,
    freshness_window: float,
) -> str:
    """Fresh peer with minimum coefficient; ties to the smallest peer_id."""
    candidates = [
        p for p in peers
        if p.last_report is not None and (now - p.last_report.received_at) <= freshness_window
    ]
    if not candidates:
        raise NoFreshPeers(
            f"no peer reported within the last {freshness_window:.1f}s"
        )
    best = min(candidates, key=lambda p: (p.last_report.coefficient, p.peer_id))
    return best.peer_id


class BrokerCore:
    """Registry + job index + routing, shared by leader and standby roles.

    `call_peer(url, method, *params)` is how the broker talks to peers; the
    node wires in an authenticated RPC client. Registry and index are
    persisted to TSV files under data_dir and replicated on every mutation.
    """

    def __init__(
        self,
        peer_id: str,
        self_url: str,
        data_dir: Path | str,
        call_peer: Callable[..., object],
        freshness_window: float = 30.0,
        initial_leader_url: str = "",
        is_leader: bool = False,
        clock: Callable[[], float] = time.time,
    ):
        self.peer_id = peer_id
        self.self_url = self_url
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.freshness_window = freshness_window
        self.call_peer = call_peer
        self.clock = clock
        self._lock = threading.RLock()
        self.role = LEADER if is_leader else STANDBY
        self.epoch = 0
        self.leader_url = self_url if is_leader else initial_leader_url
        self.registry: dict[str, PeerInfo] = {}
        self.job_index: dict[str, JobIndexEntry] = {}
        self._seq: dict[str, int] = {}
        self._registry_path = self.data_dir / "registry.tsv"
        self._jobs_path = self.data_dir / "jobs.tsv"
        self._load_state()

    # -- persistence -----------------------------------------------------------

    def _load_state(self) -> None:
        if self._registry_path.exists():
            for line in self._registry_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    peer_id, url, registered_at = line.split("\t")
                    self.registry[peer_id] = PeerInfo(peer_id, url, float(registered_at))
        if self._jobs_path.exists():
            for line in self._jobs_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    job_id, owner, submitted_at, client_dn = line.split("\t")
                    self.job_index[job_id] = JobIndexEntry(
                        job_id, owner, float(submitted_at), client_dn
                    )
        self._rebuild_seq_locked()

    def _rebuild_seq_locked(self) -> None:
        self._seq = {}
        for entry in self.job_index.values():
            prefix, _, seq = entry.job_id.rpartition("-")
            if prefix.startswith("J-"):
                try:
                    number = int(seq)
                except ValueError:
                    continue
                owner = entry.owner_peer
                self._seq[owner] = max(self._seq.get(owner, 0), number)

    def _save_registry_locked(self) -> None:
        lines = [
            f"{p.peer_id}\t{p.url}\t{p.registered_at}"
            for p in sorted(self.registry.values(), key=lambda p: p.peer_id)
        ]
        tmp = self._registry_path.with_suffix(".tmp")
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        tmp.replace(self._registry_path)

    def _save_jobs_locked(self) -> None:
        lines = [
            f"{e.job_id}\t{e.owner_peer}\t{e.submitted_at}\t{e.client_dn}"
            for e in sorted(self.job_index.values(), key=lambda e: e.job_id)
        ]
        tmp = self._jobs_path.with_suffix(".tmp")
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        tmp.replace(self._jobs_path)

    # -- registry and reports ----------------------------------------------------

    def register_peer(self, peer_id: str, url: str) -> list[dict]:
        """Upsert a peer, persist, and broadcast the grown registry."""
        with self._lock:
            existing = self.registry.get(peer_id)
            if existing is None:
                self.registry[peer_id] = PeerInfo(peer_id, url, registered_at=self.clock())
            else:
                existing.url = url
            self._save_registry_locked()
            snapshot = [p.to_struct() for p in sorted(self.registry.values(), key=lambda p: p.peer_id)]
        self.replicate()
        return snapshot

    def ingest_report(self, peer_url: str, coefficient: float, timestamp: int, sample: dict) -> None:
        with self._lock:
            peer = next((p for p in self.registry.values() if p.url == peer_url), None)
            if peer is None:
                raise UnknownPeer(f"no registered peer with url {peer_url}")
            current = peer.last_report
            if current is None or timestamp >= current.timestamp:
                peer.last_report = LastReport(
                    float(coefficient), int(timestamp),
                    received_at=self.clock(), sample=dict(sample),
                )

    def peer_list(self) -> list[dict]:
        now = self.clock()
        with self._lock:
            return [
                p.to_struct(now=now, freshness_window=self.freshness_window)
                for p in sorted(self.registry.values(), key=lambda p: p.peer_id)
            ]

    def select_target(self, now: Optional[float] = None) -> str:
        with self._lock:
            peers = list(self.registry.values())
        return select_target(peers, self.clock() if now is None else now, self.freshness_window)

    # -- submission and proxying ---------------------------------------------------

    def submit(self, request_struct: dict, client_dn: str) -> str:
        if self.role != LEADER:
            raise NotLeader(f"not the resource broker; current leader is {self.leader_url}")
        target_id = self.select_target()
        with self._lock:
            target = self.registry[target_id]
            seq = self._seq.get(target_id, 0) + 1
            self._seq[target_id] = seq
            job_id = f"J-{target_id}-{seq}"
        try:
            self.call_peer(target.url, "job.accept", request_struct, job_id, self.self_url)
        except Exception as exc:
            raise ForwardFailed(f"peer {target_id} did not accept {job_id}: {exc}") from None
        with self._lock:
            self.job_index[job_id] = JobIndexEntry(
                job_id=job_id,
                owner_peer=target_id,
                submitted_at=self.clock(),
                client_dn=client_dn,
            )
            self._save_jobs_locked()
        self.replicate()
        return job_id

    def owner_url(self, job_id: str) -> str:
        with self._lock:
            entry = self.job_index.get(job_id)
            if entry is None:
                raise UnknownJob(f"no such job: {job_id}")
            owner = self.registry.get(entry.owner_peer)
        if owner is None:
            raise OwnerUnreachable(f"owner peer {entry.owner_peer} is not registered")
        return owner.url

    def proxy_job_call(self, job_id: str, method: str, *extra) -> object:
        with self._lock:
            entry = self.job_index.get(job_id)
        if entry is None:
            raise UnknownJob(f"no such job: {job_id}")
        url = self.owner_url(job_id)
        try:
            return self.call_peer(url, method, job_id, *extra)
        except Fault:
            raise  # remote faults pass through verbatim
        except Exception as exc:
            raise OwnerUnreachable(
                f"owner peer {entry.owner_peer} unreachable: {exc}"
            ) from None

    # -- replication and failover ---------------------------------------------------

    def state_snapshot(self) -> dict:
        with self._lock:
            return {
                "epoch": self.epoch,
                "leader_url": self.leader_url,
                "registry": [
                    {"peer_id": p.peer_id, "url": p.url, "registered_at": float(p.registered_at)}
                    for p in sorted(self.registry.values(), key=lambda p: p.peer_id)
                ],
                "job_index": [
                    e.to_struct()
                    for e in sorted(self.job_index.values(), key=lambda e: e.job_id)
                ],
            }

    def replicate(self) -> None:
        """Best-effort push of the current state to every other peer."""
        if self.role != LEADER:
            return
        snapshot = self.state_snapshot()
        with self._lock:
            urls = [p.url for p in self.registry.values() if p.url != self.self_url]
        for url in urls:
            try:
                self.call_peer(url, "broker.sync", snapshot)
            except Exception as exc:
                log.debug("state sync to %s failed: %s", url, exc)

    def apply_sync(self, state: dict) -> None:
        """Adopt a replicated snapshot if it is at least as new as ours."""
        epoch = int(state.get("epoch", 0))
        with self._lock:
            if epoch < self.epoch:
                return
            incoming_leader = str(state.get("leader_url", self.leader_url))
            if self.role == LEADER and incoming_leader != self.self_url:
                if epoch == self.epoch:
                    return  # a same-epoch peer never outranks a sitting leader
                log.warning("%s: demoting, observed leader %s at epoch %d",
                            self.peer_id, incoming_leader, epoch)
                self.role = STANDBY
            self.epoch = epoch
            self.leader_url = incoming_leader
            reports = {p.peer_id: p.last_report for p in self.registry.values()}
            self.registry = {
                entry["peer_id"]: PeerInfo(
                    peer_id=str(entry["peer_id"]),
                    url=str(entry["url"]),
                    registered_at=float(entry.get("registered_at", 0.0)),
                    last_report=reports.get(entry["peer_id"]),
                )
                for entry in state.get("registry", [])
            }
            self.job_index = {
                entry["job_id"]: JobIndexEntry(
                    job_id=str(entry["job_id"]),
                    owner_peer=str(entry["owner_peer"]),
                    submitted_at=float(entry.get("submitted_at", 0.0)),
                    client_dn=str(entry.get("client_dn", "")),
                )
                for entry in state.get("job_index", [])
            }
            self._rebuild_seq_locked()
            self._save_registry_locked()
            self._save_jobs_locked()

    def handle_announce(self, url: str, epoch: int) -> dict:
        """A peer announced itself as leader; higher epoch wins."""
        with self._lock:
            if epoch > self.epoch:
                if self.role == LEADER and url != self.self_url:
                    log.warning("%s: demoting to standby for %s (epoch %d)",
                                self.peer_id, url, epoch)
                self.role = LEADER if url == self.self_url else STANDBY
                self.epoch = epoch
                self.leader_url = url
            return self.role_info()

    def become_leader(self) -> None:
        with self._lock:
            self.epoch += 1
            self.role = LEADER
            self.leader_url = self.self_url
            epoch = self.epoch
            urls = [p.url for p in self.registry.values() if p.url != self.self_url]
        log.warning("%s: establishing itself as resource broker (epoch %d)", self.peer_id, epoch)
        for url in urls:
            try:
                self.call_peer(url, "broker.announce", self.self_url, epoch)
            except Exception as exc:
                log.debug("announce to %s failed: %s", url, exc)
        self.replicate()

    def role_info(self) -> dict:
        with self._lock:
            return {
                "role": self.role,
                "leader_url": self.leader_url,
                "epoch": self.epoch,
                "peer_id": self.peer_id,
            }


class FailoverMonitor:
    """Detects a dead leader and triggers deterministic re-election.

    Driven by the monitor agent's tick outcomes: K consecutive failed
    report deliveries trigger a direct probe of the leader; if that also
    fails, the live peer with the smallest peer_id (self counts as live)
    becomes the new leader.
    """

    def __init__(
        self,
        broker: BrokerCore,
        probe: Callable[[str], bool],
        k: int = DEFAULT_FAILOVER_K,
    ):
        self.broker = broker
        self.probe = probe
        self.k = k
        self.consecutive_failures = 0

    def on_tick(self, delivered: bool) -> None:
        if delivered:
            self.consecutive_failures = 0
            return
        self.consecutive_failures += 1
        if self.broker.role == LEADER:
            return
        if self.consecutive_failures < self.k:
            return
        if self.probe(self.broker.leader_url):
            self.consecutive_failures = 0
            return
        self.elect()

    def elect(self) -> None:
        with self.broker._lock:
            peers = sorted(self.broker.registry.values(), key=lambda p: p.peer_id)
            leader_url = self.broker.leader_url
        live: list[PeerInfo] = []
        for peer in peers:
            if peer.peer_id == self.broker.peer_id or (
                peer.url != leader_url and self.probe(peer.url)
            ):
                live.append(peer)
        if not live:
            return
        winner = live[0]
        if winner.peer_id == self.broker.peer_id:
            self.broker.become_leader()
            self.consecutive_failures = 0
        else:
            log.info("%s: deferring election to %s", self.broker.peer_id, winner.peer_id)

"""One gridlet node: worker + embedded broker + monitor agent + dispatch.

Every node serves the same RPC method set; the broker role is just state.
Worker peers publish load reports to the current leader, re-registering
automatically if the leader does not know them, redirecting when told the
target is not the leader, and running the failover monitor off their
delivery outcomes. A node whose broker role is leader replicates its
registry and job index to all peers once per monitor interval and after
every mutation.

Job queries route local-first: a worker answers for jobs it staged itself
and proxies everything else through the replicated job index, so clients
never need to know where a job actually ran.
"""

from __future__ import annotations

import logging
import threading
from typing import Any, Callable, Optional

from .auth import AclStore, Identity, SessionManager, SharedSecretVerifier
from .broker import LEADER, BrokerCore, FailoverMonitor
from .client import OPEN_METHODS, RpcClient, TransportError, probe
from .config import SERVICES, NodeConfig
from .faults import (
    Fault,
    InvalidParams,
    MethodNotFound,
    NotLeader,
    Unauthorized,
    UnknownJob,
    UnknownPeer,
)
from .monitoring import (
    HostMetricSource,
    LoadReport,
    MonitorAgent,
    QueueDepthSource,
)
from .worker import JobRequest, WorkerCore

log = logging.getLogger(__name__)

BINARY_METHODS = frozenset({"file.read", "job.fetch"})


class MethodSpec:
    def __init__(self, name: str, handler: Callable, params: list[str]):
        self.name = name
        self.handler = handler
        self.params = params
        self.binary = name in BINARY_METHODS
        self.open = name in OPEN_METHODS


class GridletNode:
    def __init__(self, config: NodeConfig):
        self.config = config
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self.verifier = SharedSecretVerifier(config.secret)
        self.sessions = SessionManager()

        acl_path = config.data_dir / "acl.tsv"
        fresh_store = not acl_path.exists()
        self.acl = AclStore(acl_path)
        if fresh_store and config.acl_seed:
            self.acl.seed(self._expand_seed(config.acl_seed))

        self._clients: dict[str, RpcClient] = {}
        self._clients_lock = threading.Lock()

        self.worker = WorkerCore(
            config.data_dir,
            self_url=config.url,
            max_parallel=config.max_parallel,
            fetch_remote=self._fetch_remote_input,
        )
        self.broker = BrokerCore(
            peer_id=config.peer_id,
            self_url=config.url,
            data_dir=config.data_dir,
            call_peer=self._call_peer,
            freshness_window=config.freshness_window,
            initial_leader_url=config.broker_url,
            is_leader=config.is_leader,
        )
        self.failover = FailoverMonitor(
            self.broker,
            probe=lambda url: probe(url, timeout=config.probe_timeout_s),
            k=config.failover_k,
        )
        if config.monitor_source == "queue":
            source = QueueDepthSource(self.worker.active_run_count)
        else:
            source = HostMetricSource()
        self.agent: Optional[MonitorAgent] = None
        if config.register_worker:
            self.agent = MonitorAgent(
                peer_url=config.url,
                source=source,
                deliver=self._deliver_report,
                interval=config.monitor_interval_s,
                weights=config.weights,
                after_tick=self._after_tick,
            )
        self._replicator_stop = threading.Event()
        self._replicator: Optional[threading.Thread] = None
        self.dispatch = self._build_dispatch()

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        if self.agent is not None:
            self.agent.start()
        else:
            self._replicator = threading.Thread(
                target=self._replicate_loop, name=f"replicate-{self.config.peer_id}", daemon=True
            )
            self._replicator.start()

    def stop(self) -> None:
        if self.agent is not None:
            self.agent.stop()
        self._replicator_stop.set()
        if self._replicator is not None:
            self._replicator.join(timeout=5.0)
        self.worker.executor.shutdown()

    def _replicate_loop(self) -> None:
        while not self._replicator_stop.is_set():
            self._after_tick(True)
            self._replicator_stop.wait(self.config.monitor_interval_s)

    # -- inter-node plumbing -------------------------------------------------------

    def _client(self, url: str) -> RpcClient:
        with self._clients_lock:
            client = self._clients.get(url)
            if client is None:
                client = RpcClient(url, credential=self.config.peer_credential())
                self._clients[url] = client
            return client

    def _call_peer(self, url: str, method: str, *params) -> Any:
        return self._client(url).call(method, *params)

    def _fetch_remote_input(self, url: str, path: str) -> bytes:
        blob = self._client(url).call("file.read", path, 0, 0, binary=True)
        if not isinstance(blob, bytes):
            raise TransportError(f"file.read returned {type(blob).__name__}")
        return blob

    def _deliver_report(self, report: LoadReport) -> None:
        target = self.broker.leader_url
        client = self._client(target)
        params = (report.peer_url, report.coefficient, report.timestamp,
                  report.sample.to_struct())
        try:
            client.call("monitor.report", *params)
        except UnknownPeer:
            client.call("peer.register", self.config.peer_id, self.config.url)
            client.call("monitor.report", *params)
        except NotLeader:
            info = client.call("broker.role")
            announced = str(info.get("leader_url", ""))
            if announced and announced != target:
                log.info("%s: redirecting reports to %s", self.config.peer_id, announced)
                self.broker.handle_announce(announced, int(info.get("epoch", 0)))
            raise

    def _after_tick(self, delivered: bool) -> None:
        if self.broker.role == LEADER:
            self.broker.replicate()
        else:
            self.failover.on_tick(delivered)

    # -- dispatch ------------------------------------------------------------------

    def _expand_seed(self, rows):
        expanded = []
        for kind, effect, principal, scope in rows:
            if scope == "*":
                expanded.extend((kind, effect, principal, service) for service in SERVICES)
            else:
                expanded.append((kind, effect, principal, scope))
        return expanded

    def _build_dispatch(self) -> dict[str, MethodSpec]:
        specs = [
            MethodSpec("echo.ping", self._h_ping, []),
            MethodSpec("auth.login", self._h_login, ["credential"]),
            MethodSpec("acl.add", self._h_acl_add, ["kind", "effect", "principal", "scope"]),
            MethodSpec("acl.remove", self._h_acl_remove, ["entry_id"]),
            MethodSpec("acl.list", self._h_acl_list, []),
            MethodSpec("monitor.report", self._h_monitor_report,
                       ["peer_url", "coefficient", "timestamp", "sample"]),
            MethodSpec("peer.register", self._h_peer_register, ["peer_id", "url"]),
            MethodSpec("peer.list", self._h_peer_list, []),
            MethodSpec("job.submit", self._h_job_submit,
                       ["job_name", "executable", "submit_file",
                        "submit_file_name", "input_file_names"]),
            MethodSpec("job.accept", self._h_job_accept, ["request", "job_id", "forwarder_url"]),
            MethodSpec("job.status", self._h_job_status, ["job_id"]),
            MethodSpec("job.kill", self._h_job_kill, ["job_id"]),
            MethodSpec("job.outputs", self._h_job_outputs, ["job_id"]),
            MethodSpec("job.fetch", self._h_job_fetch,
                       ["job_id", "run_index", "name", "offset", "length"]),
            MethodSpec("job.purge", self._h_job_purge, ["job_id"]),
            MethodSpec("file.ls", self._h_file_ls, ["path", "pattern"]),
            MethodSpec("file.read", self._h_file_read, ["path", "offset", "length"]),
            MethodSpec("file.md5", self._h_file_md5, ["path"]),
            MethodSpec("file.grep", self._h_file_grep, ["target", "pattern"]),
            MethodSpec("broker.sync", self._h_broker_sync, ["state"]),
            MethodSpec("broker.announce", self._h_broker_announce, ["url", "epoch"]),
            MethodSpec("broker.role", self._h_broker_role, []),
        ]
        return {spec.name: spec for spec in specs}

    def known_scope(self, scope: str) -> bool:
        return scope in SERVICES or scope in self.dispatch

    def handle_call(self, method: str, params: list, token: Optional[str]) -> Any:
        spec = self.dispatch.get(method)
        if spec is None:
            raise MethodNotFound(f"no such method: {method}")
        identity: Optional[Identity] = None
        if not spec.open:
            identity = self.sessions.lookup(token)
            if not self.acl.authorize(identity, method):
                raise Unauthorized(f"access denied: {identity.dn} may not call {method}")
        if len(params) != len(spec.params):
            raise InvalidParams(
                f"{method} takes {len(spec.params)} params ({', '.join(spec.params)}), "
                f"got {len(params)}"
            )
        try:
            return spec.handler(identity, *params)
        except (ValueError, TypeError, KeyError) as exc:
            raise InvalidParams(f"{method}: {exc}") from None

    # -- handlers --------------------------------------------------------------------

    def _h_ping(self, identity) -> str:
        return "pong"

    def _h_login(self, identity, credential) -> str:
        who = self.verifier.verify(credential)
        return self.sessions.open(who)

    def _h_acl_add(self, identity, kind, effect, principal, scope) -> int:
        return self.acl.add(str(kind), str(effect), str(principal), str(scope),
                            scope_ok=self.known_scope)

    def _h_acl_remove(self, identity, entry_id) -> bool:
        self.acl.remove(int(entry_id))
        return True

    def _h_acl_list(self, identity) -> list[dict]:
        return [
            {"id": e.entry_id, "kind": e.kind, "effect": e.effect,
             "principal": e.principal, "scope": e.scope}
            for e in self.acl.entries()
        ]

    def _h_monitor_report(self, identity, peer_url, coefficient, timestamp, sample) -> bool:
        if self.broker.role != LEADER:
            raise NotLeader(f"reports go to the broker at {self.broker.leader_url}")
        self.broker.ingest_report(str(peer_url), float(coefficient), int(timestamp), dict(sample))
        return True

    def _h_peer_register(self, identity, peer_id, url) -> list[dict]:
        return self.broker.register_peer(str(peer_id), str(url))

    def _h_peer_list(self, identity) -> list[dict]:
        return self.broker.peer_list()

    def _h_job_submit(self, identity, job_name, executable, submit_file,
                      submit_file_name, input_file_names) -> str:
        request = JobRequest.from_struct({
            "job_name": job_name,
            "executable": executable,
            "submit_file": submit_file,
            "submit_file_name": submit_file_name,
            "input_file_names": input_file_names,
        })
        return self.broker.submit(request.to_struct(), client_dn=identity.dn)

    def _h_job_accept(self, identity, request_struct, job_id, forwarder_url) -> bool:
        request = JobRequest.from_struct(dict(request_struct))
        self.worker.accept_job(request, str(job_id), str(forwarder_url))
        return True

    def _route_job(self, job_id: str, method: str, local: Callable, *extra) -> Any:
        if self.worker.has_job(job_id):
            return local()
        entry = self.broker.job_index.get(job_id)
        if entry is not None and entry.owner_peer == self.config.peer_id:
            raise UnknownJob(f"job {job_id} is no longer staged on {self.config.peer_id}")
        return self.broker.proxy_job_call(job_id, method, *extra)

    def _h_job_status(self, identity, job_id) -> dict:
        job_id = str(job_id)
        return self._route_job(
            job_id, "job.status",
            lambda: self.worker.query_status(job_id).to_struct(),
        )

    def _h_job_kill(self, identity, job_id) -> bool:
        job_id = str(job_id)
        self._route_job(job_id, "job.kill", lambda: self.worker.kill_job(job_id) or True)
        return True

    def _h_job_outputs(self, identity, job_id) -> list:
        job_id = str(job_id)
        return self._route_job(job_id, "job.outputs", lambda: self.worker.list_outputs(job_id))

    def _h_job_fetch(self, identity, job_id, run_index, name, offset, length) -> bytes:
        job_id = str(job_id)
        run_index, offset, length = int(run_index), int(offset), int(length)
        name = str(name)
        result = self._route_job(
            job_id, "job.fetch",
            lambda: self.worker.fetch_output(job_id, run_index, name, offset, length),
            run_index, name, offset, length,
        )
        return bytes(result)

    def _h_job_purge(self, identity, job_id) -> bool:
        self.worker.purge(str(job_id))
        return True

    def _h_file_ls(self, identity, path, pattern) -> list[dict]:
        return self.worker.files.ls(str(path), str(pattern))

    def _h_file_read(self, identity, path, offset, length) -> bytes:
        return self.worker.files.read(str(path), int(offset), int(length))

    def _h_file_md5(self, identity, path) -> str:
        return self.worker.files.md5(str(path))

    def _h_file_grep(self, identity, target, pattern) -> list[dict]:
        return self.worker.files.grep(str(target), str(pattern))

    def _h_broker_sync(self, identity, state) -> bool:
        self.broker.apply_sync(dict(state))
        return True

    def _h_broker_announce(self, identity, url, epoch) -> dict:
        return self.broker.handle_announce(str(url), int(epoch))

    def _h_broker_role(self, identity) -> dict:
        return self.broker.role_info()

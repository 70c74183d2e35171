"""Shared helpers: live in-process node stacks served by uvicorn threads."""

import socket
import threading
import time

import pytest
import uvicorn

from gridlet.config import NodeConfig
from gridlet.node import GridletNode
from gridlet.service import create_app

SECRET = "test-secret"
ADMIN_CRED = {"dn": "/O=gridlet/OU=people/CN=admin", "vos": ["gridlet-admins"], "secret": SECRET}
USER_CRED = {"dn": "/O=gridlet/OU=people/CN=alice", "vos": ["cms"], "secret": SECRET}
SEED_ALL = [("dn-substring", "allow", "/O=gridlet", "*")]


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def wait_until(predicate, timeout=10.0, interval=0.05, message="condition"):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return
        time.sleep(interval)
    raise AssertionError(f"timed out waiting for {message}")


class LiveNode:
    """A GridletNode served by uvicorn in a daemon thread."""

    def __init__(self, config: NodeConfig):
        self.config = config
        self.node = GridletNode(config)
        self.app = create_app(self.node)
        self._server = uvicorn.Server(
            uvicorn.Config(self.app, host=config.host, port=config.port, log_level="error")
        )
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        return self.config.url

    def start(self):
        self._thread = threading.Thread(
            target=self._server.run, name=f"uvicorn-{self.config.peer_id}", daemon=True
        )
        self._thread.start()
        deadline = time.monotonic() + 15.0
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError(f"{self.config.peer_id} failed to start")
            if not self._thread.is_alive():
                raise RuntimeError(f"{self.config.peer_id} server thread died")
            time.sleep(0.01)
        self.node.start()
        return self

    def stop(self):
        self.node.stop()
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10.0)

    kill = stop  # a killed node stops serving; connections are then refused


def node_config(tmp_path, peer_id, port, broker_url, is_leader=False, **overrides) -> NodeConfig:
    defaults = dict(
        peer_id=peer_id,
        port=port,
        data_dir=tmp_path / peer_id,
        broker_url=broker_url,
        secret=SECRET,
        is_leader=is_leader,
        monitor_interval_s=0.25,
        monitor_source="queue",
        failover_k=3,
        max_parallel=1,
        probe_timeout_s=0.75,
        acl_seed=list(SEED_ALL),
    )
    defaults.update(overrides)
    return NodeConfig(**defaults)


class Stack:
    def __init__(self, broker: LiveNode, workers: list[LiveNode]):
        self.broker = broker
        self.workers = workers

    @property
    def all_nodes(self):
        return [self.broker, *self.workers]

    def stop(self):
        for live in self.all_nodes:
            try:
                live.stop()
            except Exception:
                pass


def build_stack(tmp_path, n_workers=2, broker_is_worker=False, **overrides) -> Stack:
    broker_port = free_port()
    broker_url = f"http://127.0.0.1:{broker_port}"
    broker = LiveNode(node_config(
        tmp_path, "b0", broker_port, broker_url,
        is_leader=True, register_worker=broker_is_worker, **overrides,
    ))
    workers = []
    for index in range(n_workers):
        peer_id = f"w{index + 1}"
        workers.append(LiveNode(node_config(
            tmp_path, peer_id, free_port(), broker_url, **overrides,
        )))
    broker.start()
    for worker in workers:
        worker.start()
    expected = n_workers + (1 if broker_is_worker else 0)
    from gridlet.client import RpcClient

    client = RpcClient(broker_url, credential=ADMIN_CRED)
    wait_until(
        lambda: sum(1 for p in client.call("peer.list") if p.get("fresh")) >= expected,
        timeout=20.0,
        message=f"{expected} fresh peers",
    )
    return Stack(broker, workers)


@pytest.fixture
def stack(tmp_path):
    built = build_stack(tmp_path, n_workers=2)
    yield built
    built.stop()

"""gridlet-stack: spin up a throwaway broker + N workers in one process.

Meant for demos and the dashboard's end-to-end tests. Prints one JSON line
describing the stack (broker URL, worker URLs, a ready credential file)
once every peer is registered and reporting, then serves until interrupted.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import tempfile
import threading
import time
from pathlib import Path

import uvicorn

from .client import RpcClient
from .config import NodeConfig
from .node import GridletNode
from .service import create_app

DEMO_SECRET = "gridlet-dev"


class _Served:
    def __init__(self, config: NodeConfig):
        self.config = config
        self.node = GridletNode(config)
        self.server = uvicorn.Server(uvicorn.Config(
            create_app(self.node), host=config.host, port=config.port, log_level="warning"
        ))
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def start(self):
        self.thread.start()
        deadline = time.monotonic() + 15.0
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError(f"{self.config.peer_id} failed to start")
            time.sleep(0.02)
        self.node.start()

    def stop(self):
        self.node.stop()
        self.server.should_exit = True
        self.thread.join(timeout=10.0)


def build_configs(data_dir: Path, base_port: int, workers: int, interval: float,
                  secret: str, ui_dir: Path | None) -> list[NodeConfig]:
    broker_url = f"http://127.0.0.1:{base_port}"
    seed = [("dn-substring", "allow", "/O=gridlet", "*")]
    configs = [NodeConfig(
        peer_id="b0",
        port=base_port,
        data_dir=data_dir / "b0",
        broker_url=broker_url,
        secret=secret,
        is_leader=True,
        register_worker=False,
        monitor_interval_s=interval,
        monitor_source="queue",
        acl_seed=seed,
        ui_dir=ui_dir,
    )]
    for index in range(workers):
        peer_id = f"w{index + 1}"
        configs.append(NodeConfig(
            peer_id=peer_id,
            port=base_port + 1 + index,
            data_dir=data_dir / peer_id,
            broker_url=broker_url,
            secret=secret,
            monitor_interval_s=interval,
            monitor_source="queue",
            acl_seed=seed,
        ))
    return configs


def seed_demo_files(pub_root: Path) -> None:
    pub_root.mkdir(parents=True, exist_ok=True)
    for index in range(5):
        (pub_root / f"event-{index:02d}.dat").write_bytes(
            (f"event file {index}\n" * 64).encode()
        )
    (pub_root / "README.txt").write_text("files published by the gridlet demo stack\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gridlet-stack")
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--base-port", type=int, default=9100)
    parser.add_argument("--data", default=None, help="data dir (default: temp dir)")
    parser.add_argument("--interval", type=float, default=1.0,
                        help="monitor interval seconds")
    parser.add_argument("--secret", default=DEMO_SECRET)
    parser.add_argument("--ui", default=None, help="dashboard dist/ directory to serve at /ui")
    args = parser.parse_args(argv)

    data_dir = Path(args.data) if args.data else Path(tempfile.mkdtemp(prefix="gridlet-"))
    ui_dir = Path(args.ui) if args.ui else None
    configs = build_configs(data_dir, args.base_port, args.workers, args.interval,
                            args.secret, ui_dir)
    seed_demo_files(configs[0].data_dir / "pub")

    credential = {"dn": "/O=gridlet/OU=people/CN=demo", "vos": ["demo"], "secret": args.secret}
    cred_path = data_dir / "credential.json"
    cred_path.write_text(json.dumps(credential), encoding="utf-8")

    served = [_Served(config) for config in configs]
    for node in served:
        node.start()

    broker_url = configs[0].url
    client = RpcClient(broker_url, credential=credential)
    deadline = time.monotonic() + 30.0
    while time.monotonic() < deadline:
        try:
            fresh = sum(1 for p in client.call("peer.list") if p.get("fresh"))
            if fresh >= args.workers:
                break
        except Exception:
            pass
        time.sleep(0.1)

    print(json.dumps({
        "broker_url": broker_url,
        "worker_urls": [c.url for c in configs[1:]],
        "credential_file": str(cred_path),
        "credential": credential,
        "data_dir": str(data_dir),
    }), flush=True)

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    for node in served:
        node.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())

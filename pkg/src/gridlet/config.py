"""Node configuration.

Configs load from a flat JSON object whose keys follow the service.name
convention, e.g.:

    {
      "broker.peer_id": "w1",
      "node.host": "127.0.0.1",
      "node.port": 9101,
      "node.data_dir": "/var/lib/gridlet/w1",
      "node.broker_url": "http://127.0.0.1:9100",
      "node.is_leader": false,
      "node.secret": "cluster-secret",
      "monitor.interval_s": 10,
      "monitor.weights": [1, 1, 1, 1],
      "monitor.source": "host",
      "broker.freshness_window_s": 30,
      "broker.failover_k": 3,
      "worker.max_parallel": 1,
      "acl.seed": ["dn-substring allow /O=gridlet *"]
    }

`acl.seed` rows are `kind effect principal scope` (whitespace separated,
scope `*` meaning every service); they are applied only when the ACL
store file does not exist yet, so a live store is never clobbered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .monitoring import DEFAULT_INTERVAL_S, WeightVector

SERVICES = ("echo", "auth", "acl", "monitor", "peer", "job", "file", "broker")


@dataclass
class NodeConfig:
    peer_id: str
    port: int
    data_dir: Path
    broker_url: str
    secret: str
    host: str = "127.0.0.1"
    is_leader: bool = False
    register_worker: bool = True
    monitor_interval_s: float = DEFAULT_INTERVAL_S
    weights: WeightVector = field(default_factory=WeightVector)
    monitor_source: str = "host"  # host | queue
    freshness_window_s: Optional[float] = None  # default 3 x interval
    failover_k: int = 3
    max_parallel: int = 1
    probe_timeout_s: float = 1.0
    acl_seed: list[tuple[str, str, str, str]] = field(default_factory=list)
    ui_dir: Optional[Path] = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    @property
    def freshness_window(self) -> float:
        if self.freshness_window_s is not None:
            return self.freshness_window_s
        return 3.0 * self.monitor_interval_s

    def peer_credential(self) -> dict:
        return {
            "dn": f"/O=gridlet/OU=peers/CN={self.peer_id}",
            "vos": ["gridlet-peers"],
            "secret": self.secret,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NodeConfig":
        def need(key):
            if key not in data:
                raise ValueError(f"config key {key!r} is required")
            return data[key]

        weights = data.get("monitor.weights", [1.0, 1.0, 1.0, 1.0])
        if not (isinstance(weights, list) and len(weights) == 4):
            raise ValueError("monitor.weights must be a list of 4 numbers")
        seed = []
        for row in data.get("acl.seed", []):
            parts = row.split()
            if len(parts) != 4:
                raise ValueError(f"acl.seed row {row!r} must have 4 fields")
            seed.append(tuple(parts))
        config = cls(
            peer_id=str(need("broker.peer_id")),
            port=int(need("node.port")),
            data_dir=Path(need("node.data_dir")),
            broker_url=str(need("node.broker_url")).rstrip("/"),
            secret=str(need("node.secret")),
            host=str(data.get("node.host", "127.0.0.1")),
            is_leader=bool(data.get("node.is_leader", False)),
            register_worker=bool(data.get("node.register_worker", True)),
            monitor_interval_s=float(data.get("monitor.interval_s", DEFAULT_INTERVAL_S)),
            weights=WeightVector(*[float(w) for w in weights]),
            monitor_source=str(data.get("monitor.source", "host")),
            freshness_window_s=(
                float(data["broker.freshness_window_s"])
                if "broker.freshness_window_s" in data else None
            ),
            failover_k=int(data.get("broker.failover_k", 3)),
            max_parallel=int(data.get("worker.max_parallel", 1)),
            probe_timeout_s=float(data.get("node.probe_timeout_s", 1.0)),
            acl_seed=seed,
            ui_dir=Path(data["node.ui_dir"]) if "node.ui_dir" in data else None,
        )
        if config.monitor_source not in ("host", "queue"):
            raise ValueError("monitor.source must be 'host' or 'queue'")
        return config

    @classmethod
    def from_file(cls, path: Path | str) -> "NodeConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

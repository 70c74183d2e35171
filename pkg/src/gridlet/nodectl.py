"""gridlet-node: serve one node from a JSON config file."""

from __future__ import annotations

import argparse
import logging
import sys

import uvicorn

from .config import NodeConfig
from .node import GridletNode
from .service import create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gridlet-node", description="run a gridlet node")
    parser.add_argument("-c", "--config", required=True, help="node config JSON file")
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    config = NodeConfig.from_file(args.config)
    node = GridletNode(config)
    app = create_app(node)
    server = uvicorn.Server(uvicorn.Config(
        app, host=config.host, port=config.port, log_level=args.log_level
    ))
    logging.getLogger(__name__).info(
        "node %s serving on %s (%s)", config.peer_id, config.url,
        "leader" if config.is_leader else "standby",
    )

    # the agent needs the HTTP listener up before its first self-report
    import threading

    def start_agent():
        import time
        deadline = time.monotonic() + 15.0
        while not server.started and time.monotonic() < deadline:
            time.sleep(0.05)
        node.start()

    threading.Thread(target=start_agent, daemon=True).start()
    try:
        server.run()
    finally:
        node.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())

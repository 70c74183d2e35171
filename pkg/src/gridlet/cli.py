"""gridlet command-line client.

One verb per exposed capability; every verb maps straight onto the RPC
methods of the broker/worker it talks to. Exit codes: 0 success, 1 remote
fault, 2 usage error, 3 transport error.

    gridlet --broker http://host:9100 --cred cred.json submit \\
        --name t --exe ./count --submit ./job.sub --input /pub/a.dat
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .client import RpcClient, RpcFileSource, TransportError
from .executor import TERMINAL_STATES
from .faults import Fault
from .transfer import DEFAULT_CHUNK_BYTES, Journal, download, resume

DEFAULT_POLL_S = 2.0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridlet", description="client for a gridlet job-brokering stack"
    )
    parser.add_argument("--broker", default=os.environ.get("GRIDLET_BROKER"),
                        help="broker URL (or env GRIDLET_BROKER)")
    parser.add_argument("--cred", default=os.environ.get("GRIDLET_CRED"),
                        help="credential file path (or env GRIDLET_CRED)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--chunk-kib", type=int, default=DEFAULT_CHUNK_BYTES // 1024,
                        help="download chunk size in KiB")
    parser.add_argument("--poll-s", type=float, default=DEFAULT_POLL_S,
                        help="status poll interval for watch")
    parser.add_argument("--journal", default=None,
                        help="transfer journal path (default ~/.gridlet/journal)")

    sub = parser.add_subparsers(dest="command", metavar="command")

    sub.add_parser("login", help="verify the credential and print the session identity")

    ls = sub.add_parser("ls", help="list files in the publishing area")
    ls.add_argument("path", nargs="?", default="/")
    ls.add_argument("pattern", nargs="?", default="*")

    grep = sub.add_parser("grep", help="search inside published files")
    grep.add_argument("target", help="file path or wildcard pattern")
    grep.add_argument("regex")

    md5 = sub.add_parser("md5", help="md5 digest of a published file")
    md5.add_argument("path")

    get = sub.add_parser("get", help="resumable download of a published file")
    get.add_argument("remote")
    get.add_argument("local", nargs="?", default=None)

    submit = sub.add_parser("submit", help="submit a job to the broker")
    submit.add_argument("--name", required=True, help="job name")
    submit.add_argument("--exe", required=True, help="local executable file")
    submit.add_argument("--submit", required=True, dest="submit_file",
                        help="local submit file")
    submit.add_argument("--input", action="append", required=True, dest="inputs",
                        help="server-side input path (repeatable)")

    for verb, help_text in (
        ("status", "job status"),
        ("watch", "poll job status until it is terminal"),
        ("kill", "kill a job"),
        ("outputs", "list a job's output files"),
    ):
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("job_id")

    fetch = sub.add_parser("fetch", help="download one output file")
    fetch.add_argument("job_id")
    fetch.add_argument("run_index", type=int)
    fetch.add_argument("name")
    fetch.add_argument("local", nargs="?", default=None)

    sub.add_parser("peers", help="list registered peers and their load")
    return parser


def _client(args) -> RpcClient:
    if not args.broker:
        raise UsageError("no broker URL: pass --broker or set GRIDLET_BROKER")
    credential = None
    if args.cred:
        credential = Path(args.cred).read_text(encoding="utf-8")
    return RpcClient(args.broker, credential=credential)


def _journal_path(args) -> Path:
    if args.journal:
        return Path(args.journal)
    default = Path.home() / ".gridlet" / "journal"
    default.parent.mkdir(parents=True, exist_ok=True)
    return default


class UsageError(Exception):
    pass


def emit(args, human: str, payload: dict) -> None:
    print(json.dumps(payload) if args.json else human)


def cmd_login(args) -> int:
    client = _client(args)
    token = client.login()
    credential = json.loads(Path(args.cred).read_text(encoding="utf-8"))
    emit(args, f"logged in as {credential.get('dn')}",
         {"dn": credential.get("dn"), "token": token})
    return 0


def cmd_ls(args) -> int:
    entries = _client(args).call("file.ls", args.path, args.pattern)
    if args.json:
        print(json.dumps({"path": args.path, "entries": entries}))
    else:
        for entry in entries:
            kind = "d" if entry["is_dir"] else "-"
            print(f"{kind} {entry['size']:>12} {entry['name']}")
    return 0


def cmd_grep(args) -> int:
    matches = _client(args).call("file.grep", args.target, args.regex)
    if args.json:
        print(json.dumps({"matches": matches}))
    else:
        for match in matches:
            print(f"{match['path']}:{match['line']}:{match['text']}")
    return 0


def cmd_md5(args) -> int:
    digest = _client(args).call("file.md5", args.path)
    emit(args, f"{digest}  {args.path}", {"path": args.path, "md5": digest})
    return 0


def cmd_get(args) -> int:
    client = _client(args)
    source = RpcFileSource(client)
    local = Path(args.local) if args.local else Path(Path(args.remote).name)
    journal = Journal.load(_journal_path(args))
    chunk = args.chunk_kib * 1024
    if args.remote in journal.entries:
        path = resume(source, journal, args.remote)
    else:
        path = download(source, args.remote, local, chunk_bytes=chunk, journal=journal)
    emit(args, f"downloaded {args.remote} -> {path}",
         {"remote": args.remote, "local": str(path), "bytes": path.stat().st_size})
    return 0


def cmd_submit(args) -> int:
    client = _client(args)
    executable = Path(args.exe).read_bytes()
    submit_file = Path(args.submit_file).read_bytes()
    job_id = client.call(
        "job.submit", args.name, executable, submit_file,
        Path(args.submit_file).name, args.inputs,
    )
    emit(args, job_id, {"job_id": job_id})
    return 0


def cmd_status(args) -> int:
    status = _client(args).call("job.status", args.job_id)
    emit(args, f"{status['job_id']}: {status['aggregate']} {status['runs']}", status)
    return 0


def cmd_watch(args) -> int:
    client = _client(args)
    last = None
    while True:
        status = client.call("job.status", args.job_id)
        if status["aggregate"] != last:
            last = status["aggregate"]
            if not args.json:
                print(f"{status['job_id']}: {last} {status['runs']}")
        if last in TERMINAL_STATES:
            if args.json:
                print(json.dumps(status))
            return 0
        time.sleep(args.poll_s)


def cmd_kill(args) -> int:
    _client(args).call("job.kill", args.job_id)
    emit(args, f"killed {args.job_id}", {"job_id": args.job_id, "killed": True})
    return 0


def cmd_outputs(args) -> int:
    outputs = _client(args).call("job.outputs", args.job_id)
    if args.json:
        print(json.dumps({"job_id": args.job_id, "outputs": outputs}))
    else:
        for run in outputs:
            for entry in run["files"]:
                print(f"run-{run['run']} {entry['size']:>12} {entry['md5']} {entry['name']}")
    return 0


def cmd_fetch(args) -> int:
    blob = _client(args).call("job.fetch", args.job_id, args.run_index, args.name, 0, 0,
                              binary=True)
    local = Path(args.local) if args.local else Path(args.name).name
    Path(local).write_bytes(blob)
    emit(args, f"fetched run-{args.run_index}/{args.name} -> {local} ({len(blob)} bytes)",
         {"job_id": args.job_id, "run": args.run_index, "name": args.name,
          "local": str(local), "bytes": len(blob)})
    return 0


def cmd_peers(args) -> int:
    peers = _client(args).call("peer.list")
    if args.json:
        print(json.dumps({"peers": peers}))
    else:
        for peer in peers:
            coefficient = peer.get("coefficient")
            shown = f"{coefficient:.1f}" if coefficient is not None else "-"
            fresh = "fresh" if peer.get("fresh") else "stale"
            print(f"{peer['peer_id']:<10} {shown:>12} {fresh:<6} {peer['url']}")
    return 0


COMMANDS = {
    "login": cmd_login,
    "ls": cmd_ls,
    "grep": cmd_grep,
    "md5": cmd_md5,
    "get": cmd_get,
    "submit": cmd_submit,
    "status": cmd_status,
    "watch": cmd_watch,
    "kill": cmd_kill,
    "outputs": cmd_outputs,
    "fetch": cmd_fetch,
    "peers": cmd_peers,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gridlet: {exc}", file=sys.stderr)
        return 2
    except Fault as exc:
        print(f"gridlet: remote fault {exc.code}: {exc}", file=sys.stderr)
        return 1
    except TransportError as exc:
        print(f"gridlet: transport error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"gridlet: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

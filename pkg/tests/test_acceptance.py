"""Acceptance suite: one test per shipped guarantee, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings.
"""

import functools
import hashlib
import itertools
import random
import subprocess
import sys
import time

import pytest

from gridlet import xrpc
from gridlet.auth import AclEntry, AclStore, Identity, authorize
from gridlet.broker import LastReport, PeerInfo, select_target
from gridlet.client import RpcClient, RpcFileSource, TransportError
from gridlet.executor import RUN_STATES
from gridlet.faults import NoFreshPeers
from gridlet.monitoring import LoadSample, WeightVector, load_coefficient
from gridlet.transfer import Journal, download, resume
from gridlet.worker import aggregate_status
from gridlet.xrpc import RpcCall

from conftest import ADMIN_CRED, build_stack, wait_until


def criterion(name, budget_s):
    """Wrap a test so it prints one [PASS]/[FAIL] line and honours its budget."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.monotonic()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] {name}")
                raise
            elapsed = time.monotonic() - start
            print(f"[PASS] {name} ({elapsed:.1f}s, budget {budget_s:.0f}s)")
            assert elapsed < budget_s, f"{name} exceeded its {budget_s}s budget"

        return wrapper

    return decorate


# ---------------------------------------------------------------------------
# shared single-worker stack for the criteria that need a live node
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def live(tmp_path_factory):
    stack = build_stack(tmp_path_factory.mktemp("acceptance"), n_workers=1)
    yield stack
    stack.stop()


@criterion("coefficient oracle", budget_s=5.0)
def test_coefficient_oracle():
    def oracle(sample, w):
        # independent literal transcription of the ranking formula
        cpu = sample.cpu_usage if sample.cpu_usage <= 99.9 else 99.9
        first = (1.0 - cpu / 100.0) ** -1 * sample.clock_rate
        second = (w[0] * sample.mem_usage + w[1] * sample.disk_io
                  + w[2] * sample.load1 + w[3] * sample.nprocs)
        return first + second

    rng = random.Random(20250809)
    for index in range(1000):
        sample = LoadSample(
            cpu_usage=rng.uniform(0, 100),
            clock_rate=rng.uniform(100, 4000),
            mem_usage=rng.uniform(0, 100),
            disk_io=rng.uniform(0, 500),
            load1=rng.uniform(0, 64),
            nprocs=rng.randint(0, 2000),
        )
        weights = tuple(rng.uniform(0, 5) for _ in range(4))
        ours = load_coefficient(sample, WeightVector(*weights))
        expected = oracle(sample, weights)
        assert abs(ours - expected) <= 1e-9 * max(1.0, abs(expected)), (sample, weights)

    # monotonicity on 1000 ordered pairs: busier host, larger coefficient
    for index in range(1000):
        cpu_lo = rng.uniform(0, 99.0)
        cpu_hi = rng.uniform(cpu_lo + 1e-6, 99.9)
        base = dict(clock_rate=rng.uniform(100, 4000), mem_usage=rng.uniform(0, 100),
                    disk_io=rng.uniform(0, 500), load1=rng.uniform(0, 64),
                    nprocs=rng.randint(0, 2000))
        lo = load_coefficient(LoadSample(cpu_usage=cpu_lo, **base))
        hi = load_coefficient(LoadSample(cpu_usage=cpu_hi, **base))
        assert lo < hi


@criterion("routing equivalence", budget_s=5.0)
def test_routing_equivalence():
    rng = random.Random(424242)
    now = 10_000.0
    window = 30.0
    checked = 0
    for index in range(500):
        peers = []
        for peer_index in range(rng.randint(1, 20)):
            info = PeerInfo(f"p{peer_index:02d}", f"http://p{peer_index:02d}")
            if rng.random() < 0.85:
                coefficient = rng.choice(
                    [rng.uniform(0, 10_000), float(rng.randint(0, 5))]  # force ties sometimes
                )
                age = rng.uniform(0, 90)
                info.last_report = LastReport(coefficient, int(now - age), received_at=now - age)
            peers.append(info)
        rng.shuffle(peers)

        fresh = [p for p in peers
                 if p.last_report and now - p.last_report.received_at <= window]
        if not fresh:
            with pytest.raises(NoFreshPeers):
                select_target(peers, now, window)
            continue
        best_id, best_coeff = None, None
        for p in fresh:  # brute-force argmin with documented tie-break
            c = p.last_report.coefficient
            if best_id is None or c < best_coeff or (c == best_coeff and p.peer_id < best_id):
                best_id, best_coeff = p.peer_id, c
        assert select_target(peers, now, window) == best_id
        checked += 1
    assert checked > 300  # the corpus actually exercised the selection path


@criterion("status aggregation", budget_s=5.0)
def test_status_aggregation_lattice():
    for combo in itertools.product(RUN_STATES, repeat=3):
        got = aggregate_status(combo)
        if all(s == "completed" for s in combo):
            expected = "completed"
        elif "killed" in combo:
            expected = "killed"
        elif "failed" in combo:
            expected = "failed"
        elif "running" in combo:
            expected = "running"
        else:
            expected = "queued"
        assert got == expected, combo


@criterion("acl semantics", budget_s=5.0)
def test_acl_semantics(tmp_path):
    alice = Identity(dn="/O=test/CN=alice", vos=frozenset({"cms"}))
    matching = {"dn-substring": "CN=alice", "vo": "cms"}
    non_matching = {"dn-substring": "CN=bob", "vo": "atlas"}
    scope = "file.read"

    # default-deny
    assert authorize([], alice, scope) is False

    # single-entry exhaustive table
    for kind in ("dn-substring", "vo"):
        for effect in ("allow", "deny"):
            for matches in (True, False):
                principal = (matching if matches else non_matching)[kind]
                entry = AclEntry(1, kind, effect, principal, scope)
                got = authorize([entry], alice, scope)
                expected = effect == "allow" and matches
                assert got is expected, (kind, effect, matches)

    # deny-overrides: matching deny beats any combination of allows
    allow_entries = [
        AclEntry(1, "dn-substring", "allow", "CN=alice", scope),
        AclEntry(2, "vo", "allow", "cms", "file"),
    ]
    for kind in ("dn-substring", "vo"):
        deny = AclEntry(3, kind, "deny", matching[kind], scope)
        assert authorize(allow_entries + [deny], alice, scope) is False
        assert authorize([deny] + allow_entries, alice, scope) is False

    # persistence round-trip across a real process restart
    store_path = tmp_path / "acl.tsv"
    script = (
        "from gridlet.auth import AclStore; "
        f"store = AclStore({str(store_path)!r}); "
        "store.add('dn-substring', 'allow', '/O=test', 'file'); "
        "dropped = store.add('vo', 'deny', 'atlas', 'job'); "
        "store.remove(dropped)"
    )
    subprocess.run([sys.executable, "-c", script], check=True, timeout=30)
    reloaded = AclStore(store_path)
    assert [(e.kind, e.effect, e.principal, e.scope) for e in reloaded.entries()] == [
        ("dn-substring", "allow", "/O=test", "file")
    ]
    assert reloaded.authorize(alice, "file.read") is True
    assert reloaded.authorize(alice, "job.submit") is False


def random_rpc_value(rng, depth=0):
    choices = ["str", "int", "double", "bool", "bytes"]
    if depth < 3:
        choices += ["list", "dict", "list", "dict"]
    kind = rng.choice(choices)
    if kind == "str":
        alphabet = "abc XYZ123 λπ≤≥ \t\n<>&\"'"
        return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
    if kind == "int":
        return rng.randint(-(2**31), 2**31 - 1)
    if kind == "double":
        return rng.choice([rng.uniform(-1e12, 1e12), rng.uniform(-1, 1), 0.0, 963.7])
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "bytes":
        return rng.randbytes(rng.randint(0, 32))
    if kind == "list":
        return [random_rpc_value(rng, depth + 1) for _ in range(rng.randint(0, 4))]
    keys = [f"k{index}_{rng.randint(0, 99)}" for index in range(rng.randint(0, 4))]
    return {key: random_rpc_value(rng, depth + 1) for key in keys}


@criterion("rpc round-trip", budget_s=5.0)
def test_rpc_round_trip(live):
    rng = random.Random(97)
    for index in range(1000):
        value = random_rpc_value(rng)
        assert xrpc.decode_response(xrpc.encode_success(value)) == value
        call = RpcCall("echo.ping", [value])
        decoded = xrpc.decode_call(xrpc.encode_call(call))
        assert decoded.params == [value]

    # 1 KiB known file through real binary framing
    payload = bytes((index * 37 + 11) % 256 for index in range(1024))
    pub = live.workers[0].node.worker.files.root
    (pub / "frame.bin").write_bytes(payload)
    client = RpcClient(live.workers[0].url, credential=ADMIN_CRED)
    fetched = client.call("file.read", "frame.bin", 0, 0, binary=True)
    assert fetched == payload


@criterion("staging fidelity", budget_s=5.0)
def test_staging_fidelity(live):
    worker = live.workers[0]
    pub = live.broker.node.worker.files.root
    inputs = {}
    rng = random.Random(7)
    for name in ("alpha.dat", "beta.dat", "gamma.dat"):
        inputs[name] = rng.randbytes(rng.randint(512, 4096))
        (pub / name).write_bytes(inputs[name])

    executable = b"#!/bin/sh\nsleep 2\n"
    submit_file = b"executable=hold.sh\nqueue\n"
    client = RpcClient(live.broker.url, credential=ADMIN_CRED)
    job_id = client.call("job.submit", "fidelity", executable, submit_file,
                         "hold.sub", list(inputs))
    try:
        job_dir = worker.node.worker.staging_root / job_id
        run_dirs = sorted(d for d in job_dir.iterdir() if d.is_dir())
        assert [d.name for d in run_dirs] == ["run-0", "run-1", "run-2"]
        for index, (input_name, input_bytes) in enumerate(inputs.items()):
            run_dir = job_dir / f"run-{index}"
            found = sorted(p.name for p in run_dir.iterdir())
            assert found == sorted(["hold.sh", "hold.sub", input_name]), run_dir
            assert (run_dir / "hold.sh").read_bytes() == executable
            assert (run_dir / "hold.sub").read_bytes() == submit_file
            assert (run_dir / input_name).read_bytes() == input_bytes
    finally:
        client.call("job.kill", job_id)


class InterruptedSource(RpcFileSource):
    """Counts payload bytes and injects failures at preset byte offsets."""

    def __init__(self, client, cut_offsets):
        super().__init__(client)
        self.cuts = sorted(cut_offsets, reverse=True)
        self.payload_bytes = 0

    def read(self, remote_path, offset, length):
        blob = super().read(remote_path, offset, length)
        self.payload_bytes += len(blob)
        if self.cuts and self.payload_bytes >= self.cuts[-1]:
            self.cuts.pop()
            raise ConnectionError("injected interruption")
        return blob


@criterion("resumable transfer", budget_s=30.0)
def test_resumable_transfer(live, tmp_path):
    size = 10 * 1024 * 1024
    chunk = 64 * 1024
    interruptions = 20
    rng = random.Random(31337)
    data = rng.randbytes(size)
    pub = live.workers[0].node.worker.files.root
    (pub / "dataset.bin").write_bytes(data)

    client = RpcClient(live.workers[0].url, credential=ADMIN_CRED)
    server_md5 = client.call("file.md5", "dataset.bin")
    # interruptions measured in cumulative payload bytes; resumes refetch, so
    # spread the cut points over the whole (size + waste) range
    cut_offsets = sorted(rng.sample(range(1, size), interruptions))
    source = InterruptedSource(client, cut_offsets)
    journal = Journal(tmp_path / "journal")
    local = tmp_path / "dataset.bin"

    attempts = 0
    result = None
    while result is None:
        attempts += 1
        assert attempts <= interruptions + 2, "more interruptions than injected"
        try:
            if "dataset.bin" in journal.entries:
                result = resume(source, journal, "dataset.bin")
            else:
                result = download(source, "dataset.bin", local,
                                  chunk_bytes=chunk, journal=journal)
        except ConnectionError:
            continue

    local_bytes = result.read_bytes()
    assert hashlib.md5(local_bytes).hexdigest() == server_md5
    assert local_bytes == data
    assert journal.entries == {}
    assert source.payload_bytes <= size + interruptions * chunk, (
        f"wire bytes {source.payload_bytes} exceed {size} + {interruptions}x{chunk}"
    )


@criterion("broker failover", budget_s=30.0)
def test_broker_failover(tmp_path):
    stack = build_stack(tmp_path, n_workers=2, monitor_interval_s=0.5, failover_k=3,
                        probe_timeout_s=0.75)
    try:
        client = RpcClient(stack.broker.url, credential=ADMIN_CRED)
        (stack.broker.node.worker.files.root / "pre.dat").write_bytes(b"pre-failover")
        job_id = client.call("job.submit", "pre", b"#!/bin/sh\ntrue\n",
                             b"executable=p.sh\nqueue\n", "p.sub", ["pre.dat"])
        wait_until(lambda: client.call("job.status", job_id)["aggregate"] == "completed")

        killed_at = time.monotonic()
        stack.broker.kill()

        def leaders():
            found = []
            for worker in stack.workers:
                try:
                    info = RpcClient(worker.url, timeout=1.0).call("broker.role")
                except TransportError:
                    continue
                if info["role"] == "leader":
                    found.append(info["peer_id"])
            return found

        wait_until(lambda: leaders() == ["w1"], timeout=6.0, interval=0.05,
                   message="exactly one new leader")
        takeover = time.monotonic() - killed_at
        assert takeover <= 4.0, f"takeover took {takeover:.2f}s"
        assert leaders() == ["w1"]

        new_leader = RpcClient(stack.workers[0].url, credential=ADMIN_CRED)
        assert new_leader.call("job.status", job_id)["aggregate"] == "completed"

        (stack.workers[0].node.worker.files.root / "post.dat").write_bytes(b"post")
        wait_until(lambda: any(p.get("fresh") for p in new_leader.call("peer.list")),
                   message="reports at the new leader")
        new_job = new_leader.call("job.submit", "post", b"#!/bin/sh\ntrue\n",
                                  b"executable=q.sh\nqueue\n", "q.sub", ["post.dat"])
        wait_until(lambda: new_leader.call("job.status", new_job)["aggregate"] == "completed")
    finally:
        stack.stop()


SLEEP_JOB = b"#!/bin/sh\nsleep 4\n"
SLEEP_SUBMIT = b"executable=crunch.sh\nqueue\n"


def run_throughput(tmp_path, n_workers, payload):
    stack = build_stack(tmp_path, n_workers=n_workers, monitor_interval_s=0.25)
    try:
        pub = stack.broker.node.worker.files.root
        (pub / "event.dat").write_bytes(payload)
        client = RpcClient(stack.broker.url, credential=ADMIN_CRED)

        def coefficients():
            return {p["peer_id"]: p.get("coefficient") for p in client.call("peer.list")}

        start = time.monotonic()
        job_ids = []
        for index in range(15):
            before = coefficients()
            job_id = client.call("job.submit", f"evt-{index}", SLEEP_JOB, SLEEP_SUBMIT,
                                 "crunch.sub", ["event.dat"])
            job_ids.append(job_id)
            owner = job_id.split("-")[1]
            # wait (bounded) until the owner's next report reflects the new run,
            # so each routing decision sees live queue depths
            deadline = time.monotonic() + 2.0
            while time.monotonic() < deadline:
                now = coefficients().get(owner)
                if now is not None and before.get(owner) is not None and now > before[owner]:
                    break
                time.sleep(0.02)

        def all_done():
            return all(client.call("job.status", j)["aggregate"] == "completed"
                       for j in job_ids)

        wait_until(all_done, timeout=120.0, interval=0.2, message="all jobs completed")
        elapsed = time.monotonic() - start
        owners = sorted(j.split("-")[1] for j in job_ids)
        return elapsed, owners
    finally:
        stack.stop()


@criterion("throughput scaling", budget_s=120.0)
def test_throughput_scaling(tmp_path):
    payload = random.Random(1).randbytes(1 << 20)  # one 1 MiB event file

    four_worker_s, owners4 = run_throughput(tmp_path / "four", 4, payload)
    single_worker_s, owners1 = run_throughput(tmp_path / "one", 1, payload)

    print(f"  15 jobs x 4s sleep: 4 workers {four_worker_s:.1f}s "
          f"(spread {sorted(set(owners4))}), 1 worker {single_worker_s:.1f}s")
    assert four_worker_s <= 25.0, f"4-worker wall clock {four_worker_s:.1f}s"
    assert single_worker_s >= 60.0, f"1-worker wall clock {single_worker_s:.1f}s"
    speedup = single_worker_s / four_worker_s
    assert speedup >= 2.8, f"speedup {speedup:.2f}"
    assert len(set(owners4)) >= 3  # the work genuinely spread across the farm

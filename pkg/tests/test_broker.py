"""Broker routing, index, replication, and election logic tests (no HTTP)."""

import random
import threading

import pytest

from gridlet.broker import (
    LEADER,
    STANDBY,
    BrokerCore,
    FailoverMonitor,
    LastReport,
    PeerInfo,
    select_target,
)
from gridlet.faults import (
    Fault,
    ForwardFailed,
    NoFreshPeers,
    NotLeader,
    OwnerUnreachable,
    UnknownJob,
    UnknownPeer,
)

REQUEST = {
    "job_name": "t",
    "executable": b"#!/bin/sh\ntrue\n",
    "submit_file": b"executable=job.sh\nqueue\n",
    "submit_file_name": "job.sub",
    "input_file_names": ["a.dat"],
}


class PeerNet:
    """In-process stand-in for the RPC fabric between nodes."""

    def __init__(self):
        self.handlers = {}
        self.calls = []
        self.down = set()

    def add(self, url, handler=None):
        self.handlers[url] = handler or (lambda method, *params: True)

    def __call__(self, url, method, *params):
        self.calls.append((url, method, params))
        if url in self.down or url not in self.handlers:
            raise ConnectionError(f"{url} unreachable")
        return self.handlers[url](method, *params)


def make_broker(tmp_path, net, peer_id="b0", is_leader=True, freshness=30.0, name="broker"):
    return BrokerCore(
        peer_id=peer_id,
        self_url=f"http://{peer_id}",
        data_dir=tmp_path / name,
        call_peer=net,
        freshness_window=freshness,
        is_leader=is_leader,
    )


def peer(peer_id, coefficient=None, timestamp=0):
    info = PeerInfo(peer_id, f"http://{peer_id}")
    if coefficient is not None:
        info.last_report = LastReport(coefficient, int(timestamp), received_at=float(timestamp))
    return info


class TestSelectTarget:
    def test_unique_minimum(self):
        peers = [peer("A", 100, 10), peer("B", 50, 10), peer("C", 75, 10)]
        assert select_target(peers, now=11, freshness_window=30) == "B"

    def test_lexicographic_tie_break(self):
        peers = [peer("B", 50, 10), peer("A", 50, 10)]
        assert select_target(peers, now=11, freshness_window=30) == "A"

    def test_all_stale(self):
        peers = [peer("A", 10, timestamp=0)]
        with pytest.raises(NoFreshPeers):
            select_target(peers, now=100, freshness_window=30)

    def test_unreported_peers_excluded(self):
        peers = [peer("A"), peer("B", 5, 10)]
        assert select_target(peers, now=11, freshness_window=30) == "B"

    def test_matches_brute_force_oracle(self):
        rng = random.Random(1234)
        now = 1000.0
        window = 30.0
        for _ in range(500):
            peers = []
            for index in range(rng.randint(1, 20)):
                p = peer(f"p{index:02d}")
                if rng.random() < 0.9:
                    coefficient = rng.choice([rng.uniform(0, 5000), rng.choice([100.0, 50.0])])
                    age = rng.uniform(0, 90)
                    p.last_report = LastReport(coefficient, int(now - age), received_at=now - age)
                peers.append(p)
            rng.shuffle(peers)

            fresh = [p for p in peers
                     if p.last_report and now - p.last_report.received_at <= window]
            if not fresh:
                with pytest.raises(NoFreshPeers):
                    select_target(peers, now, window)
                continue
            best = None
            for p in fresh:  # explicit scan, ties to smallest id
                if (best is None
                        or p.last_report.coefficient < best.last_report.coefficient
                        or (p.last_report.coefficient == best.last_report.coefficient
                            and p.peer_id < best.peer_id)):
                    best = p
            assert select_target(peers, now, window) == best.peer_id


class TestRegistryAndReports:
    def test_register_broadcasts_to_all(self, tmp_path):
        net = PeerNet()
        net.add("http://w1")
        net.add("http://w2")
        broker = make_broker(tmp_path, net)
        broker.register_peer("w1", "http://w1")
        net.calls.clear()
        snapshot = broker.register_peer("w2", "http://w2")
        assert [e["peer_id"] for e in snapshot] == ["w1", "w2"]
        synced = {(url, method) for url, method, _ in net.calls}
        assert ("http://w1", "broker.sync") in synced
        assert ("http://w2", "broker.sync") in synced

    def test_reregister_updates_url(self, tmp_path):
        net = PeerNet()
        broker = make_broker(tmp_path, net)
        broker.register_peer("w1", "http://w1")
        snapshot = broker.register_peer("w1", "http://w1-moved")
        assert len(snapshot) == 1
        assert snapshot[0]["url"] == "http://w1-moved"

    def test_out_of_order_reports(self, tmp_path):
        broker = make_broker(tmp_path, PeerNet())
        broker.register_peer("w1", "http://w1")
        broker.ingest_report("http://w1", 200.0, timestamp=20, sample={})
        broker.ingest_report("http://w1", 100.0, timestamp=10, sample={})
        report = broker.registry["w1"].last_report
        assert (report.coefficient, report.timestamp) == (200.0, 20)

    def test_unknown_peer_report(self, tmp_path):
        broker = make_broker(tmp_path, PeerNet())
        with pytest.raises(UnknownPeer):
            broker.ingest_report("http://ghost", 1.0, 1, {})

    def test_concurrent_reports_keep_newest_per_peer(self, tmp_path):
        broker = make_broker(tmp_path, PeerNet())
        for index in range(10):
            broker.register_peer(f"w{index}", f"http://w{index}")
        rng = random.Random(5)
        batches = []
        for index in range(10):
            timestamps = rng.sample(range(1, 1000), 10)
            batches.extend((f"http://w{index}", float(t), t) for t in timestamps)
        rng.shuffle(batches)

        def deliver(chunk):
            for url, coefficient, timestamp in chunk:
                broker.ingest_report(url, coefficient, timestamp, {})

        threads = [threading.Thread(target=deliver, args=(batches[i::8],)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for index in range(10):
            last = broker.registry[f"w{index}"].last_report
            expected = max(t for url, _, t in batches if url == f"http://w{index}")
            assert last.timestamp == expected


class TestSubmit:
    def setup_net(self, tmp_path, accepted):
        net = PeerNet()
        for worker in ("w1", "w2"):
            def handler(method, *params, _worker=worker):
                if method == "job.accept":
                    accepted.append((_worker, params[1]))
                return True
            net.add(f"http://{worker}", handler)
        broker = make_broker(tmp_path, net)
        broker.register_peer("w1", "http://w1")
        broker.register_peer("w2", "http://w2")
        return net, broker

    def test_single_peer_gets_job_with_sequential_id(self, tmp_path):
        accepted = []
        net = PeerNet()
        net.add("http://w1", lambda method, *params: accepted.append(params[1]) or True)
        broker = make_broker(tmp_path, net)
        broker.register_peer("w1", "http://w1")
        broker.ingest_report("http://w1", 100.0, int(broker.clock()), {})
        assert broker.submit(REQUEST, "/O=test/CN=alice") == "J-w1-1"
        assert broker.submit(REQUEST, "/O=test/CN=alice") == "J-w1-2"
        assert accepted == ["J-w1-1", "J-w1-2"]

    def test_routes_to_least_loaded(self, tmp_path):
        accepted = []
        net, broker = self.setup_net(tmp_path, accepted)
        now = int(broker.clock())
        broker.ingest_report("http://w1", 900.0, now, {})
        broker.ingest_report("http://w2", 100.0, now, {})
        job_id = broker.submit(REQUEST, "/O=dn")
        assert accepted == [("w2", job_id)]
        assert job_id.startswith("J-w2-")

    def test_no_fresh_peers(self, tmp_path):
        net, broker = self.setup_net(tmp_path, [])
        with pytest.raises(NoFreshPeers):
            broker.submit(REQUEST, "/O=dn")

    def test_forward_failure_leaves_no_index_entry(self, tmp_path):
        accepted = []
        net, broker = self.setup_net(tmp_path, accepted)
        now = int(broker.clock())
        broker.ingest_report("http://w1", 10.0, now, {})
        net.down.add("http://w1")
        with pytest.raises(ForwardFailed):
            broker.submit(REQUEST, "/O=dn")
        assert broker.job_index == {}
        net.down.clear()
        job_id = broker.submit(REQUEST, "/O=dn")  # client retry succeeds
        assert job_id in broker.job_index

    def test_standby_refuses_submissions(self, tmp_path):
        broker = make_broker(tmp_path, PeerNet(), is_leader=False)
        with pytest.raises(NotLeader):
            broker.submit(REQUEST, "/O=dn")

    def test_index_persisted_across_restart(self, tmp_path):
        net = PeerNet()
        net.add("http://w1")
        broker = make_broker(tmp_path, net, name="same")
        broker.register_peer("w1", "http://w1")
        broker.ingest_report("http://w1", 1.0, int(broker.clock()), {})
        job_id = broker.submit(REQUEST, "/O=dn")
        reborn = make_broker(tmp_path, net, name="same")
        assert job_id in reborn.job_index
        assert reborn.job_index[job_id].owner_peer == "w1"
        # sequence resumes after the persisted entries
        reborn.ingest_report("http://w1", 1.0, int(reborn.clock()), {})
        assert reborn.submit(REQUEST, "/O=dn") == "J-w1-2"


class TestProxy:
    def test_passthrough(self, tmp_path):
        net = PeerNet()
        net.add("http://w1", lambda method, *params: {"aggregate": "completed", "echo": params})
        broker = make_broker(tmp_path, net)
        broker.register_peer("w1", "http://w1")
        broker.ingest_report("http://w1", 1.0, int(broker.clock()), {})
        job_id = broker.submit(REQUEST, "/O=dn")
        result = broker.proxy_job_call(job_id, "job.status")
        assert result["aggregate"] == "completed"

    def test_unknown_job(self, tmp_path):
        broker = make_broker(tmp_path, PeerNet())
        with pytest.raises(UnknownJob):
            broker.proxy_job_call("J-x-1", "job.status")

    def test_owner_down(self, tmp_path):
        net = PeerNet()
        net.add("http://w1")
        broker = make_broker(tmp_path, net)
        broker.register_peer("w1", "http://w1")
        broker.ingest_report("http://w1", 1.0, int(broker.clock()), {})
        job_id = broker.submit(REQUEST, "/O=dn")
        net.down.add("http://w1")
        with pytest.raises(OwnerUnreachable) as exc_info:
            broker.proxy_job_call(job_id, "job.status")
        assert "w1" in str(exc_info.value)

    def test_remote_fault_passes_through(self, tmp_path):
        def handler(method, *params):
            if method == "job.status":
                raise UnknownJob("gone on the worker")
            return True

        net = PeerNet()
        net.add("http://w1", handler)
        broker = make_broker(tmp_path, net)
        broker.register_peer("w1", "http://w1")
        broker.ingest_report("http://w1", 1.0, int(broker.clock()), {})
        job_id = broker.submit(REQUEST, "/O=dn")
        with pytest.raises(UnknownJob):
            broker.proxy_job_call(job_id, "job.status")


class TestReplicationAndElection:
    def two_node_cluster(self, tmp_path):
        net = PeerNet()
        leader = make_broker(tmp_path, net, peer_id="b0", name="b0")
        w1 = make_broker(tmp_path, net, peer_id="w1", is_leader=False, name="w1")
        w2 = make_broker(tmp_path, net, peer_id="w2", is_leader=False, name="w2")

        def route(target):
            def handler(method, *params):
                if method == "broker.sync":
                    target.apply_sync(params[0])
                elif method == "broker.announce":
                    target.handle_announce(params[0], params[1])
                return True
            return handler

        net.add("http://w1", route(w1))
        net.add("http://w2", route(w2))
        net.add("http://b0", route(leader))
        leader.register_peer("w1", "http://w1")
        leader.register_peer("w2", "http://w2")
        return net, leader, w1, w2

    def test_sync_replicates_registry_and_jobs(self, tmp_path):
        net, leader, w1, w2 = self.two_node_cluster(tmp_path)
        leader.ingest_report("http://w2", 1.0, int(leader.clock()), {})
        job_id = leader.submit(REQUEST, "/O=dn")
        assert set(w1.registry) == {"w1", "w2"}
        assert job_id in w1.job_index and job_id in w2.job_index

    def test_election_smallest_live_peer_wins(self, tmp_path):
        net, leader, w1, w2 = self.two_node_cluster(tmp_path)
        leader.ingest_report("http://w2", 1.0, int(leader.clock()), {})
        job_id = leader.submit(REQUEST, "/O=dn")
        net.down.add("http://b0")

        probe = lambda url: url not in net.down and url in net.handlers
        monitor = FailoverMonitor(w1, probe, k=3)
        for _ in range(3):
            monitor.on_tick(False)
        assert w1.role == LEADER
        assert w1.epoch == 1
        assert w2.role == STANDBY and w2.leader_url == "http://w1"
        # replicated index survives the takeover
        assert w1.job_index[job_id].owner_peer == "w2"

    def test_larger_peer_defers(self, tmp_path):
        net, leader, w1, w2 = self.two_node_cluster(tmp_path)
        net.down.add("http://b0")
        probe = lambda url: url not in net.down and url in net.handlers
        monitor = FailoverMonitor(w2, probe, k=3)
        for _ in range(3):
            monitor.on_tick(False)
        assert w2.role == STANDBY  # w1 is alive and smaller

    def test_failures_below_k_do_not_elect(self, tmp_path):
        net, leader, w1, w2 = self.two_node_cluster(tmp_path)
        net.down.add("http://b0")
        probe = lambda url: url not in net.down
        monitor = FailoverMonitor(w1, probe, k=3)
        monitor.on_tick(False)
        monitor.on_tick(False)
        assert w1.role == STANDBY
        monitor.on_tick(True)
        assert monitor.consecutive_failures == 0

    def test_probe_success_resets_counter(self, tmp_path):
        net, leader, w1, w2 = self.two_node_cluster(tmp_path)
        probe = lambda url: True  # leader reachable directly
        monitor = FailoverMonitor(w1, probe, k=3)
        for _ in range(5):
            monitor.on_tick(False)
        assert w1.role == STANDBY

    def test_old_leader_demotes_on_higher_epoch(self, tmp_path):
        net, leader, w1, w2 = self.two_node_cluster(tmp_path)
        net.down.add("http://b0")
        probe = lambda url: url not in net.down
        FailoverMonitor(w1, probe, k=1).on_tick(False)
        assert w1.role == LEADER
        # old broker comes back and hears the newer announce
        net.down.discard("http://b0")
        assert leader.role == LEADER  # still thinks it leads
        leader.handle_announce("http://w1", w1.epoch)
        assert leader.role == STANDBY
        assert leader.leader_url == "http://w1"

    def test_old_leader_demotes_on_sync(self, tmp_path):
        net, leader, w1, w2 = self.two_node_cluster(tmp_path)
        net.down.add("http://b0")
        FailoverMonitor(w1, lambda url: url not in net.down, k=1).on_tick(False)
        net.down.discard("http://b0")
        leader.apply_sync(w1.state_snapshot())
        assert leader.role == STANDBY

    def test_election_deterministic_function_of_live_set(self, tmp_path):
        rng = random.Random(77)
        for _ in range(50):
            ids = sorted(rng.sample([f"n{c:02d}" for c in range(30)], rng.randint(2, 8)))
            live = set(rng.sample(ids, rng.randint(1, len(ids))))
            expected = min(live)
            # any live standby computes the same winner
            for viewpoint in live:
                candidates = [i for i in ids if i == viewpoint or i in live]
                assert min(candidates) == expected

    def test_stale_announce_ignored(self, tmp_path):
        net, leader, w1, w2 = self.two_node_cluster(tmp_path)
        FailoverMonitor(w1, lambda url: url != "http://b0", k=1).on_tick(False)
        assert w1.epoch == 1
        info = w1.handle_announce("http://b0", 0)
        assert info["role"] == LEADER and info["leader_url"] == "http://w1"

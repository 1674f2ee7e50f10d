"""Graph IR core: upsert merging, queries, canonical serialization."""

from __future__ import annotations

import ipaddress
import json
import random

import pytest

from netcarta import ir
from netcarta.ir import (
    Edge,
    Endpoint,
    Experiment,
    IntegrityError,
    NetworkNode,
    Observation,
    ObservationError,
    ParseError,
    QueryError,
)


def oracle_canonical_subnet(text: str) -> str:
    """Mask arithmetic on raw integers, independent of ipaddress networks."""
    addr_s, prefix_s = text.split("/")
    prefix = int(prefix_s)
    addr = 0
    for part in addr_s.split("."):
        addr = (addr << 8) | int(part)
    mask = ((1 << prefix) - 1) << (32 - prefix) if prefix else 0
    masked = addr & mask
    octets = [(masked >> s) & 0xFF for s in (24, 16, 8, 0)]
    return ".".join(str(o) for o in octets) + f"/{prefix}"


class TestCanonicalSubnet:
    def test_host_bits_zeroed(self):
        assert ir.canonical_subnet("10.0.0.5/24") == "10.0.0.0/24"
        assert ir.canonical_subnet("192.168.1.130/25") == "192.168.1.128/25"

    def test_already_canonical(self):
        assert ir.canonical_subnet("10.0.0.0/8") == "10.0.0.0/8"

    def test_random_against_mask_arithmetic(self):
        rng = random.Random(0xC1D4)
        for _ in range(300):
            addr = rng.randrange(1 << 32)
            prefix = rng.randrange(0, 33)
            text = str(ipaddress.IPv4Address(addr)) + f"/{prefix}"
            assert ir.canonical_subnet(text) == oracle_canonical_subnet(text)

    def test_rejects_garbage(self):
        for bad in ("not-a-cidr", "10.0.0.0/33", "300.0.0.1/8", ""):
            with pytest.raises(ParseError) as err:
                ir.canonical_subnet(bad)
            assert bad in str(err.value) or "bad CIDR" in str(err.value)

    def test_rejects_ipv6(self):
        with pytest.raises(ParseError):
            ir.canonical_subnet("fe80::/64")


class TestIdAllocation:
    def test_monotonic_across_kinds(self):
        exp = ir.new_experiment()
        a = ir.allocate_id(exp)
        net = ir.network_for_subnet(exp, "10.0.0.0/24")
        b = ir.allocate_id(exp)
        assert a < net < b

    def test_never_reuses_after_delete(self):
        exp = ir.new_experiment()
        nid = ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=24))
        ir.delete_endpoint(exp, nid)
        nid2 = ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.2", prefix_len=24))
        assert nid2 > nid


class TestUpsert:
    def test_creates_endpoint_network_edge(self):
        exp = ir.new_experiment()
        nid = ir.upsert_endpoint(
            exp,
            Observation(source="t", mac="aa:bb:cc:dd:ee:ff", ip="10.0.0.1", prefix_len=24),
        )
        ep = ir.find_endpoint(exp, nid)
        assert ep is not None
        assert len(ep.edges) == 1
        edge = ep.edges[0]
        assert edge.d["mac"] == "aa:bb:cc:dd:ee:ff"
        assert edge.d["ip"] == "10.0.0.1/24"
        net = ir.find_network(exp, edge.n)
        assert net.d["subnet"] == "10.0.0.0/24"

    def test_mac_match_beats_ip_match(self):
        exp = ir.new_experiment()
        a = ir.upsert_endpoint(
            exp, Observation(source="t", mac="aa:00:00:00:00:01", ip="10.0.0.1", prefix_len=24)
        )
        b = ir.upsert_endpoint(
            exp, Observation(source="t", mac="aa:00:00:00:00:02", ip="10.0.0.2", prefix_len=24)
        )
        # Same mac as a, same ip as b: must merge into a.
        merged = ir.upsert_endpoint(
            exp, Observation(source="t", mac="aa:00:00:00:00:01", ip="10.0.0.2", prefix_len=24)
        )
        assert merged == a and merged != b

    def test_idempotent(self):
        exp = ir.new_experiment()
        obs = Observation(
            source="t",
            mac="aa:bb:cc:dd:ee:ff",
            ip="10.0.0.1",
            prefix_len=24,
            hostname="box",
            os="linux",
            ports=[22, 80],
        )
        first = ir.upsert_endpoint(exp, obs)
        before = ir.serialize(exp)
        second = ir.upsert_endpoint(exp, obs)
        assert first == second
        assert ir.serialize(exp) == before

    def test_last_writer_wins_scalars(self):
        exp = ir.new_experiment()
        ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=24, hostname="old", os="linux"))
        nid = ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", hostname="new"))
        ep = ir.find_endpoint(exp, nid)
        assert ep.d["hostname"] == "new"
        assert ep.d["os"] == "linux"

    def test_ports_union_numeric_order(self):
        exp = ir.new_experiment()
        ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=24, ports=[443, 22]))
        nid = ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", ports=[80, 22]))
        ep = ir.find_endpoint(exp, nid)
        assert ep.d["ports"] == "22,80,443"

    def test_services_union_sorted(self):
        exp = ir.new_experiment()
        ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=24, services=["_ssh._tcp"]))
        nid = ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", services=["_ipp._tcp", "_ssh._tcp"]))
        ep = ir.find_endpoint(exp, nid)
        assert ep.d["services"] == "_ipp._tcp,_ssh._tcp"

    def test_follow_up_without_prefix_reuses_known_subnet(self):
        exp = ir.new_experiment()
        ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=24))
        nid = ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.9"))
        ep = ir.find_endpoint(exp, nid)
        assert ep.edges[0].d["ip"] == "10.0.0.9/24"
        assert len(exp.networks) == 1

    def test_longest_prefix_containment(self):
        exp = ir.new_experiment()
        wide = ir.network_for_subnet(exp, "10.0.0.0/8")
        narrow = ir.network_for_subnet(exp, "10.1.0.0/16")
        nid = ir.upsert_endpoint(exp, Observation(source="t", ip="10.1.2.3"))
        ep = ir.find_endpoint(exp, nid)
        assert ep.edges[0].n == narrow
        nid2 = ir.upsert_endpoint(exp, Observation(source="t", ip="10.9.9.9"))
        assert ir.find_endpoint(exp, nid2).edges[0].n == wide

    def test_unknown_network_sentinel_reused(self):
        exp = ir.new_experiment()
        a = ir.upsert_endpoint(exp, Observation(source="t", mac="aa:00:00:00:00:01"))
        b = ir.upsert_endpoint(exp, Observation(source="t", mac="aa:00:00:00:00:02"))
        assert a != b
        nets = {e.n for ep in exp.endpoints for e in ep.edges}
        assert len(nets) == 1
        sentinel = ir.find_network(exp, nets.pop())
        assert sentinel.d["name"] == "unknown"
        assert exp.config["unknown_network"] == str(sentinel.nid)

    def test_hint_overrides_containment(self):
        exp = ir.new_experiment()
        ir.network_for_subnet(exp, "10.0.0.0/8")
        hinted = ir.upsert_endpoint(
            exp, Observation(source="t", ip="10.0.0.1", network_hint="10.0.0.0/24")
        )
        ep = ir.find_endpoint(exp, hinted)
        net = ir.find_network(exp, ep.edges[0].n)
        assert net.d["subnet"] == "10.0.0.0/24"

    def test_explicit_subnet_moves_existing_edge(self):
        exp = ir.new_experiment()
        nid = ir.upsert_endpoint(exp, Observation(source="t", mac="aa:00:00:00:00:01"))
        ir.upsert_endpoint(
            exp,
            Observation(source="t", mac="aa:00:00:00:00:01", ip="10.0.0.1", prefix_len=24),
        )
        ep = ir.find_endpoint(exp, nid)
        assert len(ep.edges) == 1
        net = ir.find_network(exp, ep.edges[0].n)
        assert net.d["subnet"] == "10.0.0.0/24"

    def test_multihomed_gets_two_edges(self):
        exp = ir.new_experiment()
        nid = ir.upsert_endpoint(
            exp, Observation(source="t", mac="aa:00:00:00:00:01", ip="10.0.0.1", prefix_len=24)
        )
        same = ir.upsert_endpoint(
            exp,
            Observation(source="t", mac="aa:00:00:00:00:09", ip="192.168.0.1", prefix_len=24,
                        hostname="gw"),
        )
        assert same != nid  # different mac, different ip: distinct endpoint
        # Now merge the second interface onto the first by hostname-free ip+mac pair.
        ep = ir.find_endpoint(exp, nid)
        ep.edges.append(Edge(n=ep.edges[0].n, d={}))
        assert len(ep.edges) == 2

    def test_rejects_empty_observation(self):
        exp = ir.new_experiment()
        with pytest.raises(ObservationError):
            ir.upsert_endpoint(exp, Observation(source="t"))

    def test_rejects_bad_mac_and_ip(self):
        exp = ir.new_experiment()
        with pytest.raises(ObservationError):
            ir.upsert_endpoint(exp, Observation(source="t", mac="AA:BB:CC:DD:EE:FF"))
        with pytest.raises(ObservationError):
            ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.256"))
        with pytest.raises(ObservationError):
            ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=40))
        with pytest.raises(ObservationError):
            ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", ports=[0]))

    def test_rejecting_does_not_mutate(self):
        exp = ir.new_experiment()
        ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=24))
        before = ir.serialize(exp)
        with pytest.raises(ObservationError):
            ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.2", prefix_len=99))
        assert ir.serialize(exp) == before

    def test_no_duplicate_edge_per_network_ip(self):
        exp = ir.new_experiment()
        for _ in range(5):
            nid = ir.upsert_endpoint(
                exp,
                Observation(source="t", mac="aa:00:00:00:00:01", ip="10.0.0.1", prefix_len=24),
            )
        ep = ir.find_endpoint(exp, nid)
        assert len(ep.edges) == 1


class TestQueries:
    def _populate(self, seed: int) -> Experiment:
        rng = random.Random(seed)
        exp = ir.new_experiment()
        oses = ["linux", "windows", "macos", "android", ""]
        for i in range(200):
            obs = Observation(
                source="t",
                mac=f"aa:00:00:00:{i // 256:02x}:{i % 256:02x}",
                ip=f"10.{rng.randrange(4)}.0.{1 + i % 250}",
                prefix_len=16,
                hostname=f"host-{i}" if rng.random() < 0.8 else None,
                os=rng.choice(oses) or None,
            )
            ir.upsert_endpoint(exp, obs)
        return exp

    def test_against_linear_scan(self):
        exp = self._populate(7)
        for query in ("os=linux", "hostname=host-17", "edge.ip=10.1.0.2/16",
                      "edge.mac=aa:00:00:00:00:05", "os=nope"):
            got = {ep.nid for ep in ir.find_nodes(exp, query)}
            key, value = query.split("=", 1)
            want = set()
            for ep in exp.endpoints:
                if key.startswith("edge."):
                    if any(e.d.get(key[5:]) == value for e in ep.edges):
                        want.add(ep.nid)
                elif ep.d.get(key) == value:
                    want.add(ep.nid)
            assert got == want, query

    def test_network_form(self):
        exp = self._populate(11)
        net = exp.networks[0]
        got = {ep.nid for ep in ir.find_nodes(exp, f"network={net.nid}")}
        want = {ep.nid for ep in exp.endpoints if any(e.n == net.nid for e in ep.edges)}
        assert got == want and got

    def test_exact_not_substring(self):
        exp = ir.new_experiment()
        ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=24, hostname="printer-1"))
        assert ir.find_nodes(exp, "hostname=printer") == []

    def test_bad_queries_name_grammar(self):
        exp = ir.new_experiment()
        for bad in ("hostname", "=x", "edge.=x", "network=abc"):
            with pytest.raises(QueryError) as err:
                ir.find_nodes(exp, bad)
            assert "bad query" in str(err.value)


class TestSerialization:
    def test_canonical_shape(self):
        exp = ir.new_experiment({"filesystem": "/rootfs"})
        ir.upsert_endpoint(
            exp,
            Observation(source="t", mac="de:ad:be:ef:ca:fe", ip="10.0.0.1", prefix_len=24,
                        hostname="irc.example.com", os="linux", ports=[22, 6667]),
        )
        doc = json.loads(ir.serialize(exp))
        assert list(doc) == ["Nodes", "Networks", "Config"]
        node = doc["Nodes"][0]
        assert list(node) == ["NID", "Edges", "D"]
        assert list(node["Edges"][0]) == ["N", "D"]
        assert list(node["D"]) == sorted(node["D"])
        assert doc["Config"]["filesystem"] == "/rootfs"

    def test_trailing_newline_and_indent(self):
        exp = ir.new_experiment()
        data = ir.serialize(exp)
        assert data.endswith(b"}\n")
        assert b'  "Nodes"' in data

    def test_equal_graphs_equal_bytes(self):
        def build(order):
            exp = ir.new_experiment()
            # Force identical ids regardless of insertion order by pre-creating.
            exp.networks.append(NetworkNode(nid=10, d={"subnet": "10.0.0.0/24"}))
            exp.next_id = 11
            for i in order:
                exp.endpoints.append(
                    Endpoint(nid=i, edges=[Edge(n=10, d={"ip": f"10.0.0.{i}/24"})],
                             d={"hostname": f"h{i}", "os": "linux"})
                )
            exp.next_id = 20
            return exp

        assert ir.serialize(build([3, 1, 2])) == ir.serialize(build([1, 2, 3]))

    def test_round_trip_random(self):
        rng = random.Random(0x5EED)
        for trial in range(20):
            exp = ir.new_experiment()
            for i in range(rng.randrange(1, 30)):
                obs = Observation(
                    source="t",
                    mac=f"aa:bb:00:00:{trial:02x}:{i:02x}" if rng.random() < 0.7 else None,
                    ip=f"10.{trial}.{rng.randrange(3)}.{1 + i}" if rng.random() < 0.9 else None,
                    prefix_len=24 if rng.random() < 0.5 else None,
                    hostname=f"n{i}" if rng.random() < 0.5 else None,
                    ports=[rng.randrange(1, 1000) for _ in range(rng.randrange(3))] or None,
                )
                if not obs.mac and not obs.ip:
                    continue
                ir.upsert_endpoint(exp, obs)
            data = ir.serialize(exp)
            again = ir.deserialize(data)
            assert ir.serialize(again) == data
            assert again.next_id > max(
                [ep.nid for ep in again.endpoints] + [n.nid for n in again.networks],
                default=0,
            )

    def test_bad_json_reports_location(self):
        with pytest.raises(ir.DocumentError) as err:
            ir.deserialize(b'{"Nodes": [}')
        assert "line 1" in str(err.value)

    def test_dangling_edge_rejected(self):
        doc = {
            "Nodes": [{"NID": 1, "Edges": [{"N": 99, "D": {}}], "D": {}}],
            "Networks": [],
            "Config": {},
        }
        with pytest.raises(IntegrityError) as err:
            ir.deserialize(json.dumps(doc).encode())
        assert "endpoint 1 -> network 99" in str(err.value)

    def test_duplicate_ids_rejected(self):
        doc = {
            "Nodes": [{"NID": 1, "Edges": [], "D": {}}],
            "Networks": [{"NID": 1, "D": {}}],
            "Config": {},
        }
        with pytest.raises(ir.DocumentError) as err:
            ir.deserialize(json.dumps(doc).encode())
        assert "duplicate" in str(err.value)

    def test_non_string_metadata_rejected(self):
        doc = {
            "Nodes": [{"NID": 1, "Edges": [], "D": {"ports": 22}}],
            "Networks": [],
            "Config": {},
        }
        with pytest.raises(ir.DocumentError):
            ir.deserialize(json.dumps(doc).encode())

    def test_unknown_top_level_keys_tolerated(self):
        doc = {"Nodes": [], "Networks": [], "Config": {}, "Comment": "hi"}
        exp = ir.deserialize(json.dumps(doc).encode())
        assert exp.endpoints == [] and exp.networks == []


class TestDeletion:
    def test_delete_referenced_network_rejected(self):
        exp = ir.new_experiment()
        nid = ir.upsert_endpoint(exp, Observation(source="t", ip="10.0.0.1", prefix_len=24))
        net = exp.networks[0].nid
        with pytest.raises(IntegrityError) as err:
            ir.delete_network(exp, net)
        assert str(nid) in str(err.value)
        ir.delete_endpoint(exp, nid)
        ir.delete_network(exp, net)
        assert exp.networks == []

    def test_delete_missing(self):
        exp = ir.new_experiment()
        with pytest.raises(IntegrityError):
            ir.delete_endpoint(exp, 42)
        with pytest.raises(IntegrityError):
            ir.delete_network(exp, 42)

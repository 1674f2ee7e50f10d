"""Graph intermediate representation for discovered networks.

The IR is a bipartite graph: endpoints (hosts, routers) carry edges that
attach them to network nodes (layer-3 subnets).  All metadata lives in
unstructured string-to-string maps, so parsers can record anything and the
model generator decides later what it cares about.

Mutation goes through :func:`upsert_endpoint`, which merges one parser
observation at a time; serialization is canonical (sorted keys, ascending
ids) so equal experiments always produce equal bytes.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field

MAC_RE = re.compile(r"^([0-9a-f]{2}:){5}[0-9a-f]{2}$")

# Conventional metadata keys.  Maps are unstructured; these are the names
# the built-in parsers and templates agree on.
KEY_IP = "ip"
KEY_MAC = "mac"
KEY_HOSTNAME = "hostname"
KEY_OS = "os"
KEY_PORTS = "ports"
KEY_SERVICES = "services"
KEY_DHCP = "dhcp"
KEY_MARKED = "marked"
KEY_SUBNET = "subnet"
KEY_NAME = "name"
KEY_ROLE = "role"

CONFIG_UNKNOWN_NETWORK = "unknown_network"


class IRError(Exception):
    """Base class for IR-level failures."""


class ParseError(IRError):
    """Malformed input text; message names the offending fragment."""


class DocumentError(ParseError):
    """Malformed experiment document, with location when known."""


class IntegrityError(IRError):
    """Referential-integrity violation (dangling edge, protected delete)."""


class ObservationError(IRError):
    """Observation violates its invariants; the experiment was not touched."""


class QueryError(IRError):
    """Query string does not match the key=value grammar."""


@dataclass
class Edge:
    """An endpoint's attachment to a network, with per-interface metadata."""

    n: int
    d: dict[str, str] = field(default_factory=dict)


@dataclass
class Endpoint:
    nid: int
    edges: list[Edge] = field(default_factory=list)
    d: dict[str, str] = field(default_factory=dict)


@dataclass
class NetworkNode:
    nid: int
    d: dict[str, str] = field(default_factory=dict)


@dataclass
class Severity:
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


@dataclass
class Diagnostic:
    """A severity-tagged finding from validation, reconciliation, or dedup."""

    severity: str
    code: str
    message: str
    subjects: list[int] = field(default_factory=list)

    def format(self) -> str:
        subj = ",".join(str(n) for n in self.subjects) if self.subjects else "-"
        return f"{self.severity.upper()} {self.code} {subj} {self.message}"


@dataclass
class Observation:
    """One normalized fact from a parser, the unit of IR mutation.

    At least one of ``mac``/``ip`` must be present.  ``network_hint`` is a
    CIDR naming the subnet the fact was seen on; when absent the upsert
    falls back to ``ip``/``prefix_len`` and then to containment in an
    already-known subnet.
    """

    source: str = ""
    mac: str | None = None
    ip: str | None = None
    prefix_len: int | None = None
    hostname: str | None = None
    os: str | None = None
    ports: list[int] | None = None
    services: list[str] | None = None
    network_hint: str | None = None
    dhcp: bool = False

    def problems(self) -> list[str]:
        out = []
        if not self.mac and not self.ip:
            out.append("observation needs at least one of mac, ip")
        if self.mac and not MAC_RE.match(self.mac):
            out.append(f"bad mac {self.mac!r} (want lowercase colon-hex)")
        if self.ip is not None and not _valid_ipv4(self.ip):
            out.append(f"bad ip {self.ip!r}")
        if self.prefix_len is not None and not 0 <= self.prefix_len <= 32:
            out.append(f"prefix length {self.prefix_len} out of range [0,32]")
        for p in self.ports or []:
            if not 1 <= p <= 65535:
                out.append(f"port {p} out of range [1,65535]")
        return out

    def to_doc(self) -> dict:
        doc: dict = {"source": self.source}
        for key in ("mac", "ip", "prefix_len", "hostname", "os", "network_hint"):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        if self.ports is not None:
            doc["ports"] = list(self.ports)
        if self.services is not None:
            doc["services"] = list(self.services)
        if self.dhcp:
            doc["dhcp"] = True
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Observation":
        if not isinstance(doc, dict):
            raise ObservationError("observation must be a JSON object")
        known = {
            "source", "mac", "ip", "prefix_len", "hostname", "os",
            "ports", "services", "network_hint", "dhcp",
        }
        unknown = set(doc) - known
        if unknown:
            raise ObservationError(f"unknown observation fields: {sorted(unknown)}")
        try:
            obs = cls(
                source=doc.get("source", ""),
                mac=doc.get("mac"),
                ip=doc.get("ip"),
                prefix_len=doc.get("prefix_len"),
                hostname=doc.get("hostname"),
                os=doc.get("os"),
                ports=list(doc["ports"]) if doc.get("ports") is not None else None,
                services=list(doc["services"]) if doc.get("services") is not None else None,
                network_hint=doc.get("network_hint"),
                dhcp=bool(doc.get("dhcp", False)),
            )
        except (TypeError, ValueError) as exc:
            raise ObservationError(f"bad observation document: {exc}") from exc
        problems = obs.problems()
        if problems:
            raise ObservationError("; ".join(problems))
        return obs


@dataclass
class Experiment:
    endpoints: list[Endpoint] = field(default_factory=list)
    networks: list[NetworkNode] = field(default_factory=list)
    config: dict[str, str] = field(default_factory=dict)
    next_id: int = 1


def new_experiment(config: dict[str, str] | None = None) -> Experiment:
    return Experiment(config=dict(config or {}))


def allocate_id(exp: Experiment) -> int:
    nid = exp.next_id
    exp.next_id += 1
    return nid


def _valid_ipv4(text: str) -> bool:
    try:
        ipaddress.IPv4Address(text)
    except (ipaddress.AddressValueError, ValueError):
        return False
    return True


def ip_part(value: str) -> str:
    """Address portion of an ip metadata value ("10.0.0.1/24" -> "10.0.0.1")."""
    return value.split("/", 1)[0]


def canonical_subnet(text: str) -> str:
    """Canonicalize a CIDR by zeroing host bits (10.0.0.5/24 -> 10.0.0.0/24)."""
    try:
        net = ipaddress.ip_network(text, strict=False)
    except ValueError as exc:
        raise ParseError(f"bad CIDR {text!r}: {exc}") from exc
    if net.version != 4:
        raise ParseError(f"bad CIDR {text!r}: only IPv4 subnets are supported")
    return str(net)


def find_endpoint(exp: Experiment, nid: int) -> Endpoint | None:
    for ep in exp.endpoints:
        if ep.nid == nid:
            return ep
    return None


def find_network(exp: Experiment, nid: int) -> NetworkNode | None:
    for net in exp.networks:
        if net.nid == nid:
            return net
    return None


def network_for_subnet(exp: Experiment, subnet: str) -> int:
    """Return the network node for a subnet, creating it on first sight."""
    canon = canonical_subnet(subnet)
    for net in exp.networks:
        if net.d.get(KEY_SUBNET) == canon:
            return net.nid
    net = NetworkNode(nid=allocate_id(exp), d={KEY_SUBNET: canon})
    exp.networks.append(net)
    return net.nid


def unknown_network(exp: Experiment) -> int:
    """The sentinel network endpoints attach to when no subnet is inferable."""
    raw = exp.config.get(CONFIG_UNKNOWN_NETWORK)
    if raw is not None:
        try:
            nid = int(raw)
        except ValueError:
            nid = -1
        if find_network(exp, nid) is not None:
            return nid
    net = NetworkNode(nid=allocate_id(exp), d={KEY_NAME: "unknown"})
    exp.networks.append(net)
    exp.config[CONFIG_UNKNOWN_NETWORK] = str(net.nid)
    return net.nid


def _merge_csv(existing: str | None, items: list[str], numeric: bool = False) -> str:
    values = set(existing.split(",")) if existing else set()
    values.discard("")
    values.update(items)
    if numeric:
        ordered = sorted(values, key=int)
    else:
        ordered = sorted(values)
    return ",".join(ordered)


def _resolve_network(exp: Experiment, obs: Observation) -> int:
    if obs.network_hint:
        return network_for_subnet(exp, obs.network_hint)
    if obs.ip and obs.prefix_len is not None:
        return network_for_subnet(exp, f"{obs.ip}/{obs.prefix_len}")
    if obs.ip:
        nid = containing_network(exp, obs.ip)
        if nid is not None:
            return nid
    return unknown_network(exp)


def containing_network(exp: Experiment, ip: str) -> int | None:
    """Longest-prefix match of ip against known subnets; None when uncovered.

    Ties on prefix length go to the lowest network id so repeated lookups
    stay deterministic.
    """
    addr = ipaddress.IPv4Address(ip)
    best: tuple[int, int] | None = None  # (prefixlen, nid)
    for net in exp.networks:
        subnet = net.d.get(KEY_SUBNET)
        if not subnet:
            continue
        try:
            cidr = ipaddress.ip_network(subnet, strict=False)
        except ValueError:
            continue
        if cidr.version != 4 or addr not in cidr:
            continue
        key = (cidr.prefixlen, -net.nid)
        if best is None or key > best:
            best = key
    if best is None:
        return None
    return -best[1]


def _format_ip(exp: Experiment, obs: Observation, net_nid: int) -> str:
    assert obs.ip is not None
    if obs.prefix_len is not None:
        return f"{obs.ip}/{obs.prefix_len}"
    net = find_network(exp, net_nid)
    subnet = net.d.get(KEY_SUBNET) if net else None
    if subnet:
        try:
            cidr = ipaddress.ip_network(subnet, strict=False)
        except ValueError:
            cidr = None
        if cidr is not None and ipaddress.IPv4Address(obs.ip) in cidr:
            return f"{obs.ip}/{cidr.prefixlen}"
    return obs.ip


def _dedupe_edges(ep: Endpoint) -> None:
    # Invariant: no two edges on one endpoint share (network, ip).  Later
    # writes win on metadata so a just-updated edge absorbs the older one.
    seen: dict[tuple[int, str], Edge] = {}
    kept: list[Edge] = []
    for edge in ep.edges:
        ip = edge.d.get(KEY_IP)
        if ip is None:
            kept.append(edge)
            continue
        key = (edge.n, ip_part(ip))
        if key in seen:
            merged = dict(seen[key].d)
            merged.update(edge.d)
            seen[key].d = merged
        else:
            seen[key] = edge
            kept.append(edge)
    ep.edges = kept


def upsert_endpoint(exp: Experiment, obs: Observation) -> int:
    """Merge one observation into the IR, returning the touched endpoint id.

    Match precedence: an endpoint owning an edge with the observation's mac,
    else one owning an edge with the same ip address, else a new endpoint.
    hostname/os are last-writer-wins on the node; ports/services union into
    sorted comma-separated values; ip/mac land on the matched edge.
    """
    problems = obs.problems()
    if problems:
        raise ObservationError("; ".join(problems))

    ep = None
    if obs.mac:
        ep = _endpoint_by_edge(exp, KEY_MAC, obs.mac)
    if ep is None and obs.ip:
        ep = _endpoint_by_ip(exp, obs.ip)
    if ep is None:
        ep = Endpoint(nid=allocate_id(exp))
        exp.endpoints.append(ep)

    if obs.hostname:
        ep.d[KEY_HOSTNAME] = obs.hostname
    if obs.os:
        ep.d[KEY_OS] = obs.os
    if obs.ports:
        ep.d[KEY_PORTS] = _merge_csv(ep.d.get(KEY_PORTS), [str(p) for p in obs.ports], numeric=True)
    if obs.services:
        ep.d[KEY_SERVICES] = _merge_csv(ep.d.get(KEY_SERVICES), list(obs.services))
    if obs.dhcp:
        ep.d[KEY_DHCP] = "true"

    edge = None
    if obs.mac:
        edge = next((e for e in ep.edges if e.d.get(KEY_MAC) == obs.mac), None)
    if edge is None and obs.ip:
        edge = next(
            (e for e in ep.edges if KEY_IP in e.d and ip_part(e.d[KEY_IP]) == ip_part(obs.ip)),
            None,
        )

    explicit_net = bool(obs.network_hint) or (obs.ip is not None and obs.prefix_len is not None)
    if edge is None:
        edge = Edge(n=_resolve_network(exp, obs))
        ep.edges.append(edge)
    elif explicit_net:
        edge.n = _resolve_network(exp, obs)

    if obs.mac:
        edge.d[KEY_MAC] = obs.mac
    if obs.ip:
        edge.d[KEY_IP] = _format_ip(exp, obs, edge.n)
    _dedupe_edges(ep)
    return ep.nid


def _endpoint_by_edge(exp: Experiment, key: str, value: str) -> Endpoint | None:
    for ep in exp.endpoints:
        for edge in ep.edges:
            if edge.d.get(key) == value:
                return ep
    return None


def _endpoint_by_ip(exp: Experiment, ip: str) -> Endpoint | None:
    want = ip_part(ip)
    for ep in exp.endpoints:
        for edge in ep.edges:
            stored = edge.d.get(KEY_IP)
            if stored is not None and ip_part(stored) == want:
                return ep
    return None


# --- queries ----------------------------------------------------------------

QUERY_GRAMMAR = "expected key=value, edge.key=value, or network=<id>"


def parse_query(query: str):
    """Compile a query string into a predicate over endpoints."""
    if "=" not in query:
        raise QueryError(f"bad query {query!r}: {QUERY_GRAMMAR}")
    key, value = query.split("=", 1)
    key = key.strip()
    if not key:
        raise QueryError(f"bad query {query!r}: {QUERY_GRAMMAR}")

    if key == "network":
        try:
            nid = int(value)
        except ValueError:
            raise QueryError(f"bad query {query!r}: network takes a numeric id") from None
        return lambda ep: any(e.n == nid for e in ep.edges)
    if key.startswith("edge."):
        edge_key = key[len("edge."):]
        if not edge_key:
            raise QueryError(f"bad query {query!r}: {QUERY_GRAMMAR}")
        return lambda ep: any(e.d.get(edge_key) == value for e in ep.edges)
    return lambda ep: ep.d.get(key) == value


def find_nodes(exp: Experiment, query: str) -> list[Endpoint]:
    """All endpoints matching a key=value / edge.key=value query, exact match."""
    pred = parse_query(query)
    return [ep for ep in exp.endpoints if pred(ep)]


# --- deletion ---------------------------------------------------------------

def delete_endpoint(exp: Experiment, nid: int) -> None:
    ep = find_endpoint(exp, nid)
    if ep is None:
        raise IntegrityError(f"no endpoint with id {nid}")
    exp.endpoints.remove(ep)


def delete_network(exp: Experiment, nid: int) -> None:
    """Remove a network node; rejected while any edge still references it."""
    net = find_network(exp, nid)
    if net is None:
        raise IntegrityError(f"no network with id {nid}")
    holders = sorted(
        ep.nid for ep in exp.endpoints if any(e.n == nid for e in ep.edges)
    )
    if holders:
        raise IntegrityError(
            f"network {nid} still referenced by endpoints {holders}"
        )
    exp.networks.remove(net)


# --- serialization ----------------------------------------------------------

def _sorted_d(d: dict[str, str]) -> dict[str, str]:
    return {k: d[k] for k in sorted(d)}


def endpoint_to_doc(ep: Endpoint) -> dict:
    return {
        "NID": ep.nid,
        "Edges": [{"N": e.n, "D": _sorted_d(e.d)} for e in ep.edges],
        "D": _sorted_d(ep.d),
    }


def network_to_doc(net: NetworkNode) -> dict:
    return {"NID": net.nid, "D": _sorted_d(net.d)}


def experiment_to_doc(exp: Experiment) -> dict:
    return {
        "Nodes": [endpoint_to_doc(ep) for ep in sorted(exp.endpoints, key=lambda e: e.nid)],
        "Networks": [network_to_doc(n) for n in sorted(exp.networks, key=lambda n: n.nid)],
        "Config": _sorted_d(exp.config),
    }


def serialize(exp: Experiment) -> bytes:
    """Canonical UTF-8 JSON: sorted metadata keys, nodes in ascending id."""
    return (json.dumps(experiment_to_doc(exp), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DocumentError(msg)


def _d_from_doc(raw, where: str) -> dict[str, str]:
    _require(isinstance(raw, dict), f"{where}: D must be an object")
    for k, v in raw.items():
        _require(isinstance(k, str) and k != "", f"{where}: metadata keys must be nonempty strings")
        _require(isinstance(v, str), f"{where}: metadata value for {k!r} must be a string")
    return dict(raw)


def endpoint_from_doc(doc, where: str = "node") -> Endpoint:
    _require(isinstance(doc, dict), f"{where}: must be an object")
    nid = doc.get("NID")
    _require(isinstance(nid, int) and nid > 0, f"{where}: NID must be a positive integer")
    edges_raw = doc.get("Edges", [])
    _require(isinstance(edges_raw, list), f"{where} {nid}: Edges must be a list")
    edges = []
    for i, e in enumerate(edges_raw):
        _require(isinstance(e, dict), f"{where} {nid}: edge {i} must be an object")
        n = e.get("N")
        _require(isinstance(n, int), f"{where} {nid}: edge {i} N must be an integer")
        edges.append(Edge(n=n, d=_d_from_doc(e.get("D", {}), f"{where} {nid} edge {i}")))
    return Endpoint(nid=nid, edges=edges, d=_d_from_doc(doc.get("D", {}), f"{where} {nid}"))


def network_from_doc(doc, where: str = "network") -> NetworkNode:
    _require(isinstance(doc, dict), f"{where}: must be an object")
    nid = doc.get("NID")
    _require(isinstance(nid, int) and nid > 0, f"{where}: NID must be a positive integer")
    return NetworkNode(nid=nid, d=_d_from_doc(doc.get("D", {}), f"{where} {nid}"))


def deserialize(data: bytes | str) -> Experiment:
    """Parse an experiment document, checking shape and referential integrity."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"bad JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return experiment_from_doc(doc)


def experiment_from_doc(doc) -> Experiment:
    _require(isinstance(doc, dict), "document must be a JSON object")
    nodes_raw = doc.get("Nodes", [])
    nets_raw = doc.get("Networks", [])
    _require(isinstance(nodes_raw, list), "Nodes must be a list")
    _require(isinstance(nets_raw, list), "Networks must be a list")

    endpoints = [endpoint_from_doc(n) for n in nodes_raw]
    networks = [network_from_doc(n) for n in nets_raw]
    config = _d_from_doc(doc.get("Config", {}), "config")

    nids = [ep.nid for ep in endpoints] + [net.nid for net in networks]
    dupes = sorted({n for n in nids if nids.count(n) > 1})
    _require(not dupes, f"duplicate node ids: {dupes}")

    known = {net.nid for net in networks}
    dangling = sorted({
        (ep.nid, e.n) for ep in endpoints for e in ep.edges if e.n not in known
    })
    if dangling:
        refs = ", ".join(f"endpoint {ep} -> network {n}" for ep, n in dangling)
        raise IntegrityError(f"dangling edge references: {refs}")

    return Experiment(
        endpoints=endpoints,
        networks=networks,
        config=config,
        next_id=max(nids, default=0) + 1,
    )

"""Text evidence parsers: dhcpd logs, nmap XML, traceroute, router configs.

All parse_* functions are pure text-to-records converters; the ingest_*
and link_* helpers apply their results to an experiment.  Keeping the two
halves separate means files can be parsed in parallel and replayed, and
only the ingestion step ever touches shared state.
"""

from __future__ import annotations

import ipaddress
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from . import ir
from .ir import Diagnostic, Experiment, Observation, ParseError, Severity

# --- dhcpd logs ---------------------------------------------------------------

# ISC dhcpd ACK line, tolerant of syslog prefixes before "DHCPACK".
# The hostname segment is optional; real servers omit it for clients that
# never sent option 12.
DHCPACK_RE = re.compile(
    r"DHCPACK on (\d+\.\d+\.\d+\.\d+) "
    r"to ([0-9a-fA-F:]{17})"
    r"(?: \(([^)]*)\))?"
    r" via (\d+\.\d+\.\d+\.\d+)"
)

CONFIG_DHCPD_HINT_PREFIX = "dhcpd_hint_prefix"
DEFAULT_HINT_PREFIX = 24


def parse_dhcpd_log(text: str, hint_prefix: int = DEFAULT_HINT_PREFIX) -> list[Observation]:
    """Observations from DHCPACK lines; anything else in the log is skipped.

    The relay address after ``via`` places the lease on a subnet; by
    default its /24 (config key dhcpd_hint_prefix overrides).
    """
    out = []
    for line in text.splitlines():
        m = DHCPACK_RE.search(line)
        if not m:
            continue
        lease_ip, mac, hostname, gateway = m.groups()
        out.append(Observation(
            source="dhcpd-log",
            mac=mac.lower(),
            ip=lease_ip,
            hostname=hostname or None,
            network_hint=ir.canonical_subnet(f"{gateway}/{hint_prefix}"),
            dhcp=True,
        ))
    return out


# --- nmap XML -----------------------------------------------------------------

def _os_family(name: str) -> str:
    lowered = name.lower()
    if "linux" in lowered:
        return "linux"
    if "windows" in lowered:
        return "windows"
    if "mac os" in lowered or "os x" in lowered or "macos" in lowered or "darwin" in lowered:
        return "macos"
    return "other"


def parse_nmap_xml(text: str) -> list[Observation]:
    """One observation per up host in an nmap XML report.

    The highest-accuracy osmatch is normalized to a family token; open
    ports are collected across protocols.  No network hint is attached:
    scans assume the subnets are already in the IR, so upsert's
    longest-prefix matching places the host.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"bad nmap xml at line {line} column {col}: {exc.msg.split(':')[0]}") from exc

    out = []
    for host in root.iter("host"):
        status = host.find("status")
        if status is None or status.get("state") != "up":
            continue
        ip = None
        mac = None
        for addr in host.findall("address"):
            if addr.get("addrtype") == "ipv4":
                ip = addr.get("addr")
            elif addr.get("addrtype") == "mac":
                mac = (addr.get("addr") or "").lower() or None
        if ip is None and mac is None:
            continue

        hostname = None
        names = host.find("hostnames")
        if names is not None:
            first = names.find("hostname")
            if first is not None:
                hostname = first.get("name")

        ports = []
        ports_el = host.find("ports")
        if ports_el is not None:
            for port in ports_el.findall("port"):
                state = port.find("state")
                if state is not None and state.get("state") == "open":
                    ports.append(int(port.get("portid")))

        os_label = None
        os_el = host.find("os")
        if os_el is not None:
            best = None
            for match in os_el.findall("osmatch"):
                try:
                    accuracy = int(match.get("accuracy", "0"))
                except ValueError:
                    accuracy = 0
                if best is None or accuracy > best[0]:
                    best = (accuracy, match.get("name", ""))
            if best and best[1]:
                os_label = _os_family(best[1])

        out.append(Observation(
            source="nmap",
            mac=mac,
            ip=ip,
            hostname=hostname,
            os=os_label,
            ports=sorted(set(ports)) or None,
        ))
    return out


# --- traceroute ---------------------------------------------------------------

@dataclass
class HopRecord:
    hop_index: int
    ip: str | None = None
    hostname: str | None = None
    rtt_ms: float | None = None


# ` 2  gw.example.net (192.0.2.1)  1.044 ms  0.9 ms  1.2 ms`
HOP_NAMED_RE = re.compile(
    r"^\s*(\d+)\s+(\S+)\s+\((\d+\.\d+\.\d+\.\d+)\)\s+([\d.]+)\s*ms"
)
# ` 2  192.0.2.1  1.044 ms ...` (numeric-only output, -n)
HOP_BARE_RE = re.compile(
    r"^\s*(\d+)\s+(\d+\.\d+\.\d+\.\d+)\s+([\d.]+)\s*ms"
)
HOP_SILENT_RE = re.compile(r"^\s*(\d+)\s+\*(\s+\*)*\s*$")


def parse_traceroute(text: str) -> tuple[list[HopRecord], list[Diagnostic]]:
    """Hop records from traceroute output; unparseable hop lines are
    diagnosed and skipped, header lines are ignored."""
    hops: list[HopRecord] = []
    diags: list[Diagnostic] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("traceroute"):
            continue
        m = HOP_NAMED_RE.match(line)
        if m:
            idx, host, addr, rtt = m.groups()
            hostname = None if host == addr else host
            hops.append(HopRecord(int(idx), addr, hostname, float(rtt)))
            continue
        m = HOP_BARE_RE.match(line)
        if m:
            idx, addr, rtt = m.groups()
            hops.append(HopRecord(int(idx), addr, None, float(rtt)))
            continue
        m = HOP_SILENT_RE.match(line)
        if m:
            hops.append(HopRecord(int(m.group(1))))
            continue
        diags.append(Diagnostic(Severity.WARNING, "T-HOP",
                                f"line {lineno}: unrecognized hop line {line.strip()!r}", []))
    return hops, diags


def ingest_traceroute(exp: Experiment, hops: list[HopRecord]) -> list[int]:
    """Create endpoints for resolved hops and point-to-point networks
    between consecutive ones.

    The hop networks are synthetic: a trace only proves the two routers
    forward to each other, not what subnet joins them, so each adjacent
    pair gets its own network named hopnet-<i> (i = the earlier hop's
    index).  Re-ingesting the same trace reuses the pair's network.
    """
    nids: list[int] = []
    by_hop: dict[int, int] = {}
    for hop in hops:
        if hop.ip is None:
            continue
        ep = _endpoint_by_ip(exp, hop.ip)
        if ep is None:
            ep = ir.Endpoint(nid=ir.allocate_id(exp))
            exp.endpoints.append(ep)
        if hop.hostname:
            ep.d[ir.KEY_HOSTNAME] = hop.hostname
        by_hop[hop.hop_index] = ep.nid
        nids.append(ep.nid)

    resolved = sorted(by_hop)
    for a, b in zip(resolved, resolved[1:]):
        if b != a + 1:
            continue  # an unresolved hop between them: no adjacency proven
        name = f"hopnet-{a}"
        ep_a = ir.find_endpoint(exp, by_hop[a])
        ep_b = ir.find_endpoint(exp, by_hop[b])
        shared = {e.n for e in ep_a.edges} & {e.n for e in ep_b.edges}
        net_nid = None
        for nid in sorted(shared):
            net = ir.find_network(exp, nid)
            if net is not None and net.d.get(ir.KEY_NAME) == name:
                net_nid = nid
                break
        if net_nid is None:
            net = ir.NetworkNode(nid=ir.allocate_id(exp), d={ir.KEY_NAME: name})
            exp.networks.append(net)
            net_nid = net.nid
        hop_ips = {by_hop[a]: hops_ip(hops, a), by_hop[b]: hops_ip(hops, b)}
        for ep in (ep_a, ep_b):
            if not any(e.n == net_nid for e in ep.edges):
                ep.edges.append(ir.Edge(n=net_nid, d={ir.KEY_IP: hop_ips[ep.nid]}))

    # A resolved hop with no resolved neighbor still proved an address;
    # park it on the unknown network so the evidence (and idempotent
    # re-ingestion, which finds endpoints by edge ip) survives.
    for index, nid in by_hop.items():
        ep = ir.find_endpoint(exp, nid)
        addr = hops_ip(hops, index)
        if not any(ir.ip_part(e.d.get(ir.KEY_IP, "")) == addr for e in ep.edges):
            ep.edges.append(ir.Edge(n=ir.unknown_network(exp), d={ir.KEY_IP: addr}))
    return nids


def hops_ip(hops: list[HopRecord], index: int) -> str:
    return next(h.ip for h in hops if h.hop_index == index and h.ip)


def _endpoint_by_ip(exp: Experiment, ip: str) -> ir.Endpoint | None:
    for ep in exp.endpoints:
        for edge in ep.edges:
            stored = edge.d.get(ir.KEY_IP)
            if stored is not None and ir.ip_part(stored) == ip:
                return ep
    return None


# --- router configurations ------------------------------------------------------

@dataclass
class Interface:
    if_name: str
    ip: str
    prefix_len: int


@dataclass
class RouterSpec:
    name: str
    interfaces: list[Interface] = field(default_factory=list)


def netmask_to_prefix(netmask: str) -> int:
    """255.255.255.0 -> 24; raises on non-contiguous or malformed masks."""
    parts = netmask.split(".")
    if len(parts) != 4 or not all(p.isdigit() and 0 <= int(p) <= 255 for p in parts):
        raise ParseError(f"bad netmask {netmask!r}")
    bits = "".join(f"{int(p):08b}" for p in parts)
    prefix = len(bits.rstrip("0"))
    if "0" in bits[:prefix]:
        raise ParseError(f"non-contiguous netmask {netmask!r}")
    return prefix


def prefix_to_netmask(prefix: int) -> str:
    if not 0 <= prefix <= 32:
        raise ParseError(f"prefix length {prefix} out of range")
    value = ((1 << prefix) - 1) << (32 - prefix) if prefix else 0
    return ".".join(str((value >> s) & 0xFF) for s in (24, 16, 8, 0))


DIALECTS = ("ios", "junos-set")

_IOS_HOSTNAME_RE = re.compile(r"^hostname\s+(\S+)")
_IOS_INTERFACE_RE = re.compile(r"^interface\s+(\S+)")
_IOS_ADDRESS_RE = re.compile(
    r"^\s+ip address\s+(\d+\.\d+\.\d+\.\d+)\s+(\d+\.\d+\.\d+\.\d+)(\s+secondary)?\s*$"
)
_IOS_SHUTDOWN_RE = re.compile(r"^\s+shutdown\s*$")

_JUNOS_HOSTNAME_RE = re.compile(r"^set system host-name (\S+)\s*$")
_JUNOS_ADDRESS_RE = re.compile(
    r"^set interfaces (\S+) unit (\d+) family inet address (\d+\.\d+\.\d+\.\d+)/(\d+)\s*$"
)


def parse_router_config(text: str, dialect: str) -> tuple[RouterSpec, list[Diagnostic]]:
    """Router name and addressed interfaces from one config file.

    ios covers the industry-standard-CLI family (Cisco, Arista, and
    friends); junos-set covers Juniper `show configuration | display set`
    output.  Other vendors need a new dialect here.
    """
    if dialect == "ios":
        return _parse_ios(text)
    if dialect == "junos-set":
        return _parse_junos_set(text)
    raise ParseError(f"unknown dialect {dialect!r}, want one of {DIALECTS}")


def _parse_ios(text: str) -> tuple[RouterSpec, list[Diagnostic]]:
    # Indentation carries the block structure: an interface block runs from
    # its `interface X` line to the next flush-left line.
    spec = RouterSpec(name="")
    diags: list[Diagnostic] = []
    current: str | None = None
    pending: Interface | None = None
    shut = False

    def close_block():
        nonlocal current, pending, shut
        if current is not None:
            if pending is not None and not shut:
                spec.interfaces.append(pending)
            elif pending is None and not shut:
                diags.append(Diagnostic(Severity.INFO, "T-NOADDR",
                                        f"interface {current} has no ip address, skipped", []))
        current, pending, shut = None, None, False

    for line in text.splitlines():
        if not line.strip():
            continue
        if line[0] in " \t":
            if current is None:
                continue
            if _IOS_SHUTDOWN_RE.match(line):
                shut = True
            m = _IOS_ADDRESS_RE.match(line)
            if m:
                addr, mask, secondary = m.groups()
                if secondary:
                    continue  # only the primary address models the interface
                try:
                    pending = Interface(current, addr, netmask_to_prefix(mask))
                except ParseError as exc:
                    diags.append(Diagnostic(Severity.WARNING, "T-MASK",
                                            f"interface {current}: {exc}", []))
            continue
        close_block()
        m = _IOS_HOSTNAME_RE.match(line)
        if m:
            spec.name = m.group(1)
            continue
        m = _IOS_INTERFACE_RE.match(line)
        if m:
            current = m.group(1)
        # every other top-level statement (!, version, router ospf, ...) is noise
    close_block()
    return spec, diags


def _parse_junos_set(text: str) -> tuple[RouterSpec, list[Diagnostic]]:
    spec = RouterSpec(name="")
    diags: list[Diagnostic] = []
    seen: set[str] = set()
    for line in text.splitlines():
        m = _JUNOS_HOSTNAME_RE.match(line)
        if m:
            spec.name = m.group(1)
            continue
        m = _JUNOS_ADDRESS_RE.match(line)
        if m:
            if_base, unit, addr, prefix_s = m.groups()
            prefix = int(prefix_s)
            if not 1 <= prefix <= 32:
                diags.append(Diagnostic(Severity.WARNING, "T-MASK",
                                        f"interface {if_base} unit {unit}: prefix /{prefix_s} out of range", []))
                continue
            if_name = if_base if unit == "0" else f"{if_base}.{unit}"
            if if_name in seen:
                continue  # first address per logical interface wins
            seen.add(if_name)
            spec.interfaces.append(Interface(if_name, addr, prefix))
    return spec, diags


def link_routers(specs: list[RouterSpec], exp: Experiment) -> list[Diagnostic]:
    """Place routers in the IR and join interfaces that share a subnet.

    Each interface edge attaches via the canonical subnet of its address,
    so two routers addressed inside the same CIDR end up on one
    NetworkNode: that shared node is the discovered link.
    """
    diags: list[Diagnostic] = []
    names = [s.name for s in specs if s.name]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ir.IRError(f"duplicate router hostnames: {dupes}")

    iface_count: dict[int, int] = {}
    for spec in specs:
        ep = _router_endpoint(exp, spec.name)
        for iface in spec.interfaces:
            net_nid = ir.network_for_subnet(exp, f"{iface.ip}/{iface.prefix_len}")
            iface_count[net_nid] = iface_count.get(net_nid, 0) + 1
            ip_value = f"{iface.ip}/{iface.prefix_len}"
            edge = next(
                (e for e in ep.edges
                 if e.n == net_nid and e.d.get(ir.KEY_IP) == ip_value),
                None,
            )
            if edge is None:
                ep.edges.append(ir.Edge(n=net_nid, d={ir.KEY_IP: ip_value,
                                                      "ifname": iface.if_name}))
        if not spec.interfaces:
            diags.append(Diagnostic(Severity.WARNING, "T-ORPHAN",
                                    f"router {spec.name or '?'} has no addressed interfaces",
                                    [ep.nid]))

    for net_nid, count in sorted(iface_count.items()):
        if count == 1:
            net = ir.find_network(exp, net_nid)
            subnet = net.d.get(ir.KEY_SUBNET, "?") if net else "?"
            diags.append(Diagnostic(Severity.INFO, "T-STUB",
                                    f"subnet {subnet} has a single router interface (stub)",
                                    [net_nid]))
    return diags


def _router_endpoint(exp: Experiment, hostname: str) -> ir.Endpoint:
    for ep in exp.endpoints:
        if ep.d.get(ir.KEY_HOSTNAME) == hostname and ep.d.get(ir.KEY_ROLE) == "router":
            return ep
    ep = ir.Endpoint(nid=ir.allocate_id(exp),
                     d={ir.KEY_HOSTNAME: hostname, ir.KEY_ROLE: "router"})
    if not hostname:
        del ep.d[ir.KEY_HOSTNAME]
    exp.endpoints.append(ep)
    return ep

"""Passive discovery from packet captures.

Reads classic pcap (not pcapng) and mines the protocols that give away
host identity without ever sending a probe:

* ARP replies bind a MAC to an IPv4 address.
* mDNS responses leak hostnames and advertised services.
* DHCP ACKs bind MAC, address, netmask, and the client's own hostname.
* ICMP echo traffic proves an address is alive.
* TCP SYNs carry enough stack fingerprint to guess the operating system.

Each frame yields at most one :class:`~netcarta.ir.Observation`; anything
unparseable is skipped with a diagnostic rather than aborting the capture.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import fingerprint as fp
from .ir import Diagnostic, Observation, ParseError, Severity

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
ETH_IPV6 = 0x86DD

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

MDNS_PORT = 5353
DHCP_SERVER_PORT = 67
DHCP_CLIENT_PORT = 68

TCP_FLAG_SYN = 0x02
TCP_FLAG_ACK = 0x10


class FrameError(Exception):
    """One frame could not be decoded; the capture as a whole continues."""


@dataclass
class Frame:
    index: int
    ts: float
    data: bytes


def _fmt_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def _fmt_ip(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def iter_frames(data: bytes):
    """Yield frames from a classic pcap; raises ParseError on a bad header.

    A record cut short mid-file (interrupted capture) ends iteration with a
    FrameError so the caller can diagnose it while keeping prior frames.
    """
    if len(data) < 24:
        raise ParseError("not a pcap file: shorter than the 24-byte global header")
    magic_le = struct.unpack("<I", data[:4])[0]
    if magic_le == PCAP_MAGIC:
        endian = "<"
    elif struct.unpack(">I", data[:4])[0] == PCAP_MAGIC:
        endian = ">"
    else:
        raise ParseError(f"not a pcap file: bad magic 0x{magic_le:08x} "
                         "(pcapng is not supported)")
    linktype = struct.unpack(endian + "I", data[20:24])[0]
    if linktype != LINKTYPE_ETHERNET:
        raise ParseError(f"unsupported link type {linktype}, want 1 (ethernet)")

    offset = 24
    index = 0
    while offset < len(data):
        if offset + 16 > len(data):
            raise FrameError(f"record {index} header truncated at byte {offset}")
        ts_sec, ts_usec, caplen, origlen = struct.unpack(
            endian + "IIII", data[offset:offset + 16]
        )
        offset += 16
        if offset + caplen > len(data):
            raise FrameError(f"record {index} body truncated at byte {offset}")
        yield Frame(index=index, ts=ts_sec + ts_usec / 1e6, data=data[offset:offset + caplen])
        offset += caplen
        index += 1


@dataclass
class EthFrame:
    src_mac: str
    dst_mac: str
    ethertype: int
    payload: bytes


def decode_ethernet(data: bytes) -> EthFrame:
    if len(data) < 14:
        raise FrameError("ethernet header truncated")
    ethertype = struct.unpack("!H", data[12:14])[0]
    return EthFrame(_fmt_mac(data[6:12]), _fmt_mac(data[0:6]), ethertype, data[14:])


@dataclass
class Ipv4Packet:
    src: str
    dst: str
    proto: int
    ttl: int
    df: bool
    payload: bytes


def decode_ipv4(data: bytes) -> Ipv4Packet:
    if len(data) < 20:
        raise FrameError("ipv4 header truncated")
    ver_ihl, _, total, _, flags_frag, ttl, proto = struct.unpack("!BBHHHBB", data[:10])
    if ver_ihl >> 4 != 4:
        raise FrameError(f"ip version {ver_ihl >> 4}, want 4")
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or len(data) < ihl:
        raise FrameError("ipv4 header length out of range")
    end = min(total, len(data)) if total >= ihl else len(data)
    return Ipv4Packet(
        src=_fmt_ip(data[12:16]),
        dst=_fmt_ip(data[16:20]),
        proto=proto,
        ttl=ttl,
        df=bool(flags_frag & 0x4000),
        payload=data[ihl:end],
    )


# --- ARP ----------------------------------------------------------------------

def extract_arp(payload: bytes) -> Observation | None:
    """MAC/IP binding from an ARP reply; requests are ignored (the sender
    field of a request is routinely spoofed by probe tools)."""
    if len(payload) < 28:
        raise FrameError("arp packet truncated")
    hw_type, proto_type, hw_len, proto_len, opcode = struct.unpack("!HHBBH", payload[:8])
    if hw_type != 1 or proto_type != ETH_IPV4 or hw_len != 6 or proto_len != 4:
        raise FrameError("arp is not ethernet/ipv4")
    if opcode != 2:
        return None
    return Observation(
        source="pcap-arp",
        mac=_fmt_mac(payload[8:14]),
        ip=_fmt_ip(payload[14:18]),
    )


# --- mDNS ---------------------------------------------------------------------

def _dns_name(data: bytes, offset: int, depth: int = 0) -> tuple[str, int]:
    """Decode a possibly-compressed DNS name; returns (name, next offset)."""
    if depth > 16:
        raise FrameError("dns name compression loop")
    labels = []
    while True:
        if offset >= len(data):
            raise FrameError("dns name runs off packet")
        length = data[offset]
        if length == 0:
            return ".".join(labels), offset + 1
        if length & 0xC0 == 0xC0:
            if offset + 2 > len(data):
                raise FrameError("dns pointer truncated")
            target = struct.unpack("!H", data[offset:offset + 2])[0] & 0x3FFF
            if target >= offset:
                raise FrameError("dns pointer not backward")
            suffix, _ = _dns_name(data, target, depth + 1)
            if suffix:
                labels.append(suffix)
            return ".".join(labels), offset + 2
        if length & 0xC0:
            raise FrameError(f"dns label type 0x{length & 0xC0:02x} unsupported")
        offset += 1
        if offset + length > len(data):
            raise FrameError("dns label truncated")
        labels.append(data[offset:offset + length].decode("ascii", "replace"))
        offset += length


DNS_TYPE_A = 1
DNS_TYPE_PTR = 12
DNS_TYPE_TXT = 16
DNS_TYPE_SRV = 33


def extract_mdns(eth: EthFrame, pkt: Ipv4Packet) -> Observation | None:
    """Hostname/service advertisement from an mDNS response.

    PTR and SRV owner names become service labels; the first A record gives
    the hostname and address.  Hosts that only announce services still get
    an observation keyed on the packet's own source address.
    """
    data = pkt.payload[8:]  # past the UDP header
    if len(data) < 12:
        raise FrameError("dns header truncated")
    _, dns_flags, qd, an, ns, ar = struct.unpack("!HHHHHH", data[:12])
    if not dns_flags & 0x8000:
        return None  # a query, nothing asserted

    offset = 12
    for _ in range(qd):
        _, offset = _dns_name(data, offset)
        offset += 4

    hostname = None
    host_ip = None
    services = []
    for _ in range(an + ns + ar):
        if offset >= len(data):
            break  # counts overstate the records actually present
        name, offset = _dns_name(data, offset)
        if offset + 10 > len(data):
            raise FrameError("dns record header truncated")
        rtype, _, _, rdlen = struct.unpack("!HHIH", data[offset:offset + 10])
        offset += 10
        if offset + rdlen > len(data):
            raise FrameError("dns rdata truncated")
        rdata = data[offset:offset + rdlen]
        offset += rdlen
        if rtype in (DNS_TYPE_PTR, DNS_TYPE_SRV):
            services.append(name.rstrip("."))
        if rtype == DNS_TYPE_A and rdlen == 4 and hostname is None:
            hostname = name.rstrip(".")
            host_ip = _fmt_ip(rdata)

    if hostname is None and not services:
        return None
    return Observation(
        source="pcap-mdns",
        mac=eth.src_mac,
        ip=host_ip or pkt.src,
        hostname=hostname,
        services=sorted(set(services)) or None,
    )


# --- DHCP ---------------------------------------------------------------------

DHCP_MAGIC = b"\x63\x82\x53\x63"


def extract_dhcp(pkt: Ipv4Packet) -> Observation | None:
    """Lease facts from a DHCP ACK: the server has committed the binding."""
    data = pkt.payload[8:]
    if len(data) < 240:
        raise FrameError("bootp packet truncated")
    op, htype, hlen = data[0], data[1], data[2]
    if op != 2 or htype != 1 or hlen != 6:
        return None  # not a server reply to an ethernet client
    yiaddr = _fmt_ip(data[16:20])
    chaddr = _fmt_mac(data[28:34])
    if data[236:240] != DHCP_MAGIC:
        raise FrameError("dhcp options magic missing")

    msg_type = None
    hostname = None
    netmask = None
    offset = 240
    while offset < len(data):
        tag = data[offset]
        if tag == 255:
            break
        if tag == 0:
            offset += 1
            continue
        if offset + 2 > len(data):
            raise FrameError("dhcp option header truncated")
        length = data[offset + 1]
        value = data[offset + 2:offset + 2 + length]
        if len(value) < length:
            raise FrameError("dhcp option value truncated")
        if tag == 53 and length == 1:
            msg_type = value[0]
        elif tag == 12:
            hostname = value.decode("ascii", "replace")
        elif tag == 1 and length == 4:
            netmask = _fmt_ip(value)
        offset += 2 + length

    if msg_type != 5:
        return None  # only ACK commits a lease
    if yiaddr == "0.0.0.0":
        return None
    prefix = _netmask_prefix(netmask) if netmask else None
    return Observation(
        source="pcap-dhcp",
        mac=chaddr,
        ip=yiaddr,
        prefix_len=prefix,
        hostname=hostname,
        dhcp=True,
    )


def _netmask_prefix(netmask: str) -> int | None:
    bits = "".join(f"{int(p):08b}" for p in netmask.split("."))
    ones = bits.rstrip("0")
    if "0" in ones:
        return None  # non-contiguous mask, ignore rather than guess
    return len(ones)


# --- ICMP ---------------------------------------------------------------------

def extract_icmp(pkt: Ipv4Packet) -> Observation | None:
    """Liveness from echo traffic.  Only the IP is trusted: the MAC on the
    wire belongs to the last-hop router, not the endpoint."""
    if len(pkt.payload) < 4:
        raise FrameError("icmp packet truncated")
    kind = pkt.payload[0]
    if kind == 8:
        return Observation(source="pcap-icmp", ip=pkt.src)
    if kind == 0:
        return Observation(source="pcap-icmp", ip=pkt.src)
    return None


# --- TCP SYN ------------------------------------------------------------------

def parse_tcp_options(data: bytes) -> tuple[list[int], int | None, int | None]:
    """(kinds in wire order, mss, wscale) from the TCP options block."""
    kinds: list[int] = []
    mss = None
    wscale = None
    offset = 0
    while offset < len(data):
        kind = data[offset]
        kinds.append(kind)
        if kind == 0:  # EOL terminates the list
            break
        if kind == 1:  # NOP has no length
            offset += 1
            continue
        if offset + 2 > len(data):
            raise FrameError("tcp option header truncated")
        length = data[offset + 1]
        if length < 2 or offset + length > len(data):
            raise FrameError(f"tcp option kind {kind} bad length {length}")
        value = data[offset + 2:offset + length]
        if kind == 2 and len(value) == 2:
            mss = struct.unpack("!H", value)[0]
        elif kind == 3 and len(value) == 1:
            wscale = value[0]
        offset += length
    return kinds, mss, wscale


def extract_syn(eth: EthFrame, pkt: Ipv4Packet,
                db: list[fp.Signature] | None = None,
                diags: list[Diagnostic] | None = None) -> Observation | None:
    """Observation from an initial SYN, with OS classification when the
    fingerprint database recognizes the stack.

    Unlike the other extractors this one degrades instead of failing: a SYN
    with mangled options still proves the address exists, so the
    observation is kept and the option problem reported as a diagnostic.
    """
    data = pkt.payload
    if len(data) < 20:
        raise FrameError("tcp header truncated")
    flags = data[13]
    if not flags & TCP_FLAG_SYN or flags & TCP_FLAG_ACK:
        return None  # only the client's opening SYN fingerprints cleanly
    window = struct.unpack("!H", data[14:16])[0]
    offset_words = data[12] >> 4
    if offset_words < 5 or offset_words * 4 > len(data):
        raise FrameError("tcp data offset out of range")

    obs = Observation(source="pcap-syn", mac=eth.src_mac, ip=pkt.src)
    try:
        kinds, mss, wscale = parse_tcp_options(data[20:offset_words * 4])
    except FrameError as exc:
        if diags is not None:
            diags.append(Diagnostic(Severity.WARNING, "P-TCPOPT",
                                    f"syn from {pkt.src}: {exc}", []))
        return obs
    features = fp.SynFeatures(ttl=pkt.ttl, window=window, options=kinds,
                              mss=mss, wscale=wscale, df=pkt.df)
    if db:
        obs.os = fp.classify(features, db)
    return obs


# --- reconciliation -----------------------------------------------------------

def _subnet_key(obs: Observation) -> str | None:
    from . import ir
    if obs.network_hint:
        return ir.canonical_subnet(obs.network_hint)
    if obs.ip and obs.prefix_len is not None:
        return ir.canonical_subnet(f"{obs.ip}/{obs.prefix_len}")
    return None


def reconcile(observations: list[Observation], mode: str = "drop"
              ) -> tuple[list[Observation], list[Diagnostic]]:
    """Resolve contradictory address bindings before they hit the IR.

    Two conflicts matter: one MAC claiming several IPs on the same subnet
    (DHCP churn aside, that's either NAT or a capture spanning re-leases),
    and one IP claimed by several MACs (a moved address or spoofing).

    drop       discard every observation involved in a conflict
    keep-first trust the earliest binding seen
    keep-last  trust the latest binding seen
    """
    if mode not in ("drop", "keep-first", "keep-last"):
        raise ValueError(f"unknown reconcile mode {mode!r}")

    diags: list[Diagnostic] = []
    dead: set[int] = set()

    # Conflict (a): same mac, multiple ips on one subnet key.  Leases are
    # exempt: a DHCP server reassigning a client is not a contradiction.
    by_mac: dict[tuple[str, str | None], dict[str, list[int]]] = {}
    for i, obs in enumerate(observations):
        if not obs.mac or not obs.ip or obs.dhcp:
            continue
        key = (obs.mac, _subnet_key(obs))
        by_mac.setdefault(key, {}).setdefault(obs.ip, []).append(i)
    for (mac, subnet), ips in sorted(by_mac.items(), key=lambda kv: kv[0][0]):
        if len(ips) < 2:
            continue
        where = f"on {subnet}" if subnet else "with no subnet evidence"
        diags.append(Diagnostic(
            Severity.WARNING, "P-MACIP",
            f"mac {mac} claims {len(ips)} addresses {where}: "
            + ",".join(sorted(ips)) + f" ({mode})",
            [],
        ))
        _apply_mode(mode, ips, observations, dead)

    # Conflict (b): same ip bound to multiple macs.
    by_ip: dict[str, dict[str, list[int]]] = {}
    for i, obs in enumerate(observations):
        if not obs.mac or not obs.ip or i in dead:
            continue
        by_ip.setdefault(obs.ip, {}).setdefault(obs.mac, []).append(i)
    for ip, macs in sorted(by_ip.items()):
        if len(macs) < 2:
            continue
        diags.append(Diagnostic(
            Severity.WARNING, "P-IPMAC",
            f"address {ip} bound to {len(macs)} macs: "
            + ",".join(sorted(macs)) + f" ({mode})",
            [],
        ))
        _apply_mode(mode, macs, observations, dead)

    kept = [obs for i, obs in enumerate(observations) if i not in dead]
    return kept, diags


def _apply_mode(mode: str, groups: dict[str, list[int]],
                observations: list[Observation], dead: set[int]) -> None:
    all_indexes = sorted(i for indexes in groups.values() for i in indexes)
    if mode == "drop":
        dead.update(all_indexes)
        return
    # Keep the observations agreeing with the first- or last-seen binding.
    witness = min(all_indexes) if mode == "keep-first" else max(all_indexes)
    winner = next(value for value, indexes in groups.items() if witness in indexes)
    for value, indexes in groups.items():
        if value != winner:
            dead.update(indexes)


# --- top-level ----------------------------------------------------------------

def parse_pcap(data: bytes, db: list[fp.Signature] | None = None,
               conflicts: str = "drop"
               ) -> tuple[list[Observation], list[Diagnostic]]:
    """All observations from a capture, reconciled, plus diagnostics."""
    observations: list[Observation] = []
    diags: list[Diagnostic] = []
    ipv6_count = 0

    frames = iter_frames(data)
    while True:
        try:
            frame = next(frames)
        except StopIteration:
            break
        except FrameError as exc:
            diags.append(Diagnostic(Severity.WARNING, "P-TRUNC",
                                    f"capture ends early: {exc}", []))
            break
        try:
            obs = _extract_frame(frame, db, diags)
        except FrameError as exc:
            diags.append(Diagnostic(Severity.WARNING, "P-FRAME",
                                    f"frame {frame.index}: {exc}", []))
            continue
        if obs == "ipv6":
            ipv6_count += 1
        elif obs is not None:
            observations.append(obs)

    if ipv6_count:
        diags.append(Diagnostic(Severity.INFO, "P-IPV6",
                                f"skipped {ipv6_count} ipv6 frames", []))
    kept, conflict_diags = reconcile(observations, conflicts)
    return kept, diags + conflict_diags


def _extract_frame(frame: Frame, db, diags):
    eth = decode_ethernet(frame.data)
    if eth.ethertype == ETH_ARP:
        return extract_arp(eth.payload)
    if eth.ethertype == ETH_IPV6:
        return "ipv6"
    if eth.ethertype != ETH_IPV4:
        return None
    pkt = decode_ipv4(eth.payload)
    if pkt.proto == PROTO_UDP:
        if len(pkt.payload) < 8:
            raise FrameError("udp header truncated")
        sport, dport = struct.unpack("!HH", pkt.payload[:4])
        if MDNS_PORT in (sport, dport):
            return extract_mdns(eth, pkt)
        if {sport, dport} & {DHCP_SERVER_PORT, DHCP_CLIENT_PORT}:
            return extract_dhcp(pkt)
        return None
    if pkt.proto == PROTO_TCP:
        return extract_syn(eth, pkt, db, diags)
    if pkt.proto == PROTO_ICMP:
        return extract_icmp(pkt)
    return None

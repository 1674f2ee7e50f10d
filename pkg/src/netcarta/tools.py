"""IR refinement: trim marking, gap analysis, OS inference, summary stats.

Discovery floods the graph with every endpoint that ever spoke on the wire.
Before a model is emitted the operator trims scope (mark/unmark/sweep),
runs gap analysis to find evidence the parsers missed or contradicted,
and optionally lets hostname conventions fill in missing OS labels.
"""

from __future__ import annotations

import re

from . import ir
from .ir import Diagnostic, Experiment, Severity

# An endpoint with more interfaces than any real chassis is almost always
# two hosts fused by a bad merge.
MAX_INTERFACES = 16


def mark(exp: Experiment, query: str) -> int:
    """Set marked=true on every endpoint matching the query; returns count."""
    hits = ir.find_nodes(exp, query)
    for ep in hits:
        ep.d[ir.KEY_MARKED] = "true"
    return len(hits)


def unmark(exp: Experiment, query: str) -> int:
    """Clear the mark on matching endpoints; returns how many were marked."""
    cleared = 0
    for ep in ir.find_nodes(exp, query):
        if ep.d.pop(ir.KEY_MARKED, None) is not None:
            cleared += 1
    return cleared


def sweep(exp: Experiment) -> int:
    """Delete every marked endpoint, then collect networks the sweep orphaned.

    Only networks that lost their last reference during this sweep are
    removed; a network that was already unreferenced stays (the operator
    created it on purpose or gap analysis will flag it).
    """
    referenced_before = {e.n for ep in exp.endpoints for e in ep.edges}
    doomed = [ep for ep in exp.endpoints if ep.d.get(ir.KEY_MARKED) == "true"]
    for ep in doomed:
        exp.endpoints.remove(ep)
    referenced_after = {e.n for ep in exp.endpoints for e in ep.edges}
    for net in list(exp.networks):
        if net.nid in referenced_before and net.nid not in referenced_after:
            exp.networks.remove(net)
            if exp.config.get(ir.CONFIG_UNKNOWN_NETWORK) == str(net.nid):
                del exp.config[ir.CONFIG_UNKNOWN_NETWORK]
    return len(doomed)


# --- gap analysis -----------------------------------------------------------

def check(exp: Experiment) -> list[Diagnostic]:
    """Run all gap-analysis rules; deterministic order (code, first subject)."""
    diags: list[Diagnostic] = []
    diags.extend(_rule_too_many_interfaces(exp))
    diags.extend(_rule_duplicate_ip(exp))
    diags.extend(_rule_no_edges(exp))
    diags.extend(_rule_orphan_network(exp))
    diags.extend(_rule_no_address(exp))
    diags.extend(_rule_duplicate_hostname(exp))
    diags.sort(key=lambda d: (d.code, d.subjects[0] if d.subjects else 0))
    return diags


def _rule_too_many_interfaces(exp: Experiment):
    for ep in exp.endpoints:
        if len(ep.edges) > MAX_INTERFACES:
            yield Diagnostic(
                Severity.ERROR,
                "R1",
                f"endpoint has {len(ep.edges)} interfaces, over the physically "
                f"realizable limit of {MAX_INTERFACES}; likely a bad merge",
                [ep.nid],
            )


def _rule_duplicate_ip(exp: Experiment):
    groups: dict[tuple[int, str], list[int]] = {}
    for ep in exp.endpoints:
        for edge in ep.edges:
            ip = edge.d.get(ir.KEY_IP)
            if ip is None:
                continue
            groups.setdefault((edge.n, ir.ip_part(ip)), []).append(ep.nid)
    for (net, addr), nids in sorted(groups.items()):
        distinct = sorted(set(nids))
        if len(distinct) > 1:
            yield Diagnostic(
                Severity.ERROR,
                "R2",
                f"address {addr} on network {net} claimed by {len(distinct)} endpoints",
                distinct,
            )


def _rule_no_edges(exp: Experiment):
    for ep in exp.endpoints:
        if not ep.edges:
            yield Diagnostic(
                Severity.WARNING, "R3", "endpoint is attached to no network", [ep.nid]
            )


def _rule_orphan_network(exp: Experiment):
    referenced = {e.n for ep in exp.endpoints for e in ep.edges}
    for net in exp.networks:
        if net.nid not in referenced:
            label = net.d.get(ir.KEY_SUBNET) or net.d.get(ir.KEY_NAME) or "?"
            yield Diagnostic(
                Severity.WARNING, "R4", f"network {label} has no endpoints", [net.nid]
            )


def _rule_no_address(exp: Experiment):
    # DHCP clients legitimately show up before their lease is observed, so
    # the dhcp tag exempts them.
    for ep in exp.endpoints:
        if ep.d.get(ir.KEY_DHCP) == "true":
            continue
        if any(ir.KEY_IP in e.d for e in ep.edges):
            continue
        yield Diagnostic(
            Severity.ERROR,
            "R5",
            "endpoint has no IP address on any interface and is not tagged dhcp",
            [ep.nid],
        )


def _rule_duplicate_hostname(exp: Experiment):
    groups: dict[str, list[int]] = {}
    for ep in exp.endpoints:
        name = ep.d.get(ir.KEY_HOSTNAME)
        if name:
            groups.setdefault(name, []).append(ep.nid)
    for name, nids in sorted(groups.items()):
        if len(nids) > 1:
            yield Diagnostic(
                Severity.WARNING,
                "R6",
                f"hostname {name} shared by {len(nids)} endpoints",
                sorted(nids),
            )


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.severity == Severity.ERROR for d in diags)


# --- hostname-based OS inference ---------------------------------------------

# Order matters: first matching rule wins.  Patterns follow the naming
# conventions enterprise fleets actually use (vendor defaults plus the
# hostname schemes IT departments hand out).
_HOSTNAME_RULES: list[tuple[re.Pattern, str]] = [
    (re.compile(r"^android-", re.IGNORECASE), "android"),
    (re.compile(r"iphone", re.IGNORECASE), "ios"),
    (re.compile(r"ipad", re.IGNORECASE), "ipados"),
    (re.compile(r"(macbook|imac|mac-?mini)", re.IGNORECASE), "macos"),
    (re.compile(r"(-pc$|^desktop-|windows)", re.IGNORECASE), "windows"),
]


def os_from_hostname(hostname: str) -> str | None:
    for pattern, label in _HOSTNAME_RULES:
        if pattern.search(hostname):
            return label
    return None


def infer_os(exp: Experiment) -> int:
    """Fill in os from hostname conventions where discovery left it blank."""
    changed = 0
    for ep in exp.endpoints:
        if ep.d.get(ir.KEY_OS):
            continue
        name = ep.d.get(ir.KEY_HOSTNAME)
        if not name:
            continue
        label = os_from_hostname(name)
        if label:
            ep.d[ir.KEY_OS] = label
            changed += 1
    return changed


# --- stats -------------------------------------------------------------------

def stats(exp: Experiment, infer: bool = False) -> dict:
    """Summarize the experiment; read-only even when inference is requested."""
    per_network: dict[str, int] = {}
    for net in sorted(exp.networks, key=lambda n: n.nid):
        per_network[str(net.nid)] = 0
    for ep in exp.endpoints:
        for n in {e.n for e in ep.edges}:
            per_network[str(n)] = per_network.get(str(n), 0) + 1

    os_hist: dict[str, int] = {}
    for ep in exp.endpoints:
        label = ep.d.get(ir.KEY_OS)
        if not label and infer:
            name = ep.d.get(ir.KEY_HOSTNAME)
            label = os_from_hostname(name) if name else None
        os_hist[label or "unknown"] = os_hist.get(label or "unknown", 0) + 1

    return {
        "endpoints": len(exp.endpoints),
        "networks": len(exp.networks),
        "endpoints_per_network": per_network,
        "os": {k: os_hist[k] for k in sorted(os_hist)},
        "marked": sum(1 for ep in exp.endpoints if ep.d.get(ir.KEY_MARKED) == "true"),
    }

"""Command-line entry point.

Every subcommand works in two modes: against a running daemon (--server,
or NETCARTA_SERVER, default localhost) or directly on an experiment file
(--file), which needs no service at all.  When both are given the file
wins; offline mode exists so pipelines and CI never depend on a port.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import requests

from . import daemon, fingerprint, ir, minemiter, pcap, textparse, tools
from .ir import Diagnostic, Experiment, IRError

DEFAULT_SERVER = "http://127.0.0.1:9090"
ENV_SERVER = "NETCARTA_SERVER"


class Backend:
    """Read/modify/write access to one experiment, local file or daemon."""

    def read(self) -> Experiment:
        raise NotImplementedError

    def write(self, exp: Experiment) -> None:
        raise NotImplementedError

    def ingest(self, observations) -> list[int]:
        raise NotImplementedError

    def mutate(self, fn):
        exp = self.read()
        result = fn(exp)
        self.write(exp)
        return result


class LocalBackend(Backend):
    def __init__(self, path: str):
        self.path = path

    def read(self) -> Experiment:
        if not os.path.exists(self.path):
            return ir.new_experiment()
        with open(self.path, "rb") as fh:
            return ir.deserialize(fh.read())

    def write(self, exp: Experiment) -> None:
        daemon.save_atomic(exp, self.path)

    def ingest(self, observations) -> list[int]:
        exp = self.read()
        nids = [ir.upsert_endpoint(exp, obs) for obs in observations]
        self.write(exp)
        return nids


class RemoteBackend(Backend):
    def __init__(self, url: str):
        self.url = url.rstrip("/")

    def _check(self, response: requests.Response) -> requests.Response:
        if response.status_code >= 400:
            try:
                message = response.json().get("error", response.text)
            except ValueError:
                message = response.text
            raise IRError(f"daemon: {message}")
        return response

    def read(self) -> Experiment:
        r = self._check(requests.get(f"{self.url}/experiment", timeout=30))
        return ir.deserialize(r.content)

    def write(self, exp: Experiment) -> None:
        self._check(requests.put(f"{self.url}/experiment",
                                 json=ir.experiment_to_doc(exp), timeout=30))

    def ingest(self, observations) -> list[int]:
        docs = [obs.to_doc() for obs in observations]
        r = self._check(requests.post(f"{self.url}/observations", json=docs, timeout=60))
        return r.json()["ids"]

    def graph(self) -> dict:
        return self._check(requests.get(f"{self.url}/graph", timeout=30)).json()


def backend_for(args) -> Backend:
    if args.file:
        return LocalBackend(args.file)
    server = args.server or os.environ.get(ENV_SERVER) or DEFAULT_SERVER
    return RemoteBackend(server)


def _print_diags(diags: list[Diagnostic]) -> None:
    for d in diags:
        print(d.format())


# --- subcommands -------------------------------------------------------------

def cmd_serve(args) -> int:
    return daemon.serve(bind=args.bind, experiment_path=args.file)


def cmd_ingest_pcap(args) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    db = fingerprint.load_default_db()
    observations, diags = pcap.parse_pcap(data, db, conflicts=args.conflicts)
    nids = backend_for(args).ingest(observations)
    _print_diags(diags)
    print(f"ingested {len(observations)} observations into {len(set(nids))} endpoints")
    return 0


def cmd_ingest_dhcpd(args) -> int:
    backend = backend_for(args)
    exp = backend.read()
    hint = int(exp.config.get(textparse.CONFIG_DHCPD_HINT_PREFIX,
                              textparse.DEFAULT_HINT_PREFIX))
    with open(args.input, "r", encoding="utf-8") as fh:
        observations = textparse.parse_dhcpd_log(fh.read(), hint_prefix=hint)
    nids = backend.ingest(observations)
    print(f"ingested {len(observations)} leases into {len(set(nids))} endpoints")
    return 0


def cmd_ingest_nmap(args) -> int:
    with open(args.input, "r", encoding="utf-8") as fh:
        observations = textparse.parse_nmap_xml(fh.read())
    nids = backend_for(args).ingest(observations)
    print(f"ingested {len(observations)} hosts into {len(set(nids))} endpoints")
    return 0


def cmd_ingest_traceroute(args) -> int:
    with open(args.input, "r", encoding="utf-8") as fh:
        hops, diags = textparse.parse_traceroute(fh.read())
    _print_diags(diags)
    nids = backend_for(args).mutate(lambda exp: textparse.ingest_traceroute(exp, hops))
    print(f"ingested {len(hops)} hops into {len(set(nids))} endpoints")
    return 0


def cmd_ingest_router(args) -> int:
    specs = []
    all_diags: list[Diagnostic] = []
    for path in args.inputs:
        with open(path, "r", encoding="utf-8") as fh:
            spec, diags = textparse.parse_router_config(fh.read(), args.dialect)
        specs.append(spec)
        all_diags.extend(diags)
    link_diags = backend_for(args).mutate(lambda exp: textparse.link_routers(specs, exp))
    _print_diags(all_diags + link_diags)
    print(f"linked {len(specs)} routers")
    return 0


def cmd_trim(args) -> int:
    if not (args.mark or args.unmark or args.sweep):
        print("trim: nothing to do (use --mark/--unmark/--sweep)", file=sys.stderr)
        return 2

    def apply(exp: Experiment):
        marked = sum(tools.mark(exp, q) for q in args.mark)
        unmarked = sum(tools.unmark(exp, q) for q in args.unmark)
        swept = tools.sweep(exp) if args.sweep else 0
        return marked, unmarked, swept

    marked, unmarked, swept = backend_for(args).mutate(apply)
    if args.mark:
        print(f"marked {marked}")
    if args.unmark:
        print(f"unmarked {unmarked}")
    if args.sweep:
        print(f"swept {swept}")
    return 0


def cmd_check(args) -> int:
    exp = backend_for(args).read()
    diags = tools.check(exp)
    if args.json:
        print(json.dumps([vars(d) for d in diags], indent=2))
    else:
        _print_diags(diags)
        if not diags:
            print("no findings")
    return 1 if tools.has_errors(diags) else 0


def cmd_stats(args) -> int:
    exp = backend_for(args).read()
    s = tools.stats(exp, infer=args.infer)
    if args.json:
        print(json.dumps(s, indent=2))
        return 0
    print(f"endpoints: {s['endpoints']}")
    print(f"networks:  {s['networks']}")
    print(f"marked:    {s['marked']}")
    for nid, count in s["endpoints_per_network"].items():
        print(f"  network {nid}: {count}")
    for label, count in s["os"].items():
        print(f"  os {label}: {count}")
    return 0


def cmd_emit(args) -> int:
    exp = backend_for(args).read()
    if args.templates:
        templates = minemiter.load_templates(args.templates)
    else:
        templates = minemiter.load_default_templates()
    script, diags = minemiter.emit(exp, templates, dedup_mode=args.dedup)
    _print_diags(diags)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(script)
        print(f"wrote {len(script.splitlines())} lines to {args.out}")
    else:
        sys.stdout.write(script)
    return 0


def cmd_save(args) -> int:
    exp = backend_for(args).read()
    daemon.save_atomic(exp, args.path)
    print(f"saved to {args.path}")
    return 0


def cmd_load(args) -> int:
    with open(args.path, "rb") as fh:
        exp = ir.deserialize(fh.read())
    backend_for(args).write(exp)
    print(f"loaded {len(exp.endpoints)} endpoints, {len(exp.networks)} networks")
    return 0


def cmd_graph(args) -> int:
    backend = backend_for(args)
    if isinstance(backend, RemoteBackend):
        graph = backend.graph()
    else:
        graph = daemon.snapshot_graph(daemon.Snapshot(0, backend.read()))
    print(json.dumps(graph, indent=2))
    return 0


# --- argument wiring ------------------------------------------------------------

def _add_target_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--server", help=f"daemon URL (default {DEFAULT_SERVER}, "
                                         f"env {ENV_SERVER})")
    parser.add_argument("--file", help="operate on a local experiment file instead "
                                       "of a daemon (wins over --server)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netcarta",
        description="Network discovery to emulation-model toolchain.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("serve", help="run the discovery daemon")
    p.add_argument("--bind", help=f"host:port (default {daemon.DEFAULT_BIND}, "
                                  f"env {daemon.ENV_BIND})")
    p.add_argument("--file", help="experiment file to load on start and flush on exit")
    p.set_defaults(func=cmd_serve)

    ingest = sub.add_parser("ingest", help="parse evidence and apply it")
    ingest_sub = ingest.add_subparsers(dest="source", metavar="SOURCE")

    p = ingest_sub.add_parser("pcap", help="packet capture (classic pcap)")
    p.add_argument("input")
    p.add_argument("--conflicts", choices=("drop", "keep-first", "keep-last"),
                   default="drop", help="contradictory address bindings (default drop)")
    _add_target_flags(p)
    p.set_defaults(func=cmd_ingest_pcap)

    p = ingest_sub.add_parser("dhcpd", help="ISC dhcpd log")
    p.add_argument("input")
    _add_target_flags(p)
    p.set_defaults(func=cmd_ingest_dhcpd)

    p = ingest_sub.add_parser("nmap", help="nmap XML report")
    p.add_argument("input")
    _add_target_flags(p)
    p.set_defaults(func=cmd_ingest_nmap)

    p = ingest_sub.add_parser("traceroute", help="traceroute output")
    p.add_argument("input")
    _add_target_flags(p)
    p.set_defaults(func=cmd_ingest_traceroute)

    p = ingest_sub.add_parser("router", help="router configuration files")
    p.add_argument("inputs", nargs="+", metavar="FILE")
    p.add_argument("--dialect", choices=textparse.DIALECTS, required=True)
    _add_target_flags(p)
    p.set_defaults(func=cmd_ingest_router)

    p = sub.add_parser("trim", help="mark, unmark, and sweep endpoints")
    p.add_argument("--mark", action="append", default=[], metavar="QUERY")
    p.add_argument("--unmark", action="append", default=[], metavar="QUERY")
    p.add_argument("--sweep", action="store_true", help="delete marked endpoints")
    _add_target_flags(p)
    p.set_defaults(func=cmd_trim)

    p = sub.add_parser("check", help="gap analysis; exit 1 on errors")
    p.add_argument("--json", action="store_true")
    _add_target_flags(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("stats", help="summarize the experiment")
    p.add_argument("--json", action="store_true")
    p.add_argument("--infer", action="store_true",
                   help="estimate missing os labels from hostnames")
    _add_target_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("emit", help="compile the experiment into a boot script")
    p.add_argument("--templates", help="template directory (default: bundled set)")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--dedup", choices=("drop", "suffix", "off"), default="off")
    _add_target_flags(p)
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("save", help="write the experiment to a file")
    p.add_argument("path")
    _add_target_flags(p)
    p.set_defaults(func=cmd_save)

    p = sub.add_parser("load", help="replace the experiment from a file")
    p.add_argument("path")
    _add_target_flags(p)
    p.set_defaults(func=cmd_load)

    p = sub.add_parser("graph", help="print the visualization snapshot as JSON")
    _add_target_flags(p)
    p.set_defaults(func=cmd_graph)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except requests.RequestException as exc:
        print(f"error: cannot reach daemon: {exc}", file=sys.stderr)
        return 1
    except (IRError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Discovery daemon: one process owns the experiment, everyone else talks JSON.

Concurrency model is single-writer/multi-reader: every mutating request
runs inside one lock, against a deep copy of the current experiment, and
publishes the finished copy with a bumped generation counter.  Readers
grab whatever snapshot is currently published and never block, so a GET
can never observe a half-applied batch.  The generation tag doubles as
the long-poll cursor for the visualization (`GET /graph?since=N`).
"""

from __future__ import annotations

import copy
import json
import os
import signal
import tempfile
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from . import ir
from .ir import (
    Experiment,
    IntegrityError,
    IRError,
    Observation,
    ObservationError,
    QueryError,
)

DEFAULT_BIND = "127.0.0.1:9090"
ENV_BIND = "NETCARTA_BIND"
LONG_POLL_SECONDS = 25.0

MUTATION_KINDS = ("upsert_endpoint", "create_network", "set_edge",
                  "delete_node", "set_config")


class NotFound(IRError):
    pass


@dataclass
class Snapshot:
    generation: int
    exp: Experiment  # treated as immutable once published


class ExperimentStore:
    """Owns the experiment; all mutation funnels through transact()."""

    def __init__(self, exp: Experiment | None = None):
        self._lock = threading.Lock()
        self._changed = threading.Condition(self._lock)
        self._published = Snapshot(0, exp or ir.new_experiment())

    @property
    def generation(self) -> int:
        return self._published.generation

    def snapshot(self) -> Snapshot:
        return self._published

    def transact(self, fn):
        """Run fn against a private copy; publish it as the next generation.

        fn returns (result, mutation_count); raising leaves the published
        experiment and generation untouched.
        """
        with self._changed:
            work = copy.deepcopy(self._published.exp)
            result, count = fn(work)
            if count:
                self._published = Snapshot(self._published.generation + count, work)
                self._changed.notify_all()
            return result, self._published.generation

    def wait_for_generation(self, since: int, timeout: float = LONG_POLL_SECONDS) -> Snapshot:
        with self._changed:
            self._changed.wait_for(
                lambda: self._published.generation > since, timeout=timeout)
            return self._published

    # -- the five mutation kinds ------------------------------------------

    def apply(self, kind: str, payload) -> tuple[int | None, int]:
        """Apply one mutation; returns (affected id, new generation)."""
        if kind not in MUTATION_KINDS:
            raise ObservationError(f"unknown mutation kind {kind!r}")

        def fn(exp: Experiment):
            return self._dispatch(exp, kind, payload), 1

        return self.transact(fn)

    @staticmethod
    def _dispatch(exp: Experiment, kind: str, payload) -> int | None:
        if kind == "upsert_endpoint":
            return ir.upsert_endpoint(exp, Observation.from_doc(payload))
        if kind == "create_network":
            if not isinstance(payload, dict):
                raise ObservationError("create_network payload must be an object")
            d = ir._d_from_doc(payload.get("D", {}), "create_network")
            subnet = d.get(ir.KEY_SUBNET)
            if subnet:
                nid = ir.network_for_subnet(exp, subnet)
                net = ir.find_network(exp, nid)
                extra = {k: v for k, v in d.items() if k != ir.KEY_SUBNET}
                net.d.update(extra)
                return nid
            net = ir.NetworkNode(nid=ir.allocate_id(exp), d=d)
            exp.networks.append(net)
            return net.nid
        if kind == "set_edge":
            if not isinstance(payload, dict) or not isinstance(payload.get("nid"), int):
                raise ObservationError("set_edge payload needs integer nid")
            ep = ir.find_endpoint(exp, payload["nid"])
            if ep is None:
                raise NotFound(f"no endpoint with id {payload['nid']}")
            if "Edges" in payload:
                doc = {"NID": ep.nid, "Edges": payload["Edges"], "D": ep.d}
                replacement = ir.endpoint_from_doc(doc)
                known = {net.nid for net in exp.networks}
                for edge in replacement.edges:
                    if edge.n not in known:
                        raise IntegrityError(f"edge references unknown network {edge.n}")
                ep.edges = replacement.edges
            if "D" in payload:
                ep.d = ir._d_from_doc(payload["D"], f"endpoint {ep.nid}")
            return ep.nid
        if kind == "delete_node":
            if not isinstance(payload, dict) or not isinstance(payload.get("nid"), int):
                raise ObservationError("delete_node payload needs integer nid")
            nid = payload["nid"]
            if ir.find_endpoint(exp, nid) is not None:
                ir.delete_endpoint(exp, nid)
                return nid
            if ir.find_network(exp, nid) is not None:
                ir.delete_network(exp, nid)  # raises while referenced
                return nid
            raise NotFound(f"no node with id {nid}")
        if kind == "set_config":
            if not isinstance(payload, dict):
                raise ObservationError("set_config payload must be an object")
            exp.config = ir._d_from_doc(payload, "config")
            return None
        raise AssertionError(kind)

    # -- batch and whole-document operations -------------------------------

    def apply_observations(self, docs: list) -> tuple[list[int], int]:
        observations = [Observation.from_doc(doc) for doc in docs]

        def fn(exp: Experiment):
            nids = [ir.upsert_endpoint(exp, obs) for obs in observations]
            return nids, len(nids)

        return self.transact(fn)

    def create_endpoint(self, doc) -> tuple[int, int]:
        def fn(exp: Experiment):
            shaped = {"NID": exp.next_id, "Edges": doc.get("Edges", []),
                      "D": doc.get("D", {})}
            ep = ir.endpoint_from_doc(shaped)
            known = {net.nid for net in exp.networks}
            for edge in ep.edges:
                if edge.n not in known:
                    raise IntegrityError(f"edge references unknown network {edge.n}")
            ir.allocate_id(exp)
            exp.endpoints.append(ep)
            return ep.nid, 1

        return self.transact(fn)

    def replace_experiment(self, doc) -> int:
        replacement = ir.experiment_from_doc(doc)
        with self._changed:
            self._published = Snapshot(self._published.generation + 1, replacement)
            self._changed.notify_all()
            return self._published.generation

    def load_file(self, path: str) -> int:
        with open(path, "rb") as fh:
            replacement = ir.deserialize(fh.read())
        with self._changed:
            self._published = Snapshot(self._published.generation + 1, replacement)
            self._changed.notify_all()
            return self._published.generation

    def save_file(self, path: str) -> int:
        snap = self.snapshot()
        save_atomic(snap.exp, path)
        return snap.generation


def save_atomic(exp: Experiment, path: str) -> None:
    data = ir.serialize(exp)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".netcarta-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# --- graph projection -----------------------------------------------------------

def snapshot_graph(snap: Snapshot) -> dict:
    """Bipartite projection for the visualization client."""
    nodes = []
    links = []
    for ep in sorted(snap.exp.endpoints, key=lambda e: e.nid):
        node = {
            "id": ep.nid,
            "label": ep.d.get(ir.KEY_HOSTNAME) or f"node{ep.nid}",
            "kind": "router" if ep.d.get(ir.KEY_ROLE) == "router" else "endpoint",
        }
        if ep.d.get(ir.KEY_OS):
            node["os"] = ep.d[ir.KEY_OS]
        nodes.append(node)
        for edge in ep.edges:
            links.append({"source": ep.nid, "target": edge.n})
    for net in sorted(snap.exp.networks, key=lambda n: n.nid):
        nodes.append({
            "id": net.nid,
            "label": net.d.get(ir.KEY_NAME) or net.d.get(ir.KEY_SUBNET) or f"net{net.nid}",
            "kind": "network",
        })
    return {"nodes": nodes, "links": links, "generation": snap.generation}


# --- HTTP layer -------------------------------------------------------------------

def _status_for(exc: Exception) -> int:
    if isinstance(exc, NotFound):
        return 404
    if isinstance(exc, IntegrityError):
        return 409
    return 400


class Handler(BaseHTTPRequestHandler):
    server_version = "netcarta"
    protocol_version = "HTTP/1.1"
    store: ExperimentStore = None  # type: ignore[assignment]
    quiet = True

    def log_message(self, fmt, *args):
        if not self.quiet:
            super().log_message(fmt, *args)

    # -- plumbing ----------------------------------------------------------

    def _send(self, code: int, body: bytes, content_type="application/json") -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code: int, doc) -> None:
        self._send(code, (json.dumps(doc) + "\n").encode("utf-8"))

    def _send_error(self, code: int, message: str, diagnostics=None) -> None:
        doc = {"error": message}
        if diagnostics:
            doc["diagnostics"] = diagnostics
        self._send_json(code, doc)

    def _read_body(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return None
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ObservationError(f"request body is not JSON: {exc.msg}") from exc

    def _route(self):
        parts = urlsplit(self.path)
        segments = [s for s in parts.path.split("/") if s]
        query = parse_qs(parts.query)
        return segments, query

    # -- verbs -------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        try:
            self._get()
        except IRError as exc:
            self._send_error(_status_for(exc), str(exc))

    def do_POST(self):
        try:
            self._post()
        except IRError as exc:
            self._send_error(_status_for(exc), str(exc))
        except (OSError, ValueError) as exc:
            self._send_error(400, str(exc))

    def do_PUT(self):
        try:
            self._put()
        except IRError as exc:
            self._send_error(_status_for(exc), str(exc))

    def do_DELETE(self):
        try:
            self._delete()
        except IRError as exc:
            self._send_error(_status_for(exc), str(exc))

    # -- handlers ------------------------------------------------------------

    def _get(self):
        segments, query = self._route()
        snap = self.store.snapshot()
        if segments == ["experiment"]:
            self._send(200, ir.serialize(snap.exp))
        elif segments == ["nodes"]:
            eps = snap.exp.endpoints
            if "q" in query:
                eps = ir.find_nodes(snap.exp, query["q"][0])
            self._send_json(200, [ir.endpoint_to_doc(ep)
                                  for ep in sorted(eps, key=lambda e: e.nid)])
        elif len(segments) == 2 and segments[0] == "nodes":
            ep = ir.find_endpoint(snap.exp, self._nid(segments[1]))
            if ep is None:
                raise NotFound(f"no endpoint with id {segments[1]}")
            self._send_json(200, ir.endpoint_to_doc(ep))
        elif segments == ["networks"]:
            self._send_json(200, [ir.network_to_doc(n)
                                  for n in sorted(snap.exp.networks, key=lambda n: n.nid)])
        elif len(segments) == 2 and segments[0] == "networks":
            net = ir.find_network(snap.exp, self._nid(segments[1]))
            if net is None:
                raise NotFound(f"no network with id {segments[1]}")
            self._send_json(200, ir.network_to_doc(net))
        elif segments == ["config"]:
            self._send_json(200, dict(sorted(snap.exp.config.items())))
        elif segments == ["graph"]:
            if "since" in query:
                try:
                    since = int(query["since"][0])
                except ValueError:
                    raise ObservationError("since must be an integer") from None
                snap = self.store.wait_for_generation(since)
            self._send_json(200, snapshot_graph(snap))
        else:
            raise NotFound(f"no such path {self.path}")

    def _post(self):
        segments, _ = self._route()
        body = self._read_body()
        if segments == ["observations"]:
            docs = body if isinstance(body, list) else [body]
            if body is None:
                raise ObservationError("observation body required")
            nids, generation = self.store.apply_observations(docs)
            self._send_json(200, {"ids": nids, "generation": generation})
        elif segments == ["nodes"]:
            nid, generation = self.store.create_endpoint(body or {})
            self._send_json(201, {"id": nid, "generation": generation})
        elif segments == ["networks"]:
            nid, generation = self.store.apply("create_network", body or {})
            self._send_json(201, {"id": nid, "generation": generation})
        elif segments == ["save"]:
            if not isinstance(body, dict) or "path" not in body:
                raise ObservationError('save body must be {"path": ...}')
            generation = self.store.save_file(body["path"])
            self._send_json(200, {"generation": generation, "path": body["path"]})
        elif segments == ["load"]:
            if not isinstance(body, dict) or "path" not in body:
                raise ObservationError('load body must be {"path": ...}')
            generation = self.store.load_file(body["path"])
            self._send_json(200, {"generation": generation})
        else:
            raise NotFound(f"no such path {self.path}")

    def _put(self):
        segments, _ = self._route()
        body = self._read_body()
        if segments == ["experiment"]:
            if body is None:
                raise ObservationError("experiment document required")
            generation = self.store.replace_experiment(body)
            self._send_json(200, {"generation": generation})
        elif len(segments) == 2 and segments[0] == "nodes":
            payload = dict(body or {})
            payload["nid"] = self._nid(segments[1])
            nid, generation = self.store.apply("set_edge", payload)
            self._send_json(200, {"id": nid, "generation": generation})
        elif segments == ["config"]:
            if not isinstance(body, dict):
                raise ObservationError("config must be an object")
            _, generation = self.store.apply("set_config", body)
            self._send_json(200, {"generation": generation})
        else:
            raise NotFound(f"no such path {self.path}")

    def _delete(self):
        segments, _ = self._route()
        if len(segments) == 2 and segments[0] in ("nodes", "networks"):
            nid = self._nid(segments[1])
            snap = self.store.snapshot()
            if segments[0] == "nodes" and ir.find_endpoint(snap.exp, nid) is None:
                raise NotFound(f"no endpoint with id {nid}")
            if segments[0] == "networks" and ir.find_network(snap.exp, nid) is None:
                raise NotFound(f"no network with id {nid}")
            _, generation = self.store.apply("delete_node", {"nid": nid})
            self._send_json(200, {"id": nid, "generation": generation})
        else:
            raise NotFound(f"no such path {self.path}")

    @staticmethod
    def _nid(text: str) -> int:
        try:
            return int(text)
        except ValueError:
            raise ObservationError(f"node id must be an integer, got {text!r}") from None


def parse_bind(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bad bind address {text!r}, want host:port")
    return host or "127.0.0.1", int(port)


def make_server(bind: str, store: ExperimentStore) -> ThreadingHTTPServer:
    host, port = parse_bind(bind)
    handler = type("BoundHandler", (Handler,), {"store": store})
    try:
        server = ThreadingHTTPServer((host, port), handler)
    except OSError as exc:
        raise OSError(f"cannot bind {bind}: {exc.strerror or exc}") from exc
    server.daemon_threads = True
    return server


def resolve_bind(cli_value: str | None) -> str:
    """CLI flag beats NETCARTA_BIND beats the default."""
    return cli_value or os.environ.get(ENV_BIND) or DEFAULT_BIND


def serve(bind: str | None = None, experiment_path: str | None = None) -> int:
    """Run until SIGINT/SIGTERM; flush the experiment on the way out."""
    exp = None
    if experiment_path and os.path.exists(experiment_path):
        with open(experiment_path, "rb") as fh:
            try:
                exp = ir.deserialize(fh.read())
            except IRError as exc:
                print(f"refusing to start: {experiment_path}: {exc}")
                return 1

    store = ExperimentStore(exp)
    address = resolve_bind(bind)
    try:
        server = make_server(address, store)
    except OSError as exc:
        print(str(exc))
        return 1

    def shutdown(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)
    print(f"netcarta daemon on http://{address} "
          f"(experiment {experiment_path or 'in-memory only'})")
    try:
        server.serve_forever(poll_interval=0.2)
    finally:
        server.server_close()
        if experiment_path:
            save_atomic(store.snapshot().exp, experiment_path)
            print(f"experiment saved to {experiment_path}")
    return 0

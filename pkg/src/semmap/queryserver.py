"""Line-oriented query endpoint over the most recent object-map snapshot.

Protocol: one request per text line, one JSON line back per request.

    LIST                  -> [{"id", "class", "x", "y", "yaw", "hits", "mean_score"}, ...]
    NEAREST <class> <x> <y> -> one object document or null
    COUNT <class>         -> integer

Unknown verbs answer ``{"error": "unknown verb"}`` and the connection stays
open. Each handler reads the current snapshot reference exactly once per
request, so every response is consistent with one published snapshot.
"""

from __future__ import annotations

import json
import socketserver
import threading
from dataclasses import dataclass

from .semantic_layer import MapObject, ObjectMapSnapshot, object_doc


class SnapshotStore:
    """Atomic holder of the latest immutable snapshot."""

    def __init__(self, snapshot: ObjectMapSnapshot | None = None):
        self._snapshot = snapshot if snapshot is not None else ObjectMapSnapshot(0.0, ())

    def publish(self, snapshot: ObjectMapSnapshot) -> None:
        self._snapshot = snapshot

    def current(self) -> ObjectMapSnapshot:
        return self._snapshot


class UnknownVerb(ValueError):
    pass


class BadArguments(ValueError):
    pass


@dataclass(frozen=True)
class QueryRequest:
    verb: str  # LIST | NEAREST | COUNT
    class_label: str | None = None
    x: float | None = None
    y: float | None = None


def parse_request(line: str) -> QueryRequest:
    """Parse one request line; verbs and arities are exactly as documented."""
    parts = line.split()
    verb = parts[0] if parts else ""
    if verb == "LIST":
        if len(parts) != 1:
            raise BadArguments(line)
        return QueryRequest("LIST")
    if verb == "COUNT":
        if len(parts) != 2:
            raise BadArguments(line)
        return QueryRequest("COUNT", class_label=parts[1])
    if verb == "NEAREST":
        if len(parts) != 4:
            raise BadArguments(line)
        try:
            return QueryRequest("NEAREST", parts[1], float(parts[2]), float(parts[3]))
        except ValueError:
            raise BadArguments(line) from None
    raise UnknownVerb(verb)


def answer(request: QueryRequest, snapshot: ObjectMapSnapshot):
    if request.verb == "LIST":
        return [object_doc(o) for o in snapshot.objects]
    if request.verb == "COUNT":
        return sum(1 for o in snapshot.objects if o.class_label == request.class_label)
    best: MapObject | None = None
    best_key = None
    for o in snapshot.objects:
        if o.class_label != request.class_label:
            continue
        dx = request.x - o.pose.x
        dy = request.y - o.pose.y
        key = (dx * dx + dy * dy, o.id)
        if best_key is None or key < best_key:
            best_key = key
            best = o
    return object_doc(best) if best is not None else None


def handle_request(line: str, snapshot: ObjectMapSnapshot) -> str:
    """Answer one request line against one snapshot; always a single JSON line."""
    try:
        request = parse_request(line)
    except BadArguments:
        return '{"error": "bad arguments"}'
    except UnknownVerb:
        return '{"error": "unknown verb"}'
    return json.dumps(answer(request, snapshot))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            snapshot = self.server.store.current()  # type: ignore[attr-defined]
            response = handle_request(line, snapshot)
            self.wfile.write(response.encode("utf-8") + b"\n")
            self.wfile.flush()


class QueryServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], store: SnapshotStore):
        super().__init__(address, _Handler)
        self.store = store
        self._thread: threading.Thread | None = None

    def handle_error(self, request, client_address) -> None:
        # an I/O failure closes only the affected connection
        pass

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise ValueError(f"address '{addr}' must look like host:port")
    return (host or "127.0.0.1", int(port))


def serve_queries(store: SnapshotStore, addr: str | tuple[str, int]) -> QueryServer:
    """Bind, start serving in a background thread, and return the server.

    Bind failures propagate as OSError.
    """
    address = parse_address(addr) if isinstance(addr, str) else addr
    server = QueryServer(address, store)
    server.start()
    return server

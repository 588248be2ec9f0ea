"""The extraction service: sessions, worker pool, result streaming.

One process hosts the master loop; each client session gets its own work
queue and worker threads (sessions must not starve each other) while all
sessions share one block cache.  A single serializer thread per session
writes the outbound stream, which is where obsolete results are finally
suppressed: no frame of an old spec version is ever written after the
ABORT_ACK that made it obsolete.

The listen socket speaks three dialects, sniffed from the first bytes:
raw framed TCP, WebSocket (binary messages, identical frame bytes) and
plain HTTP GET for static viewer assets.
"""

from __future__ import annotations

import logging
import mimetypes
import os
import queue as queue_mod
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .. import protocol
from ..extract import extract_node
from ..model import SpecSet
from ..preprocess import OctreeStore
from ..protocol import ErrorCode, FrameType, ProtocolError, ResultKey
from .blockcache import BlockCache
from .workqueue import VersionError, WorkItem, WorkQueue
from . import ws

log = logging.getLogger("voxcut.backend")


@dataclass
class BackendConfig:
    store_path: str
    listen: str = "127.0.0.1"
    port: int = 0  # 0: pick a free port
    workers: int = 2
    cache_bytes: int = 256 * 1024 * 1024
    assets_dir: str | None = None
    worker_delay: float = 0.0  # artificial per-item delay; test/bench knob
    stats_interval: float = 0.5

    @classmethod
    def from_env(cls, **overrides) -> "BackendConfig":
        """Environment variables mirror the serve CLI flags."""
        env = os.environ
        base = dict(
            store_path=env.get("VOXCUT_STORE", ""),
            listen=env.get("VOXCUT_LISTEN", "127.0.0.1"),
            port=int(env.get("VOXCUT_PORT", "0")),
            workers=int(env.get("VOXCUT_WORKERS", "2")),
            cache_bytes=int(env.get("VOXCUT_CACHE_BYTES", str(256 * 1024 * 1024))),
            assets_dir=env.get("VOXCUT_ASSETS") or None,
            worker_delay=float(env.get("VOXCUT_WORKER_DELAY", "0")),
        )
        base.update(overrides)
        return cls(**base)


class _RawTransport:
    def __init__(self, sock: socket.socket, initial: bytes = b""):
        self._sock = sock
        self._buf = bytearray(initial)
        self._send_lock = threading.Lock()

    def recv_frame(self) -> tuple[int, bytes] | None:
        while True:
            got = protocol.split_frame(self._buf)
            if got is not None:
                ftype, payload, used = got
                del self._buf[:used]
                return ftype, payload
            chunk = self._sock.recv(65536)
            if not chunk:
                return None
            self._buf += chunk

    def send(self, frame: bytes) -> None:
        with self._send_lock:
            self._sock.sendall(frame)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class _WsTransport:
    def __init__(self, conn: ws.WebSocketConnection):
        self._conn = conn

    def recv_frame(self) -> tuple[int, bytes] | None:
        while True:
            message = self._conn.recv_message()
            if message is None:
                return None
            got = protocol.split_frame(message)
            if got is None:
                raise ProtocolError("websocket message shorter than one frame")
            ftype, payload, used = got
            if used != len(message):
                raise ProtocolError("websocket message must hold exactly one frame")
            return ftype, payload

    def send(self, frame: bytes) -> None:
        self._conn.send_binary(frame)

    def close(self) -> None:
        self._conn.close()


@dataclass
class _OutMessage:
    kind: str  # "frames" | "ack" | "stop"
    version: int = 0
    frames: list[bytes] = field(default_factory=list)
    item: WorkItem | None = None


def worker_loop(
    queue: WorkQueue,
    cache: BlockCache,
    store: OctreeStore,
    sink,
    *,
    delay: float = 0.0,
    stop=None,
) -> None:
    """Pull items until shutdown: load (cached), extract, hand frames to sink.

    ``sink(item, frames)`` receives the encoded RESULT_MESH frames plus the
    NODE_DONE marker for every completed item, or a single ERROR frame when
    extraction failed; the worker keeps going either way.  Suppressed or
    stale items produce no frames at all.
    """
    fields = store.meta.fields
    while stop is None or not stop.is_set():
        item = queue.pop(timeout=0.5)
        if item is None:
            if queue._shutdown or (stop is not None and stop.is_set()):
                return
            continue
        if delay > 0:
            time.sleep(delay)
        key = item.key
        try:
            block = cache.get_or_load(
                (key.timestep, key.node),
                lambda: store.read_block(key.timestep, key.node),
            )
            specset: SpecSet = item.payload
            meshes = extract_node(block, specset, store.meta)
            if not (item.suppressed or key.spec_version != queue.current_version):
                frames = [protocol.encode_result_mesh(m, fields) for m in meshes]
                frames.append(protocol.encode_node_done(key))
                sink(item, frames)
        except Exception as exc:
            log.warning("extraction failed for %s: %s", key, exc)
            sink(
                item,
                [protocol.encode_error(ErrorCode.EXTRACTION, f"node {key.node}: {exc}")],
            )
        finally:
            queue.mark_done(item)


class Session:
    """One client connection: reader, queue, workers, serializer."""

    def __init__(self, backend: "Backend", transport, session_id: int):
        self.backend = backend
        self.transport = transport
        self.id = session_id
        self.queue = WorkQueue()
        self.outbox: "queue_mod.Queue[_OutMessage]" = queue_mod.Queue()
        self.specset: SpecSet | None = None
        self.closing = threading.Event()
        self._threads: list[threading.Thread] = []

    # ---- lifecycle ----------------------------------------------------

    def run(self) -> None:
        ser = threading.Thread(target=self._serializer, name=f"ser-{self.id}", daemon=True)
        ser.start()
        self._threads.append(ser)
        for i in range(self.backend.config.workers):
            th = threading.Thread(target=self._worker, name=f"wrk-{self.id}-{i}", daemon=True)
            th.start()
            self._threads.append(th)
        try:
            self._reader()
        finally:
            self.close()

    def close(self) -> None:
        if self.closing.is_set():
            return
        self.closing.set()
        self.queue.shutdown()
        self.outbox.put(_OutMessage("stop"))
        for th in self._threads:
            th.join(timeout=5.0)
        self.transport.close()

    # ---- inbound ------------------------------------------------------

    def _reader(self) -> None:
        saw_hello = False
        while not self.closing.is_set():
            try:
                got = self.transport.recv_frame()
            except (ConnectionError, OSError, ProtocolError, ws.WebSocketError):
                return
            if got is None:
                return
            ftype, payload = got
            try:
                if not saw_hello:
                    if ftype != FrameType.HELLO:
                        raise ProtocolError("first frame must be HELLO")
                    proto = protocol.decode_hello(payload)
                    if proto != protocol.PROTO_VERSION:
                        raise ProtocolError(f"unsupported protocol {proto}")
                    saw_hello = True
                    self._send_now(protocol.encode_dataset_info(self.backend.store.meta))
                elif ftype == FrameType.OPEN:
                    self._handle_open(payload)
                elif ftype == FrameType.SET_SPEC:
                    self._handle_set_spec(payload)
                elif ftype == FrameType.CUT_DELTA:
                    self._handle_cut_delta(payload)
                else:
                    raise ProtocolError(f"unexpected frame type 0x{ftype:02x}")
            except VersionError as exc:
                self._send_now(protocol.encode_error(ErrorCode.VERSION, str(exc)))
                return
            except (ProtocolError, Exception) as exc:  # malformed frame: drop session
                if not isinstance(exc, ProtocolError):
                    log.exception("session %d: frame dispatch failed", self.id)
                self._send_now(protocol.encode_error(ErrorCode.PROTOCOL, str(exc)))
                return

    def _handle_open(self, payload: bytes) -> None:
        dataset_id = protocol.decode_open(payload)
        if dataset_id != self.backend.store.dataset_id:
            self._send_now(
                protocol.encode_error(ErrorCode.UNKNOWN_DATASET, f"no dataset {dataset_id!r}")
            )
            return
        self._send_now(protocol.encode_dataset_info(self.backend.store.meta))

    def _handle_set_spec(self, payload: bytes) -> None:
        specset = protocol.decode_set_spec(payload, self.backend.store.meta.fields)
        self.queue.abort_all(specset.version)  # raises VersionError if stale
        self.specset = specset
        self.outbox.put(
            _OutMessage("ack", specset.version, [protocol.encode_abort_ack(specset.version)])
        )

    def _handle_cut_delta(self, payload: bytes) -> None:
        version, timestep, delta = protocol.decode_cut_delta(payload)
        if not 0 <= timestep < self.backend.store.meta.timesteps:
            raise ProtocolError(f"timestep {timestep} out of range")
        specset = self.specset
        if specset is None or specset.version != version:
            self.queue.ignored_deltas += 1
            return
        self.queue.apply_cut_delta(delta, version, timestep, payload=specset)

    # ---- workers ------------------------------------------------------

    def _worker(self) -> None:
        def sink(item: WorkItem, frames: list[bytes]) -> None:
            self.outbox.put(_OutMessage("frames", item.key.spec_version, frames, item))

        worker_loop(
            self.queue,
            self.backend.cache,
            self.backend.store,
            sink,
            delay=self.backend.config.worker_delay,
            stop=self.closing,
        )

    # ---- outbound -----------------------------------------------------

    def _send_now(self, frame: bytes) -> None:
        try:
            self.transport.send(frame)
        except OSError:
            self.closing.set()

    def _serializer(self) -> None:
        """Single writer; enforces the version floor at the send boundary."""
        floor = 0
        interval = self.backend.config.stats_interval
        while True:
            try:
                msg = self.outbox.get(timeout=interval)
            except queue_mod.Empty:
                if self.closing.is_set():
                    return
                self._send_stats()
                continue
            if msg.kind == "stop":
                return
            if msg.kind == "ack":
                floor = max(floor, msg.version)
            elif msg.version < floor or (msg.item is not None and msg.item.suppressed):
                continue  # suppressed: never written after the newer ack
            if self.closing.is_set():
                return
            for frame in msg.frames:
                try:
                    self.transport.send(frame)
                except OSError:
                    self.closing.set()
                    return

    def _send_stats(self) -> None:
        pending, running = self.queue.counts()
        hits, misses = self.backend.cache.counters()
        self._send_now(protocol.encode_stats(pending, running, hits, misses))


class Backend:
    """Accept loop plus shared store and cache."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.store = OctreeStore(config.store_path)
        self.cache = BlockCache(config.cache_bytes)
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._sessions: list[Session] = []
        self._next_id = 0
        self._stopping = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None, "backend not started"
        return self._listener.getsockname()[:2]

    def start(self) -> "Backend":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self.config.listen, self.config.port))
        sock.listen(64)
        self._listener = sock
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        log.info("listening on %s:%d", *self.address)
        return self

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stopping.wait(1.0):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for session in list(self._sessions):
            session.close()
        self.store.close()

    # ---- connection handling -------------------------------------------

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stopping.is_set():
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._handle_conn, args=(sock,), daemon=True).start()

    def _handle_conn(self, sock: socket.socket) -> None:
        try:
            head = sock.recv(4, socket.MSG_PEEK)
        except OSError:
            sock.close()
            return
        if head[:4] in (b"GET ", b"HEAD", b"POST"):
            self._handle_http(sock)
            return
        transport = _RawTransport(sock)
        self._run_session(transport)

    def _handle_http(self, sock: socket.socket) -> None:
        data = bytearray()
        try:
            while b"\r\n\r\n" not in data:
                chunk = sock.recv(8192)
                if not chunk:
                    sock.close()
                    return
                data += chunk
                if len(data) > 65536:
                    sock.close()
                    return
            method, path, headers = ws.parse_http_request(bytes(data))
            if headers.get("upgrade", "").lower() == "websocket":
                sock.sendall(ws.handshake_response(headers))
                conn = ws.WebSocketConnection(sock)
                self._run_session(_WsTransport(conn))
                return
            self._serve_static(sock, method, path)
        except (ws.WebSocketError, OSError):
            try:
                sock.close()
            except OSError:
                pass

    def _serve_static(self, sock: socket.socket, method: str, path: str) -> None:
        def respond(status: str, body: bytes, ctype: str = "text/plain") -> None:
            head = (
                f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
                f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n"
            ).encode("ascii")
            sock.sendall(head + body)

        try:
            if method != "GET" or self.config.assets_dir is None:
                respond("404 Not Found", b"not found")
                return
            rel = path.split("?", 1)[0].lstrip("/") or "index.html"
            root = Path(self.config.assets_dir).resolve()
            target = (root / rel).resolve()
            if not str(target).startswith(str(root)) or not target.is_file():
                respond("404 Not Found", b"not found")
                return
            ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
            respond("200 OK", target.read_bytes(), ctype)
        except OSError:
            pass
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def _run_session(self, transport) -> None:
        session = Session(self, transport, self._next_id)
        self._next_id += 1
        self._sessions.append(session)
        try:
            session.run()
        finally:
            if session in self._sessions:
                self._sessions.remove(session)


def serve(config: BackendConfig) -> None:
    """Run the service until interrupted."""
    Backend(config).serve_forever()

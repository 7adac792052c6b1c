"""Client side of the model-backend wire protocol.

One JSON object per line, UTF-8, "\\n" terminated, over either a child
process's standard streams or a TCP connection.  Requests carry strictly
increasing integer ids; responses may arrive in any order (up to a
configurable pipelining window) and are re-associated by id.  Log
probabilities travel on the wire (not probabilities) to avoid underflow.

Ops: vocab, tokenize, detokenize, predict, close.  The vocab reply doubles
as the handshake and advertises the backend's mask token id, which is where
the in-memory MASK sentinel gets translated for transport.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import queue
import shlex
import socket
import subprocess
import threading
from typing import Sequence

from .core import MASK, ClozeForgeError, DistributionProvider, TokenId

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0
DEFAULT_WINDOW = 8


class SpawnFailure(ClozeForgeError):
    pass


class HandshakeTimeout(ClozeForgeError):
    pass


class ProtocolVersionMismatch(ClozeForgeError):
    pass


class ProtocolError(ClozeForgeError):
    pass


class BridgeTimeout(ClozeForgeError):
    pass


class SessionClosed(ClozeForgeError):
    pass


class BackendError(ClozeForgeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class _StdioTransport:
    def __init__(self, argv: Sequence[str]):
        try:
            self._proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise SpawnFailure(f"cannot spawn backend {argv!r}: {exc}") from exc

    def send_line(self, line: str) -> None:
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise SessionClosed(f"backend pipe closed: {exc}") from exc

    def read_line(self) -> str:
        return self._proc.stdout.readline()

    def close(self) -> None:
        try:
            self._proc.stdin.close()
        except Exception:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise SpawnFailure(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(None)
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
        self._writer = self._sock.makefile("w", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self._writer.write(line + "\n")
            self._writer.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise SessionClosed(f"connection closed: {exc}") from exc

    def read_line(self) -> str:
        try:
            return self._reader.readline()
        except (ValueError, OSError):
            return ""

    def close(self) -> None:
        try:
            self._sock.close()
        except Exception:
            pass


class _Pending:
    __slots__ = ("queue",)

    def __init__(self):
        self.queue = queue.Queue(maxsize=1)

    def result(self, timeout: float):
        try:
            outcome = self.queue.get(timeout=timeout)
        except queue.Empty:
            raise BridgeTimeout(f"no response within {timeout} s") from None
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


class Session:
    """A serial conversation with one backend, pipelined up to a window.

    Handles may move between threads but must not be used concurrently.
    """

    def __init__(self, transport, timeout: float = DEFAULT_TIMEOUT,
                 window: int = DEFAULT_WINDOW):
        self._transport = transport
        self.timeout = timeout
        self._window = threading.BoundedSemaphore(window)
        self._lock = threading.Lock()
        self._next_id = 1
        self._pending: dict[int, _Pending] = {}
        self._fatal: Exception | None = None
        self._closed = False
        self.vocab_info: dict | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # -- reader side ------------------------------------------------------

    def _read_loop(self):
        while True:
            line = self._transport.read_line()
            if not line:
                self._fail_all(SessionClosed("backend closed the connection"))
                return
            line = line.strip()
            if not line:
                continue
            try:
                frame = json.loads(line)
                if not isinstance(frame, dict):
                    raise ValueError("frame is not an object")
            except ValueError:
                self._fail_all(ProtocolError(f"unparseable frame: {line!r}"))
                return
            frame_id = frame.get("id")
            with self._lock:
                pending = self._pending.pop(frame_id, None)
            if pending is None:
                self._fail_all(ProtocolError(f"response for unknown id {frame_id!r}"))
                return
            if "error" in frame:
                err = frame["error"] or {}
                pending.queue.put(BackendError(
                    str(err.get("code", "UNKNOWN")), str(err.get("message", ""))
                ))
            elif "result" in frame:
                pending.queue.put(frame["result"])
            else:
                self._fail_all(ProtocolError(f"frame without result or error: {line!r}"))
                return

    def _fail_all(self, exc: Exception):
        with self._lock:
            self._fatal = exc
            pending, self._pending = self._pending, {}
        for p in pending.values():
            p.queue.put(exc)

    # -- caller side ------------------------------------------------------

    def call(self, op: str, timeout: float | None = None, **payload):
        return self.submit(op, **payload).result(timeout or self.timeout)

    def submit(self, op: str, **payload) -> "_PendingCall":
        if self._closed:
            raise SessionClosed("session already closed")
        with self._lock:
            if self._fatal is not None:
                raise self._fatal
            request_id = self._next_id
            self._next_id += 1
            pending = _Pending()
            self._pending[request_id] = pending
        self._window.acquire()
        try:
            frame = {"id": request_id, "op": op, **payload}
            self._transport.send_line(json.dumps(frame, ensure_ascii=False))
        except Exception:
            self._window.release()
            with self._lock:
                self._pending.pop(request_id, None)
            raise
        return _PendingCall(self, pending)

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self._transport.send_line(json.dumps({"id": self._next_id, "op": "close"}))
        except Exception:
            pass
        self._transport.close()


class _PendingCall:
    def __init__(self, session: Session, pending: _Pending):
        self._session = session
        self._pending = pending

    def result(self, timeout: float | None = None):
        try:
            return self._pending.result(timeout or self._session.timeout)
        finally:
            self._session._window.release()


def _parse_spec(spec):
    """Backend spec: argv list, "cmd:<command line>", or "tcp:<host:port>"."""
    if isinstance(spec, (list, tuple)):
        return ("cmd", list(spec))
    if isinstance(spec, str):
        kind, sep, rest = spec.partition(":")
        if not sep:
            raise ValueError(f"malformed backend spec {spec!r}")
        if kind == "cmd":
            return ("cmd", shlex.split(rest))
        if kind == "tcp":
            host, _, port = rest.rpartition(":")
            return ("tcp", (host, int(port)))
    raise ValueError(f"malformed backend spec {spec!r}")


def open_session(spec, timeout: float = DEFAULT_TIMEOUT,
                 window: int = DEFAULT_WINDOW) -> Session:
    """Launch or connect to a backend and run the vocab handshake."""
    kind, target = _parse_spec(spec)
    if kind == "cmd":
        transport = _StdioTransport(target)
    else:
        transport = _TcpTransport(*target, timeout=timeout)
    session = Session(transport, timeout=timeout, window=window)
    try:
        try:
            info = session.call("vocab", timeout=timeout)
        except BridgeTimeout:
            raise HandshakeTimeout(f"no vocab reply within {timeout} s") from None
        if not isinstance(info, dict) or "vocab_size" not in info or "mask_id" not in info:
            raise ProtocolError(f"malformed vocab reply: {info!r}")
        if info.get("protocol", PROTOCOL_VERSION) != PROTOCOL_VERSION:
            raise ProtocolVersionMismatch(
                f"backend speaks protocol {info.get('protocol')!r}, "
                f"client speaks {PROTOCOL_VERSION}"
            )
        session.vocab_info = info
        return session
    except Exception:
        session.close()
        raise


class BridgeProvider(DistributionProvider):
    """DistributionProvider over an open bridge session."""

    thread_safe = False  # one session is a serial conversation

    def __init__(self, session: Session):
        if session.vocab_info is None:
            raise ProtocolError("session has not completed the vocab handshake")
        self._session = session
        self._vocab_size = int(session.vocab_info["vocab_size"])
        self._mask_id = int(session.vocab_info["mask_id"])

    @property
    def mask_id(self) -> int:
        return self._mask_id

    def vocab_size(self) -> int:
        return self._vocab_size

    def tokenize(self, text: str) -> list[TokenId]:
        result = self._session.call("tokenize", text=text)
        ids = result.get("ids") if isinstance(result, dict) else None
        if not isinstance(ids, list):
            raise ProtocolError(f"malformed tokenize reply: {result!r}")
        return [int(i) for i in ids]

    def detokenize(self, ids: Sequence[TokenId]) -> str:
        result = self._session.call("detokenize", ids=[int(i) for i in ids])
        if not isinstance(result, dict) or not isinstance(result.get("text"), str):
            raise ProtocolError(f"malformed detokenize reply: {result!r}")
        return result["text"]

    def predict(self, tokens, mask_positions, top_k):
        wire_tokens = [self._mask_id if t is MASK else int(t) for t in tokens]
        result = self._session.call(
            "predict", tokens=wire_tokens,
            mask_positions=[int(p) for p in mask_positions], top_k=int(top_k),
        )
        dists = result.get("dists") if isinstance(result, dict) else None
        if not isinstance(dists, list) or len(dists) != len(mask_positions):
            raise ProtocolError(f"malformed predict reply: {result!r}")
        out = []
        for dist in dists:
            parsed = []
            prev = math.inf
            for entry in dist:
                try:
                    tok, logp = entry
                    tok, logp = int(tok), float(logp)
                except (TypeError, ValueError):
                    raise ProtocolError(f"malformed distribution entry: {entry!r}") from None
                if logp > 0.0:
                    raise ProtocolError(f"log probability above zero: {logp}")
                if logp > prev:
                    raise ProtocolError("distribution not sorted by descending log probability")
                prev = logp
                parsed.append((tok, logp))
            if len(parsed) > top_k:
                raise ProtocolError(f"backend returned {len(parsed)} entries for top_k={top_k}")
            out.append(parsed)
        return out

    def close(self):
        self._session.close()


class CachingProvider(DistributionProvider):
    """File-backed response cache keyed by request hash.

    Unsafe across model versions: the cache directory must be per-backend.
    """

    def __init__(self, inner: DistributionProvider, cache_dir):
        self._inner = inner
        self._dir = cache_dir
        os.makedirs(cache_dir, exist_ok=True)
        self.thread_safe = inner.thread_safe

    def _cached(self, op, payload, compute):
        key = hashlib.sha256(
            json.dumps({"op": op, **payload}, sort_keys=True).encode()
        ).hexdigest()
        path = os.path.join(self._dir, key + ".json")
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        value = compute()
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(value, fh)
        os.replace(tmp, path)
        return value

    def vocab_size(self):
        return self._inner.vocab_size()

    def tokenize(self, text):
        return self._cached("tokenize", {"text": text}, lambda: self._inner.tokenize(text))

    def detokenize(self, ids):
        ids = [int(i) for i in ids]
        return self._cached("detokenize", {"ids": ids}, lambda: self._inner.detokenize(ids))

    def predict(self, tokens, mask_positions, top_k):
        payload = {
            "tokens": ["M" if t is MASK else int(t) for t in tokens],
            "mask_positions": [int(p) for p in mask_positions],
            "top_k": int(top_k),
        }
        raw = self._cached(
            "predict", payload,
            lambda: [[[t, lp] for t, lp in d]
                     for d in self._inner.predict(tokens, mask_positions, top_k)],
        )
        return [[(int(t), float(lp)) for t, lp in dist] for dist in raw]

"""Wire-protocol server: newline-delimited JSON over stdio or TCP.

Each request is {"id": int, "op": str, ...}; each response carries the same
id with either "result" or "error" {"code", "message"}.  The vocab reply is
the handshake and advertises the protocol version, the mask token id, and
the server-side top_k cap.  Malformed input never crashes the loop: it is
answered with a BAD_REQUEST error frame.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
import threading

from .models import ModelLoadError, load_model

PROTOCOL_VERSION = 1
DEFAULT_TOP_K_CAP = 1000


class Service:
    def __init__(self, model, top_k_cap: int = DEFAULT_TOP_K_CAP):
        self._model = model
        self._cap = top_k_cap
        self._lock = threading.Lock()  # one model, serialized forward passes

    def handle_line(self, line: str) -> dict | None:
        try:
            frame = json.loads(line)
            if not isinstance(frame, dict):
                raise ValueError("frame is not an object")
        except ValueError as exc:
            return _error(None, "BAD_REQUEST", f"unparseable frame: {exc}")
        request_id = frame.get("id")
        if not isinstance(request_id, int):
            return _error(None, "BAD_REQUEST", "missing integer id")
        try:
            return self._dispatch(request_id, frame)
        except _Bad as exc:
            return _error(request_id, "BAD_REQUEST", str(exc))
        except Exception as exc:  # never crash the serving loop
            return _error(request_id, "INTERNAL", f"{type(exc).__name__}: {exc}")

    def _dispatch(self, request_id: int, frame: dict) -> dict | None:
        op = frame.get("op")
        if op == "vocab":
            return _result(request_id, {
                "vocab_size": self._model.vocab_size,
                "mask_id": self._model.mask_id,
                "protocol": PROTOCOL_VERSION,
                "top_k_cap": self._cap,
            })
        if op == "tokenize":
            text = frame.get("text")
            if not isinstance(text, str):
                raise _Bad("tokenize needs a string 'text'")
            return _result(request_id, {"ids": self._model.tokenize(text)})
        if op == "detokenize":
            ids = frame.get("ids")
            if not _int_list(ids) or not all(
                    0 <= i < self._model.vocab_size for i in ids):
                raise _Bad("detokenize needs a list of in-range token ids")
            return _result(request_id, {"text": self._model.detokenize(ids)})
        if op == "predict":
            return self._predict(request_id, frame)
        if op == "close":
            return None
        return _error(request_id, "UNSUPPORTED", f"unknown op {op!r}")

    def _predict(self, request_id: int, frame: dict) -> dict:
        tokens = frame.get("tokens")
        positions = frame.get("mask_positions")
        top_k = frame.get("top_k", 1)
        if not _int_list(tokens) or not tokens:
            raise _Bad("predict needs a non-empty integer 'tokens' list")
        if not all(0 <= t < self._model.vocab_size for t in tokens):
            raise _Bad("token id out of vocabulary range")
        if not _int_list(positions) or not positions:
            raise _Bad("predict needs a non-empty 'mask_positions' list")
        if not all(0 <= p < len(tokens) for p in positions):
            raise _Bad("mask position out of range")
        if not isinstance(top_k, int) or top_k < 1:
            raise _Bad("top_k must be a positive integer")
        top_k = min(top_k, self._cap)
        with self._lock:
            dists = self._model.fill(tokens, positions, top_k)
        return _result(request_id, {
            "dists": [[[tok, logp] for tok, logp in dist] for dist in dists],
        })


class _Bad(Exception):
    pass


def _int_list(value) -> bool:
    return isinstance(value, list) and all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    )


def _result(request_id: int, payload: dict) -> dict:
    return {"id": request_id, "result": payload}


def _error(request_id, code: str, message: str) -> dict:
    return {"id": request_id, "error": {"code": code, "message": message}}


def serve_stream(service: Service, reader, writer) -> None:
    for line in reader:
        line = line.strip()
        if not line:
            continue
        response = service.handle_line(line)
        if response is None:  # a close request
            return
        writer.write(json.dumps(response) + "\n")
        writer.flush()


def serve_tcp(service: Service, host: str, port: int) -> None:
    with socket.create_server((host, port)) as server:
        print(f"listening on {host}:{server.getsockname()[1]}", file=sys.stderr)
        while True:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8", newline="\n")
                writer = conn.makefile("w", encoding="utf-8", newline="\n")
                serve_stream(service, reader, writer)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lm-bridge-server",
        description="Masked-LM backend speaking the line-delimited JSON protocol.",
    )
    parser.add_argument("--model", required=True,
                        help="pretrained model name, or 'dummy' for the built-in toy")
    parser.add_argument("--tcp", default=None, metavar="HOST:PORT",
                        help="serve over TCP instead of stdio")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--top-k-cap", type=int, default=DEFAULT_TOP_K_CAP)
    args = parser.parse_args(argv)

    try:
        model = load_model(args.model, device=args.device)
    except ModelLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    service = Service(model, top_k_cap=args.top_k_cap)

    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        serve_tcp(service, host or "127.0.0.1", int(port))
    else:
        serve_stream(service, sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())

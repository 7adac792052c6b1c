import json
import socket
import threading

import pytest

from clozeforge.bridge import (
    BackendError,
    BridgeProvider,
    BridgeTimeout,
    CachingProvider,
    HandshakeTimeout,
    ProtocolError,
    ProtocolVersionMismatch,
    SpawnFailure,
    open_session,
)
from clozeforge.core import MASK

from conftest import stub_spec


@pytest.fixture
def ok_session():
    session = open_session(stub_spec("ok"), timeout=10)
    yield session
    session.close()


def test_handshake_reads_vocab(ok_session):
    assert ok_session.vocab_info["vocab_size"] == 100
    assert ok_session.vocab_info["mask_id"] == 4


def test_spawn_failure():
    with pytest.raises(SpawnFailure):
        open_session(["/no/such/binary/anywhere"])


def test_tcp_connect_failure():
    with pytest.raises(SpawnFailure):
        open_session("tcp:127.0.0.1:1", timeout=2)


def test_garbage_handshake_is_protocol_error():
    with pytest.raises(ProtocolError):
        open_session(stub_spec("garbage"), timeout=10)


def test_handshake_timeout():
    with pytest.raises(HandshakeTimeout):
        open_session(stub_spec("silent"), timeout=0.5)


def test_protocol_version_mismatch():
    with pytest.raises(ProtocolVersionMismatch):
        open_session(stub_spec("oldproto"), timeout=10)


def test_tokenize_detokenize_round_trip(ok_session):
    provider = BridgeProvider(ok_session)
    ids = provider.tokenize("New York")
    assert ids == [sum(map(ord, "New")) % 100, sum(map(ord, "York")) % 100]
    assert provider.detokenize([1, 2]) == "t1 t2"


def test_predict_maps_mask_sentinel_and_exponentiates(ok_session):
    provider = BridgeProvider(ok_session)
    dists = provider.predict([1, MASK, 3], [1], top_k=1)
    assert dists == [[(7, 0.0)]]


def test_predict_top_k_truncation(ok_session):
    provider = BridgeProvider(ok_session)
    (dist,) = provider.predict([MASK], [0], top_k=3)
    assert dist == [(7, -0.0), (3, -0.5), (11, -1.0)]


def test_unsorted_distribution_rejected():
    session = open_session(stub_spec("unsorted"), timeout=10)
    try:
        provider = BridgeProvider(session)
        with pytest.raises(ProtocolError):
            provider.predict([MASK], [0], top_k=3)
    finally:
        session.close()


def test_positive_logprob_rejected():
    session = open_session(stub_spec("positive"), timeout=10)
    try:
        provider = BridgeProvider(session)
        with pytest.raises(ProtocolError):
            provider.predict([MASK], [0], top_k=1)
    finally:
        session.close()


def test_error_frame_propagates_code_and_message():
    session = open_session(stub_spec("error"), timeout=10)
    try:
        provider = BridgeProvider(session)
        with pytest.raises(BackendError) as err:
            provider.predict([MASK], [0], top_k=1)
        assert err.value.code == "OOM"
        assert "memory" in err.value.message
    finally:
        session.close()


def test_unknown_op_gets_unsupported(ok_session):
    with pytest.raises(BackendError) as err:
        ok_session.call("transmogrify")
    assert err.value.code == "UNSUPPORTED"


def test_out_of_order_responses_reassociate():
    session = open_session(stub_spec("reversed"), timeout=10)
    try:
        pending = [
            session.submit("predict", tokens=[4], mask_positions=[0], top_k=k)
            for k in (1, 2, 3)
        ]
        results = [p.result() for p in pending]
        # answers arrive newest-first; each must still land on its own request
        for k, result in zip((1, 2, 3), results):
            assert len(result["dists"][0]) == k
    finally:
        session.close()


def test_request_ids_strictly_increase(ok_session):
    first = ok_session._next_id
    ok_session.call("tokenize", text="a")
    ok_session.call("tokenize", text="b")
    assert ok_session._next_id == first + 2


def test_per_call_timeout():
    from clozeforge.bridge import Session, _StdioTransport

    # skip the handshake so the silent stub's non-answer hits a plain call
    session = Session(_StdioTransport(stub_spec("silent")), timeout=0.3)
    try:
        with pytest.raises(BridgeTimeout):
            session.call("tokenize", text="x")
    finally:
        session.close()


def test_wrong_id_fails_pending_calls():
    session = open_session(stub_spec("badid"), timeout=10)
    try:
        with pytest.raises(ProtocolError):
            session.call("predict", tokens=[4], mask_positions=[0], top_k=1)
    finally:
        session.close()


def test_tcp_transport_same_protocol():
    server = socket.create_server(("127.0.0.1", 0))
    port = server.getsockname()[1]

    def serve_one():
        conn, _ = server.accept()
        with conn, conn.makefile("rw", encoding="utf-8") as stream:
            for line in stream:
                frame = json.loads(line)
                if frame["op"] == "vocab":
                    reply = {"id": frame["id"],
                             "result": {"vocab_size": 10, "mask_id": 2, "protocol": 1}}
                elif frame["op"] == "tokenize":
                    reply = {"id": frame["id"], "result": {"ids": [1, 2]}}
                else:
                    return
                stream.write(json.dumps(reply) + "\n")
                stream.flush()

    thread = threading.Thread(target=serve_one, daemon=True)
    thread.start()
    session = open_session(f"tcp:127.0.0.1:{port}", timeout=10)
    try:
        provider = BridgeProvider(session)
        assert provider.vocab_size() == 10
        assert provider.mask_id == 2
        assert provider.tokenize("x") == [1, 2]
    finally:
        session.close()
        server.close()


def test_caching_provider_round_trips(tmp_path, ok_session):
    provider = CachingProvider(BridgeProvider(ok_session), tmp_path)
    first = provider.predict([1, MASK], [1], top_k=2)
    ok_session.close()  # cache must now answer on its own
    second = provider.predict([1, MASK], [1], top_k=2)
    assert first == second
    assert provider.tokenize  # attribute surface intact
    assert list(tmp_path.glob("*.json"))

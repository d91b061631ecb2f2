import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kishnn import he_sim, protocol_io
from kishnn.classifier import LabeledDatabase, make_protocol_params
from kishnn.protocol_io import (DecodeError, ErrorMessage, ProtocolError,
                                QueryMessage, ResponseMessage, answer_query,
                                decode_message, encode_message, loopback_pair,
                                make_query, run_client, run_server, serve_tcp,
                                tcp_connect)
from kishnn.ring import select_ring_params

from conftest import two_cluster_db


@pytest.fixture(scope="module")
def setup():
    ring = select_ring_params(20, dim=2, n=20)
    pts, labels = two_cluster_db(10, 20, gap=1, seed=0)
    db = LabeledDatabase(pts, labels)
    pp = make_protocol_params(ring, k=3, n=20, repetitions=3, rng_seed=5)
    return ring, db, pp


def test_query_round_trip(setup):
    _, _, pp = setup
    _, msg = make_query([5, 6], pp)
    assert decode_message(encode_message(msg)) == msg


def test_response_round_trip(setup):
    _, db, pp = setup
    _, msg = make_query([5, 6], pp)
    resp = answer_query(msg, db, pp)
    assert decode_message(encode_message(resp)) == resp


def test_error_message_round_trip():
    msg = ErrorMessage("nope")
    assert decode_message(encode_message(msg)) == msg


def test_flipped_magic_fails_at_offset_zero(setup):
    _, _, pp = setup
    _, msg = make_query([5, 6], pp)
    raw = bytearray(encode_message(msg))
    raw[0] ^= 1
    with pytest.raises(DecodeError) as err:
        decode_message(bytes(raw))
    assert err.value.offset == 0


def test_truncated_field_fails_at_payload_length(setup):
    _, _, pp = setup
    raw = encode_message(make_query([5, 6], pp)[1])[:-3]
    with pytest.raises(DecodeError) as err:
        decode_message(raw)
    assert err.value.offset == len(raw)


def test_bad_version_and_trailing_bytes(setup):
    _, _, pp = setup
    raw = bytearray(encode_message(make_query([5, 6], pp)[1]))
    raw[4] = 9
    with pytest.raises(DecodeError) as err:
        decode_message(bytes(raw))
    assert err.value.offset == 4
    good = encode_message(make_query([5, 6], pp)[1])
    with pytest.raises(DecodeError):
        decode_message(good + b"x")


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**16 - 1),
       st.integers(0, 2**64 - 1), st.integers(1, 4))
@settings(max_examples=200, deadline=None)
def test_response_codec_property(value, depth, key_id, half_reps):
    ciphers = tuple(
        he_sim.Cipher(np.array([value], dtype=np.int64) if value < 2**63
                      else np.array([value % 2**63], dtype=np.int64),
                      depth=depth, key_id=key_id)
        for _ in range(2 * half_reps - 1))
    msg = ResponseMessage(ciphers)
    assert decode_message(encode_message(msg)) == msg


def test_message_sizes_independent_of_database_size():
    sizes = {}
    for n in (50, 569):
        ring = select_ring_params(100, dim=2, n=n)
        pp = make_protocol_params(ring, k=13, n=n, repetitions=5, rng_seed=0)
        _, msg = make_query([5, 6], pp)
        sizes[n] = len(encode_message(msg))
    assert sizes[50] == sizes[569]


def test_loopback_end_to_end(setup):
    _, db, pp = setup
    client_end, server_end = loopback_pair()
    t = threading.Thread(target=run_server, args=(server_end, db, pp))
    t.start()
    bit = run_client(client_end, [2, 3], pp)
    client_end.close()
    t.join(timeout=10)
    assert bit in (0, 1)


def test_two_sequential_queries_one_connection(setup):
    _, db, pp = setup
    client_end, server_end = loopback_pair()
    results = {}

    def serve():
        results["answered"] = run_server(server_end, db, pp)

    t = threading.Thread(target=serve)
    t.start()
    b1 = run_client(client_end, [2, 3], pp)
    b2 = run_client(client_end, [18, 18], pp)
    client_end.close()
    t.join(timeout=10)
    assert results["answered"] == 2
    assert b1 in (0, 1) and b2 in (0, 1)


def test_dimension_mismatch_gets_error_response(setup):
    ring, db, pp = setup
    client_end, server_end = loopback_pair()
    t = threading.Thread(target=run_server, args=(server_end, db, pp))
    t.start()
    keys, msg = make_query([2, 3], pp)
    # well-formed query, but its ring disagrees with the server's view
    other_ring = select_ring_params(20, dim=2, n=21)
    bad = QueryMessage(1, other_ring, msg.pk, msg.enc_q)
    protocol_io.write_message(client_end, bad)
    reply = protocol_io.read_message(client_end)
    client_end.close()
    t.join(timeout=10)
    assert isinstance(reply, ErrorMessage)
    assert "ring" in reply.reason


def test_client_raises_on_error_response(setup):
    _, db, pp = setup
    other_ring = select_ring_params(20, dim=2, n=21)
    other_pp = make_protocol_params(other_ring, k=3, n=21, repetitions=3)
    client_end, server_end = loopback_pair()
    t = threading.Thread(target=run_server, args=(server_end, db, pp))
    t.start()
    with pytest.raises(ProtocolError, match="rejected"):
        run_client(client_end, [2, 3], other_pp)
    client_end.close()
    t.join(timeout=10)


def test_server_closes_on_malformed_bytes(setup):
    _, db, pp = setup
    client_end, server_end = loopback_pair()
    t = threading.Thread(target=run_server, args=(server_end, db, pp))
    t.start()
    client_end.wfile.write(b"JUNKJUNKJUNKJUNK")
    client_end.wfile.flush()
    reply = protocol_io.read_message(client_end)
    client_end.close()
    t.join(timeout=10)
    assert isinstance(reply, ErrorMessage)
    assert not t.is_alive()


def test_server_never_decrypts_in_protocol(setup):
    _, db, pp = setup
    _, msg = make_query([4, 4], pp)
    with he_sim.metering() as m:
        answer_query(msg, db, pp)
    assert m.decrypt_calls == 0


def test_tcp_round_trip(setup):
    _, db, pp = setup
    addr = {}
    done = threading.Event()

    def serve():
        serve_tcp("127.0.0.1", 0, db, pp, max_connections=1,
                  ready=lambda a: (addr.update(port=a[1]), done.set()))

    t = threading.Thread(target=serve)
    t.start()
    assert done.wait(timeout=10)
    with tcp_connect("127.0.0.1", addr["port"]) as transport:
        bit = run_client(transport, [2, 3], pp)
    t.join(timeout=10)
    assert bit in (0, 1)


def test_responses_are_deterministic_for_a_seed(setup):
    _, db, pp = setup
    _, msg = make_query([4, 4], pp)
    r1 = answer_query(msg, db, pp)
    r2 = answer_query(msg, db, pp)
    assert r1 == r2

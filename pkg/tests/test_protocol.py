import socket
import threading

import numpy as np
import pytest

from vflab.errors import AlignmentError, ProtocolError, TransportError
from vflab.nn import build_mlp, forward
from vflab.protocol import (
    DATA_FRAME_TYPES,
    HEADER_LEN,
    Frame,
    MsgType,
    SplitnnActiveParty,
    SplitnnPassiveParty,
    decode_frame,
    decode_ids,
    decode_matrix,
    encode_frame,
    encode_ids,
    encode_matrix,
    footprint_apcvfl,
    footprint_splitnn,
    footprint_vfedtrans,
    format_bytes,
    inprocess_pair,
    run_apcvfl_exchange,
    run_splitnn,
    tcp_accept,
    tcp_connect,
    tcp_listen,
)
from vflab.protocol.footprint import PASSIVE_FINAL_LAYER_PARAMS
from vflab.protocol.transport import LedgeredEndpoint
from vflab.representation import encoder_widths


def random_frame(rng):
    msg_type = MsgType(int(rng.choice([int(m) for m in MsgType])))
    if msg_type in DATA_FRAME_TYPES:
        r, c = int(rng.integers(0, 6)), int(rng.integers(0, 6))
        payload = encode_matrix(rng.normal(size=(r, c)).astype(np.float32))
    else:
        payload = bytes(rng.integers(0, 256, size=int(rng.integers(0, 40)), dtype=np.uint8))
    return Frame(msg_type, payload)


class TestFrameCodec:
    def test_round_trip_random_frames(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            frame = random_frame(rng)
            wire = encode_frame(frame)
            decoded, consumed = decode_frame(wire)
            assert consumed == len(wire)
            assert decoded == frame
            assert encode_frame(decoded) == wire

    def test_header_is_ten_bytes(self):
        assert HEADER_LEN == 10
        assert len(encode_frame(Frame(MsgType.CLOSE))) == 10

    def test_matrix_payload_length(self):
        payload = encode_matrix(np.zeros((2, 3), dtype=np.float32))
        assert len(payload) == 8 + 24
        frame = encode_frame(Frame(MsgType.EMBEDDINGS, payload))
        assert len(frame) == 10 + 32

    def test_frames_parse_from_a_concatenated_stream(self):
        rng = np.random.default_rng(1)
        frames = [random_frame(rng) for _ in range(5)]
        stream = b"".join(encode_frame(f) for f in frames)
        off = 0
        out = []
        while off < len(stream):
            f, off = decode_frame(stream, off)
            out.append(f)
        assert out == frames

    def test_bad_magic_rejected_before_payload(self):
        wire = bytearray(encode_frame(Frame(MsgType.HELLO, b"x")))
        wire[0:4] = b"NOPE"
        with pytest.raises(ProtocolError, match="magic"):
            decode_frame(bytes(wire))

    def test_version_mismatch(self):
        wire = bytearray(encode_frame(Frame(MsgType.HELLO)))
        wire[4] = 9
        with pytest.raises(ProtocolError, match="version"):
            decode_frame(bytes(wire))

    def test_unknown_message_type(self):
        wire = bytearray(encode_frame(Frame(MsgType.HELLO)))
        wire[5] = 200
        with pytest.raises(ProtocolError, match="message type"):
            decode_frame(bytes(wire))

    def test_truncated_header_and_payload(self):
        with pytest.raises(ProtocolError, match="header"):
            decode_frame(b"AVFL")
        wire = encode_frame(Frame(MsgType.HELLO, b"hello"))
        with pytest.raises(ProtocolError, match="payload"):
            decode_frame(wire[:-2])

    def test_matrix_codec_round_trip(self):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(7, 3)).astype(np.float32)
        out = decode_matrix(encode_matrix(m))
        np.testing.assert_array_equal(out, m)
        assert out.dtype == np.float32

    def test_matrix_length_validated(self):
        payload = encode_matrix(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ProtocolError):
            decode_matrix(payload[:-1])

    def test_ids_codec_round_trip(self):
        ids = ["a", "row-42", "ünïcode", ""]
        assert decode_ids(encode_ids(ids)) == ids

    def test_ids_codec_truncation(self):
        with pytest.raises(ProtocolError):
            decode_ids(encode_ids(["abc"])[:-1])

    def test_vocabulary_has_no_raw_feature_frame(self):
        # the wire vocabulary is closed: latents and gradients are the only
        # bulk payloads, so raw columns or weights cannot be expressed
        names = {m.name for m in MsgType}
        assert names == {
            "HELLO", "ALIGNED_IDS", "EMBEDDINGS", "GRADIENTS", "LABELS", "CLOSE", "ERROR",
        }
        assert DATA_FRAME_TYPES == {MsgType.EMBEDDINGS, MsgType.GRADIENTS, MsgType.LABELS}


class TestFootprints:
    def test_single_transfer_values(self):
        assert footprint_apcvfl(9500, 256) == 9_728_000
        assert footprint_apcvfl(4500, 256) == 4_608_000
        assert footprint_apcvfl(2000, 256) == 2_048_000
        assert footprint_apcvfl(1, 1) == 4

    def test_iterative_baseline_formula(self):
        assert footprint_splitnn(1, 128, 256, 128) == 131_072 + 132_096
        assert footprint_splitnn(0, 1000, 256, 128) == 0
        one = footprint_splitnn(1, 500, 256, 128)
        assert footprint_splitnn(7, 500, 256, 128) == 7 * one  # linear in epochs

    def test_passive_final_layer_params(self):
        assert PASSIVE_FINAL_LAYER_PARAMS == 128 * 256 + 256 == 33_024

    def test_svd_pipeline_formula(self):
        assert footprint_vfedtrans(1, 1, 1) == 40
        # quadratic dominance: doubling the overlap approaches a 4x cost
        big = footprint_vfedtrans(200_000, 5, 10) / footprint_vfedtrans(100_000, 5, 10)
        assert big == pytest.approx(4.0, abs=0.01)

    def test_format_bytes(self):
        assert format_bytes(9_728_000) == "9728000 B (9.73 MB)"
        assert format_bytes(40) == "40 B (0.00 MB)"


def make_exchange(n=12, latent=4, transport="inproc", inference_ids=None):
    rng = np.random.default_rng(3)
    ids = [f"r{i}" for i in range(n)]
    z_by_id = {i: rng.normal(size=latent).astype(np.float32) for i in ids}
    if inference_ids:
        for i in inference_ids:
            z_by_id.setdefault(i, rng.normal(size=latent).astype(np.float32))

    def encode_for(order):
        return np.stack([z_by_id[i] for i in order])

    if transport == "inproc":
        a_raw, p_raw = inprocess_pair()
    else:
        srv = tcp_listen()
        p_raw = tcp_connect("127.0.0.1", srv.getsockname()[1])
        a_raw = tcp_accept(srv)
        srv.close()
    a_ep = LedgeredEndpoint(a_raw, "active")
    p_ep = LedgeredEndpoint(p_raw, "passive")
    reps, z_test, ledger = run_apcvfl_exchange(
        ids, encode_for, latent, "hash0", a_ep, p_ep, inference_ids=inference_ids
    )
    return ids, z_by_id, reps, z_test, ledger, a_ep, p_ep


class TestExchange:
    def test_single_round_and_exact_bytes(self):
        ids, z_by_id, reps, _, ledger, a_ep, p_ep = make_exchange(n=12, latent=4)
        assert ledger.rounds == 1
        assert ledger.data_bytes["passive_to_active"] == 12 * 4 * 4
        assert ledger.data_bytes["active_to_passive"] == 0
        assert ledger.total_overhead_bytes > 0
        np.testing.assert_array_equal(reps.z[0], z_by_id[ids[0]])

    def test_both_ledger_copies_agree(self):
        *_, a_ep, p_ep = make_exchange()
        assert a_ep.ledger.to_dict() == p_ep.ledger.to_dict()

    def test_transcript_contains_only_the_expected_vocabulary(self):
        *_, a_ep, p_ep = make_exchange()
        sent_types = {t for d, t in a_ep.transcript} | {t for d, t in p_ep.transcript}
        assert sent_types <= {MsgType.HELLO, MsgType.ALIGNED_IDS, MsgType.EMBEDDINGS, MsgType.CLOSE}

    def test_inference_request_tracked_separately(self):
        ids, _, reps, z_test, ledger, *_ = make_exchange(
            n=10, latent=4, inference_ids=["t0", "t1", "t2"]
        )
        assert ledger.rounds == 1
        assert ledger.inference_rounds == 1
        assert ledger.inference_bytes == 3 * 4 * 4
        assert z_test.shape == (3, 4)

    def test_id_mismatch_raises_alignment_error(self):
        a_raw, p_raw = inprocess_pair()
        a_ep = LedgeredEndpoint(a_raw, "active")
        p_ep = LedgeredEndpoint(p_raw, "passive")
        with pytest.raises(AlignmentError, match="zzz"):
            _mismatch(a_ep, p_ep)

    def test_tcp_matches_inprocess(self):
        _, _, reps_q, _, ledger_q, *_ = make_exchange(transport="inproc")
        _, _, reps_t, _, ledger_t, *_ = make_exchange(transport="tcp")
        np.testing.assert_array_equal(reps_q.z, reps_t.z)
        assert ledger_q.to_dict() == ledger_t.to_dict()


def _mismatch(a_ep, p_ep):
    from vflab.protocol.session import exchange_active, exchange_passive, run_paired

    def active_fn(ep):
        return exchange_active(ep, ["a", "b"], 2, "hash0")

    def passive_fn(ep):
        exchange_passive(
            ep, {"a", "zzz"}, lambda order: np.zeros((len(order), 2), dtype=np.float32), "hash0"
        )

    run_paired(active_fn, passive_fn, a_ep, p_ep)


class TestSplitnnSession:
    def _run(self, n=24, n_test=6, batch=8, max_epochs=4, patience=2, transport="inproc"):
        rng = np.random.default_rng(5)
        ids = [f"s{i}" for i in range(n + n_test)]
        x_a = rng.normal(size=(n + n_test, 3)).astype(np.float32)
        x_p = rng.normal(size=(n + n_test, 4)).astype(np.float32)
        y = rng.integers(0, 2, size=n + n_test)
        extractor_a = build_mlp(encoder_widths("local_active", 3), seed=1)
        extractor_p = build_mlp(encoder_widths("local_passive", 4), seed=2)
        head = build_mlp([384, 256, 256, 2], ["selu", "selu", "identity"], seed=3)
        active = SplitnnActiveParty(
            ids_train=ids[:n],
            x_train=x_a[:n],
            y_train=y[:n],
            ids_test=ids[n:],
            x_test=x_a[n:],
            y_test=y[n:],
            extractor=extractor_a,
            head=head,
            n_classes=2,
            batch_size=batch,
            max_epochs=max_epochs,
            patience=patience,
            seed=11,
        )
        passive = SplitnnPassiveParty(ids=ids, x=x_p, extractor=extractor_p)
        if transport == "inproc":
            a_raw, p_raw = inprocess_pair()
        else:
            srv = tcp_listen()
            p_raw = tcp_connect("127.0.0.1", srv.getsockname()[1])
            a_raw = tcp_accept(srv)
            srv.close()
        a_ep = LedgeredEndpoint(a_raw, "active")
        p_ep = LedgeredEndpoint(p_raw, "passive")
        result = run_splitnn(active, passive, "h", a_ep, p_ep)
        return result, a_ep, p_ep

    def test_round_law_and_forward_bytes(self):
        result, *_ = self._run(n=24, batch=8, max_epochs=4)
        e = result.epochs_run
        batches = -(-24 // 8)
        assert result.ledger.rounds == 2 * e * batches
        assert result.ledger.data_bytes["passive_to_active"] == e * 24 * 256 * 4
        # the actual gradient traffic mirrors the embedding shape
        assert result.ledger.data_bytes["active_to_passive"] == e * 24 * 256 * 4

    def test_partial_final_batch_still_obeys_the_law(self):
        result, *_ = self._run(n=21, batch=8, max_epochs=3)
        e = result.epochs_run
        assert result.ledger.rounds == 2 * e * 3  # ceil(21/8) == 3
        assert result.ledger.data_bytes["passive_to_active"] == e * 21 * 256 * 4

    def test_inference_phase_separate(self):
        result, *_ = self._run(n=24, n_test=6)
        assert result.ledger.inference_rounds == 1
        assert result.ledger.inference_bytes == 6 * 256 * 4
        assert len(result.y_pred) == 6

    def test_single_batch_run_two_rounds_per_epoch(self):
        result, *_ = self._run(n=8, batch=8, max_epochs=1)
        assert result.epochs_run == 1
        assert result.ledger.rounds == 2

    def test_determinism_across_transports(self):
        r1, a1, _ = self._run(transport="inproc")
        r2, a2, _ = self._run(transport="tcp")
        assert r1.epochs_run == r2.epochs_run
        assert r1.train_losses == r2.train_losses
        np.testing.assert_array_equal(r1.y_pred, r2.y_pred)
        assert a1.ledger.to_dict() == a2.ledger.to_dict()

    def test_ledger_copies_agree(self):
        _, a_ep, p_ep = self._run()
        assert a_ep.ledger.to_dict() == p_ep.ledger.to_dict()


class TestTcpTransport:
    def test_garbage_bytes_rejected(self):
        srv = tcp_listen()
        port = srv.getsockname()[1]

        def client():
            with socket.create_connection(("127.0.0.1", port)) as s:
                s.sendall(b"GARBAGE---" + b"\x00" * 10)

        t = threading.Thread(target=client)
        t.start()
        ep = tcp_accept(srv)
        with pytest.raises(ProtocolError):
            ep.recv(timeout=5)
        t.join()
        ep.close()
        srv.close()

    def test_closed_connection_is_transport_error(self):
        srv = tcp_listen()
        port = srv.getsockname()[1]

        def client():
            socket.create_connection(("127.0.0.1", port)).close()

        t = threading.Thread(target=client)
        t.start()
        ep = tcp_accept(srv)
        with pytest.raises(TransportError) as e:
            ep.recv(timeout=5)
        assert e.value.retryable
        t.join()
        ep.close()
        srv.close()


class TestSessionFailureModes:
    def test_scenario_hash_mismatch_aborts(self):
        from vflab.protocol.session import exchange_active, exchange_passive, run_paired

        a_raw, p_raw = inprocess_pair()
        a_ep = LedgeredEndpoint(a_raw, "active")
        p_ep = LedgeredEndpoint(p_raw, "passive")

        def active_fn(ep):
            return exchange_active(ep, ["a"], 2, "hash-A")

        def passive_fn(ep):
            exchange_passive(
                ep, {"a"}, lambda order: np.zeros((1, 2), dtype=np.float32), "hash-B"
            )

        with pytest.raises(ProtocolError, match="scenario hash"):
            run_paired(active_fn, passive_fn, a_ep, p_ep)

    def test_participant_drop_mid_epoch_aborts_with_partial_ledger(self):
        from vflab.protocol.session import run_paired, splitnn_active

        rng = np.random.default_rng(6)
        n = 16
        ids = [f"s{i}" for i in range(n)]
        active = SplitnnActiveParty(
            ids_train=ids,
            x_train=rng.normal(size=(n, 3)).astype(np.float32),
            y_train=rng.integers(0, 2, size=n),
            ids_test=[],
            x_test=np.zeros((0, 3), dtype=np.float32),
            y_test=np.zeros(0, dtype=np.int64),
            extractor=build_mlp(encoder_widths("local_active", 3), seed=1),
            head=build_mlp([384, 256, 256, 2], ["selu", "selu", "identity"], seed=2),
            n_classes=2,
            batch_size=8,
            max_epochs=5,
        )
        extractor_p = build_mlp(encoder_widths("local_passive", 4), seed=3)
        x_p = rng.normal(size=(n, 4)).astype(np.float32)

        def dying_passive(ep):
            # handshake, id order, then answer exactly one batch and vanish
            from vflab.protocol.frames import (
                Frame,
                MsgType,
                decode_ids,
                decode_json,
                encode_json,
                encode_matrix,
            )

            hello = decode_json(ep.recv().payload)
            ep.send(Frame(MsgType.HELLO, encode_json({"version": 1, "scenario": "h"})))
            order = decode_ids(ep.recv().payload)
            ep.recv()  # epoch marker
            z = forward(extractor_p, x_p[:8])[-1]
            ep.send(Frame(MsgType.EMBEDDINGS, encode_matrix(z)))
            ep.recv()  # gradients
            raise RuntimeError("participant dropped")

        a_raw, p_raw = inprocess_pair()
        a_ep = LedgeredEndpoint(a_raw, "active")
        p_ep = LedgeredEndpoint(p_raw, "passive")
        with pytest.raises(RuntimeError, match="dropped"):
            run_paired(lambda ep: splitnn_active(ep, active, "h"), dying_passive, a_ep, p_ep)
        # partial ledger: the one embeddings frame and the one gradient frame
        assert a_ep.ledger.rounds == 2


from hypothesis import given, settings
from hypothesis import strategies as st

frame_strategy = st.builds(
    Frame,
    st.sampled_from(list(MsgType)),
    st.binary(max_size=256),
)


class TestFrameCodecProperties:
    """Property tests over the full valid-frame space."""

    @given(frame_strategy)
    @settings(max_examples=300, deadline=None)
    def test_decode_encode_is_identity(self, frame):
        wire = encode_frame(frame)
        back, consumed = decode_frame(wire)
        assert (back, consumed) == (frame, len(wire))
        assert encode_frame(back) == wire

    @given(st.lists(st.text(max_size=20), max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_id_list_round_trip(self, ids):
        assert decode_ids(encode_ids(ids)) == ids

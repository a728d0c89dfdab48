"""Two-party sessions: the single representation exchange and the
iterative split-network baseline.

Each party runs as a sequential state machine over a blocking endpoint;
`run_paired` puts the feature-only side on its own thread so the same
party code drives both the in-process and TCP transports. All shared
randomness (epoch shuffles) is derived from seeds carried in the
handshake, never from scheduling.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from ..classifier import softmax_xent_grad
from ..errors import AlignmentError, ProtocolError, VflabError
from ..nn.layers import Mlp, backward, forward, repack_into_flat
from ..nn.optim import FlatAdam
from ..nn.train import batch_slices
from ..representation import AlignedRepresentations
from .frames import (
    PROTOCOL_VERSION,
    Frame,
    MsgType,
    decode_ids,
    decode_json,
    decode_matrix,
    encode_ids,
    encode_json,
    encode_matrix,
)
from .transport import CommLedger, LedgeredEndpoint


def run_paired(active_fn, passive_fn, active_ep: LedgeredEndpoint, passive_ep: LedgeredEndpoint):
    """Run both parties to completion; returns (active result, ledger).

    The feature-only side runs on a worker thread. If it fails, an ERROR
    frame is pushed toward the label holder so nobody blocks, and the
    original exception is re-raised here. The returned ledger is the
    label holder's copy (both sides account every frame, so the copies
    agree).
    """
    box: dict = {}

    def passive_main():
        try:
            passive_fn(passive_ep)
        except BaseException as e:  # propagate to the driving thread
            box["error"] = e
            try:
                passive_ep._ep.send(Frame(MsgType.ERROR, str(e).encode()))
            except Exception:
                pass

    t = threading.Thread(target=passive_main, name="passive-party", daemon=True)
    t.start()
    try:
        result = active_fn(active_ep)
    except VflabError:
        t.join(timeout=10)
        if "error" in box:
            raise box["error"] from None
        raise
    t.join(timeout=120)
    if "error" in box:
        raise box["error"]
    return result, active_ep.ledger


def _expect(frame: Frame, msg_type: MsgType) -> Frame:
    if frame.msg_type is not msg_type:
        raise ProtocolError(f"expected {msg_type.name}, got {frame.msg_type.name}")
    return frame


def _handshake_active(ep, scenario_hash: str, extra: dict | None = None) -> dict:
    payload = {"version": PROTOCOL_VERSION, "scenario": scenario_hash}
    payload.update(extra or {})
    ep.send(Frame(MsgType.HELLO, encode_json(payload)))
    reply = decode_json(_expect(ep.recv(), MsgType.HELLO).payload)
    if reply.get("scenario") != scenario_hash:
        raise ProtocolError(
            f"scenario hash mismatch: {reply.get('scenario')} != {scenario_hash}"
        )
    return reply


def _handshake_passive(ep, scenario_hash: str) -> dict:
    hello = decode_json(_expect(ep.recv(), MsgType.HELLO).payload)
    if hello.get("version") != PROTOCOL_VERSION:
        ep.send(Frame(MsgType.ERROR, b"protocol version mismatch"))
        raise ProtocolError(f"peer protocol version {hello.get('version')}")
    if hello.get("scenario") != scenario_hash:
        ep.send(Frame(MsgType.ERROR, b"scenario hash mismatch"))
        raise ProtocolError(
            f"scenario hash mismatch: {hello.get('scenario')} != {scenario_hash}"
        )
    ep.send(
        Frame(
            MsgType.HELLO,
            encode_json({"version": PROTOCOL_VERSION, "scenario": scenario_hash}),
        )
    )
    return hello


def _request_embeddings(ep, ids: list[str], latent_dim: int) -> np.ndarray:
    ep.send(Frame(MsgType.ALIGNED_IDS, encode_ids(ids)))
    z = decode_matrix(_expect(ep.recv(), MsgType.EMBEDDINGS).payload)
    if z.shape != (len(ids), latent_dim):
        raise ProtocolError(
            f"embeddings shape {z.shape}, expected {(len(ids), latent_dim)}"
        )
    return z


# ---------------------------------------------------------------------------
# Single representation exchange


def exchange_active(
    ep,
    aligned_ids: list[str],
    latent_dim: int,
    scenario_hash: str,
    inference_ids: list[str] | None = None,
) -> tuple[AlignedRepresentations, np.ndarray | None]:
    """Label holder's side: announce the shared training rows, receive
    one latent matrix for them, optionally request held-out rows for
    inference (tracked apart from the single training round), close.
    """
    _handshake_active(ep, scenario_hash)
    z = _request_embeddings(ep, list(aligned_ids), latent_dim)
    reps = AlignedRepresentations(np.asarray(aligned_ids, dtype=str), z)
    z_test = None
    if inference_ids:
        ep.inference_phase = True
        z_test = _request_embeddings(ep, list(inference_ids), latent_dim)
    ep.send(Frame(MsgType.CLOSE))
    return reps, z_test


def exchange_passive(ep, aligned_ids: set, encode_for_ids, scenario_hash: str) -> None:
    """Feature-only side: verify the first announced row set matches the
    local shared set, then answer each request with latents encoded in
    the announced order. The first transfer is the training payload;
    any further one is inference.
    """
    _handshake_passive(ep, scenario_hash)
    first = True
    while True:
        frame = ep.recv()
        if frame.msg_type is MsgType.CLOSE:
            return
        order = decode_ids(_expect(frame, MsgType.ALIGNED_IDS).payload)
        if first:
            if set(order) != set(aligned_ids):
                missing_here = sorted(set(order) - set(aligned_ids))[:20]
                missing_there = sorted(set(aligned_ids) - set(order))[:20]
                ep.send(
                    Frame(
                        MsgType.ERROR,
                        encode_json(
                            {
                                "missing_here": missing_here,
                                "missing_there": missing_there,
                            }
                        ),
                    )
                )
                raise AlignmentError(
                    f"aligned id mismatch; unknown here: {missing_here}; "
                    f"absent there: {missing_there}"
                )
        else:
            ep.inference_phase = True
        ep.send(Frame(MsgType.EMBEDDINGS, encode_matrix(encode_for_ids(order))))
        first = False


def run_apcvfl_exchange(
    aligned_ids: list[str],
    encode_for_ids,
    latent_dim: int,
    scenario_hash: str,
    active_ep: LedgeredEndpoint,
    passive_ep: LedgeredEndpoint,
    inference_ids: list[str] | None = None,
) -> tuple[AlignedRepresentations, np.ndarray | None, CommLedger]:
    """Drive both sides of the exchange; exactly one training data frame
    crosses, passive to active.
    """
    passive_set = set(aligned_ids)

    def active_fn(ep):
        return exchange_active(
            ep, list(aligned_ids), latent_dim, scenario_hash, inference_ids
        )

    def passive_fn(ep):
        exchange_passive(ep, passive_set, encode_for_ids, scenario_hash)

    (reps, z_test), ledger = run_paired(active_fn, passive_fn, active_ep, passive_ep)
    return reps, z_test, ledger


# ---------------------------------------------------------------------------
# Iterative split-network baseline


@dataclass
class SplitnnActiveParty:
    """Label holder: local extractor + classification head + labels."""

    ids_train: list[str]
    x_train: np.ndarray
    y_train: np.ndarray
    ids_test: list[str]
    x_test: np.ndarray
    y_test: np.ndarray
    extractor: Mlp
    head: Mlp
    n_classes: int
    batch_size: int
    passive_latent_dim: int = 256
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    lr: float = 1e-3


@dataclass
class SplitnnPassiveParty:
    """Feature-only party: rows keyed by ID plus its local extractor."""

    ids: list[str]
    x: np.ndarray
    extractor: Mlp
    lr: float = 1e-3


@dataclass
class SplitnnResult:
    epochs_run: int
    train_losses: list[float]
    y_true: np.ndarray
    y_pred: np.ndarray
    ledger: CommLedger = None


def _epoch_perm(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)


def splitnn_active(ep, party: SplitnnActiveParty, scenario_hash: str) -> SplitnnResult:
    """Drive the batch loop: for every mini-batch one embeddings frame
    arrives and one gradient frame goes back. Epochs are gated by a
    control frame so the peer never runs ahead of the stopping decision.
    Early stopping watches the epoch training loss (a validation pass
    would cost extra exchanges the accounting model does not include).
    """
    n = len(party.ids_train)
    _handshake_active(
        ep,
        scenario_hash,
        extra={"batch_size": party.batch_size, "n_train": n, "seed": party.seed},
    )
    ep.send(Frame(MsgType.ALIGNED_IDS, encode_ids(party.ids_train)))
    adam_ext = FlatAdam(repack_into_flat([party.extractor]), lr=party.lr)
    adam_head = FlatAdam(repack_into_flat([party.head]), lr=party.lr)
    z_a_dim = party.extractor.output_dim

    best = np.inf
    bad = 0
    losses: list[float] = []
    epochs_run = 0
    for epoch in range(1, party.max_epochs + 1):
        ep.send(Frame(MsgType.HELLO, encode_json({"epoch": epoch})))
        perm = _epoch_perm(party.seed, epoch, n)
        total = 0.0
        for lo, hi in batch_slices(n, party.batch_size):
            idx = perm[lo:hi]
            z_p = decode_matrix(_expect(ep.recv(), MsgType.EMBEDDINGS).payload)
            xb = party.x_train[idx]
            acts_e = forward(party.extractor, xb)
            h = np.concatenate([acts_e[-1], z_p], axis=1)
            acts_h = forward(party.head, h)
            loss, g_logits = softmax_xent_grad(acts_h[-1], party.y_train[idx])
            if not np.isfinite(loss):
                raise ProtocolError(f"non-finite loss at epoch {epoch}")
            g_head, g_h = backward(party.head, h, acts_h, g_logits)
            g_za, g_zp = g_h[:, :z_a_dim], g_h[:, z_a_dim:]
            g_ext, _ = backward(party.extractor, xb, acts_e, g_za)
            adam_head.step(g_head)
            adam_ext.step(g_ext)
            ep.send(Frame(MsgType.GRADIENTS, encode_matrix(g_zp)))
            total += loss * len(idx)
        epoch_loss = total / n
        losses.append(epoch_loss)
        epochs_run = epoch
        if epoch_loss < best:
            best = epoch_loss
            bad = 0
        else:
            bad += 1
            if bad >= party.patience:
                break

    # held-out evaluation: one extra embeddings transfer, tracked apart
    y_pred = np.zeros(0, dtype=np.int64)
    if len(party.ids_test):
        ep.inference_phase = True
        z_p = _request_embeddings(ep, list(party.ids_test), party.passive_latent_dim)
        z_a = forward(party.extractor, party.x_test)[-1]
        logits = forward(party.head, np.concatenate([z_a, z_p], axis=1))[-1]
        y_pred = np.argmax(logits, axis=1)
    ep.send(Frame(MsgType.CLOSE))
    return SplitnnResult(
        epochs_run=epochs_run,
        train_losses=losses,
        y_true=party.y_test,
        y_pred=y_pred,
    )


def splitnn_passive(ep, party: SplitnnPassiveParty, scenario_hash: str) -> None:
    hello = _handshake_passive(ep, scenario_hash)
    batch_size = int(hello["batch_size"])
    seed = int(hello["seed"])
    row_of = {i: r for r, i in enumerate(party.ids)}
    order = decode_ids(_expect(ep.recv(), MsgType.ALIGNED_IDS).payload)
    missing = [i for i in order if i not in row_of][:20]
    if missing:
        ep.send(Frame(MsgType.ERROR, encode_json({"missing_here": missing})))
        raise AlignmentError(f"rows not present on the feature-only side: {missing}")
    x = party.x[np.array([row_of[i] for i in order])]
    n = len(order)
    adam = FlatAdam(repack_into_flat([party.extractor]), lr=party.lr)
    while True:
        frame = ep.recv()
        if frame.msg_type is MsgType.CLOSE:
            return
        if frame.msg_type is MsgType.ALIGNED_IDS:
            # held-out rows: encode once, no updates
            test_order = decode_ids(frame.payload)
            bad_ids = [i for i in test_order if i not in row_of][:20]
            if bad_ids:
                ep.send(Frame(MsgType.ERROR, encode_json({"missing_here": bad_ids})))
                raise AlignmentError(f"unknown held-out rows: {bad_ids}")
            xt = party.x[np.array([row_of[i] for i in test_order])]
            ep.inference_phase = True
            ep.send(
                Frame(MsgType.EMBEDDINGS, encode_matrix(forward(party.extractor, xt)[-1]))
            )
            continue
        payload = decode_json(_expect(frame, MsgType.HELLO).payload)
        epoch = int(payload["epoch"])
        perm = _epoch_perm(seed, epoch, n)
        for lo, hi in batch_slices(n, batch_size):
            idx = perm[lo:hi]
            xb = x[idx]
            acts = forward(party.extractor, xb)
            ep.send(Frame(MsgType.EMBEDDINGS, encode_matrix(acts[-1])))
            g_z = decode_matrix(_expect(ep.recv(), MsgType.GRADIENTS).payload)
            grads, _ = backward(party.extractor, xb, acts, g_z)
            adam.step(grads)


def run_splitnn(
    active: SplitnnActiveParty,
    passive: SplitnnPassiveParty,
    scenario_hash: str,
    active_ep: LedgeredEndpoint,
    passive_ep: LedgeredEndpoint,
) -> SplitnnResult:
    def active_fn(ep):
        return splitnn_active(ep, active, scenario_hash)

    def passive_fn(ep):
        splitnn_passive(ep, passive, scenario_hash)

    result, ledger = run_paired(active_fn, passive_fn, active_ep, passive_ep)
    result.ledger = ledger
    return result

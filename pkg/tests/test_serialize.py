import numpy as np
import pytest

from vflab.errors import ProtocolError
from vflab.nn import build_mlp, dump_networks, forward, load_networks, load_networks_file, save_networks
from vflab.representation import Autoencoder


def test_round_trip_single_network(tmp_path):
    net = build_mlp([3, 5, 2], seed=0)
    path = tmp_path / "m.vflm"
    save_networks(path, [net])
    (back,) = load_networks_file(path)
    x = np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32)
    np.testing.assert_array_equal(forward(net, x)[-1], forward(back, x)[-1])
    for a, b in zip(net.params(), back.params()):
        np.testing.assert_array_equal(a, b)
    assert [l.activation for l in back.layers] == [l.activation for l in net.layers]


def test_autoencoder_stores_both_halves(tmp_path):
    ae = Autoencoder([4, 6, 3], seed=1)
    path = tmp_path / "ae.vflm"
    save_networks(path, [ae.encoder_, ae.decoder_])
    enc, dec = load_networks_file(path)
    assert enc.input_dim == 4 and enc.output_dim == 3
    assert dec.input_dim == 3 and dec.output_dim == 4


def test_weights_are_four_byte_little_endian(tmp_path):
    net = build_mlp([2, 2], seed=2)
    blob = dump_networks([net])
    # header: magic(4) + version(1) + count(1) + n_layers(2) + layer header(9)
    w = np.frombuffer(blob, dtype="<f4", count=4, offset=17)
    np.testing.assert_array_equal(w.reshape(2, 2), net.layers[0].weights)


def test_bad_magic_and_trailing_bytes(tmp_path):
    net = build_mlp([2, 2], seed=3)
    blob = dump_networks([net])
    with pytest.raises(ProtocolError, match="magic"):
        load_networks(b"XXXX" + blob[4:])
    with pytest.raises(ProtocolError, match="trailing"):
        load_networks(blob + b"\x00")


def test_version_checked(tmp_path):
    net = build_mlp([2, 2], seed=4)
    blob = bytearray(dump_networks([net]))
    blob[4] = 9
    with pytest.raises(ProtocolError, match="version"):
        load_networks(bytes(blob))

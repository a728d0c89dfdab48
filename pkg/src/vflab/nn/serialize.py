"""Versioned binary model files.

Layout (little-endian throughout):

    magic  4s   b"VFLM"
    version u8  = 1
    n_nets  u8
    per network:
        n_layers u16
        per layer:
            out u32 | in u32 | activation u8 (0=identity, 1=selu)
            weights f32[out*in] row-major | bias f32[out]

An autoencoder is stored as two networks (encoder, decoder).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ProtocolError
from .layers import ACT_IDENTITY, ACT_SELU, DenseLayer, Mlp

MODEL_MAGIC = b"VFLM"
MODEL_VERSION = 1
_ACT_CODE = {ACT_IDENTITY: 0, ACT_SELU: 1}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}


def dump_networks(nets: list[Mlp]) -> bytes:
    out = [MODEL_MAGIC, struct.pack("<BB", MODEL_VERSION, len(nets))]
    for net in nets:
        out.append(struct.pack("<H", len(net.layers)))
        for layer in net.layers:
            r, c = layer.weights.shape
            out.append(struct.pack("<IIB", r, c, _ACT_CODE[layer.activation]))
            out.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
            out.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    return b"".join(out)


def load_networks(data: bytes) -> list[Mlp]:
    if data[:4] != MODEL_MAGIC:
        raise ProtocolError(f"bad model magic {data[:4]!r}")
    version, n_nets = struct.unpack_from("<BB", data, 4)
    if version != MODEL_VERSION:
        raise ProtocolError(f"unsupported model version {version}")
    off = 6
    nets = []
    for _ in range(n_nets):
        (n_layers,) = struct.unpack_from("<H", data, off)
        off += 2
        layers = []
        for _ in range(n_layers):
            r, c, act = struct.unpack_from("<IIB", data, off)
            off += 9
            w = np.frombuffer(data, dtype="<f4", count=r * c, offset=off)
            off += 4 * r * c
            b = np.frombuffer(data, dtype="<f4", count=r, offset=off)
            off += 4 * r
            layers.append(
                DenseLayer(w.reshape(r, c).copy(), b.copy(), _ACT_NAME[act])
            )
        nets.append(Mlp(layers))
    if off != len(data):
        raise ProtocolError(f"{len(data) - off} trailing bytes in model file")
    return nets


def save_networks(path, nets: list[Mlp]) -> None:
    Path(path).write_bytes(dump_networks(nets))


def load_networks_file(path) -> list[Mlp]:
    return load_networks(Path(path).read_bytes())

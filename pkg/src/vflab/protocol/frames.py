"""Binary wire format.

Frame layout (all integers little-endian):

    magic   4s  b"AVFL"
    version u8  = 1
    type    u8  (see MsgType)
    length  u32 payload byte count
    payload length bytes

Matrix payload: rows u32 | cols u32 | rows*cols float32, row-major.
ID-list payload: count u32, then per ID: length u16 | UTF-8 bytes.

The vocabulary is deliberately narrow: there is no frame type that could
carry a party's raw feature columns or model weights, so the feature-only
side can ship latent vectors and nothing else.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..errors import ProtocolError

MAGIC = b"AVFL"
PROTOCOL_VERSION = 1
HEADER_LEN = 10  # 4 magic + 1 version + 1 type + 4 length
MATRIX_HEADER_LEN = 8


class MsgType(IntEnum):
    HELLO = 1
    ALIGNED_IDS = 2
    EMBEDDINGS = 3
    GRADIENTS = 4
    LABELS = 5
    CLOSE = 6
    ERROR = 7


# Frames whose payload is data that counts as a communication round; the
# rest is control plumbing tracked only as overhead.
DATA_FRAME_TYPES = frozenset({MsgType.EMBEDDINGS, MsgType.GRADIENTS, MsgType.LABELS})


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    return (
        MAGIC
        + struct.pack("<BBI", PROTOCOL_VERSION, int(frame.msg_type), len(frame.payload))
        + frame.payload
    )


def validate_header(header: bytes) -> tuple[MsgType, int]:
    """Check magic/version/type of a 10-byte header; returns (type, length).

    Streaming readers call this before trusting the length field.
    """
    if len(header) < HEADER_LEN:
        raise ProtocolError(
            f"truncated header: {len(header)} bytes, need {HEADER_LEN}"
        )
    if header[:4] != MAGIC:
        raise ProtocolError(f"bad magic {header[:4]!r}")
    version, mtype, length = struct.unpack_from("<BBI", header, 4)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    try:
        msg_type = MsgType(mtype)
    except ValueError:
        raise ProtocolError(f"unknown message type {mtype}") from None
    return msg_type, length


def decode_frame(data: bytes, offset: int = 0) -> tuple[Frame, int]:
    """Parse one frame starting at `offset`; returns (frame, next_offset).

    Validates magic, version and length before touching the payload.
    """
    msg_type, length = validate_header(bytes(data[offset : offset + HEADER_LEN]))
    start = offset + HEADER_LEN
    if len(data) - start < length:
        raise ProtocolError(
            f"truncated payload: {len(data) - start} bytes, declared {length}"
        )
    return Frame(msg_type, bytes(data[start : start + length])), start + length


def encode_matrix(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise ProtocolError(f"matrix payload must be 2-D, got shape {arr.shape}")
    r, c = arr.shape
    return struct.pack("<II", r, c) + arr.tobytes()


def decode_matrix(payload: bytes) -> np.ndarray:
    if len(payload) < MATRIX_HEADER_LEN:
        raise ProtocolError("matrix payload shorter than its header")
    r, c = struct.unpack_from("<II", payload, 0)
    expect = MATRIX_HEADER_LEN + 4 * r * c
    if len(payload) != expect:
        raise ProtocolError(
            f"matrix payload is {len(payload)} bytes, expected {expect} for {r}x{c}"
        )
    data = np.frombuffer(payload, dtype="<f4", count=r * c, offset=MATRIX_HEADER_LEN)
    return data.reshape(r, c).copy()


def matrix_data_bytes(payload: bytes) -> int:
    """Element bytes only (excludes the 8-byte matrix header)."""
    return len(payload) - MATRIX_HEADER_LEN


def encode_ids(ids) -> bytes:
    parts = [struct.pack("<I", len(ids))]
    for i in ids:
        raw = str(i).encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ProtocolError(f"id too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def decode_ids(payload: bytes) -> list[str]:
    if len(payload) < 4:
        raise ProtocolError("id payload shorter than its count field")
    (count,) = struct.unpack_from("<I", payload, 0)
    off = 4
    out = []
    for _ in range(count):
        if len(payload) - off < 2:
            raise ProtocolError("truncated id list")
        (n,) = struct.unpack_from("<H", payload, off)
        off += 2
        if len(payload) - off < n:
            raise ProtocolError("truncated id entry")
        out.append(payload[off : off + n].decode("utf-8"))
        off += n
    if off != len(payload):
        raise ProtocolError(f"{len(payload) - off} trailing bytes in id payload")
    return out


def encode_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True).encode("utf-8")


def decode_json(payload: bytes) -> dict:
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"bad control payload: {e}") from None

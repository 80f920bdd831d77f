"""Length-prefixed framing between the controller and the untrusted worker.

Every exchange crosses this codec, including the in-process channel, so byte
accounting and the loopback-socket transport see identical traffic. Field
tensors travel as 4-byte words (elements sit below 2**24); float tensors as
raw little-endian float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FRAME_VERSION = 1

OP_LINEAR = 1  # raw linear map of a single conv/dense layer
OP_RANGE = 2  # full execution of a contiguous layer range

_PAYLOAD_FIELD = 1
_PAYLOAD_FLOAT = 2

_MSG_REQUEST = 1
_MSG_RESPONSE = 2


class WireFormatError(ValueError):
    """Raised on malformed frames."""


@dataclass(frozen=True)
class WorkerRequest:
    request_id: str
    op: int
    layer_start: int
    layer_end: int
    blinded: bool
    payload: np.ndarray  # int64 field values or float64
    payload_kind: str  # "field" | "float"
    scale: int
    modulus: int

    @property
    def payload_bytes(self) -> int:
        return payload_nbytes(self.payload, self.payload_kind)


@dataclass(frozen=True)
class WorkerResponse:
    request_id: str
    payload: np.ndarray
    payload_kind: str
    scale: int
    modulus: int

    @property
    def payload_bytes(self) -> int:
        return payload_nbytes(self.payload, self.payload_kind)


def payload_nbytes(data: np.ndarray, kind: str) -> int:
    return data.size * (4 if kind == "field" else 8)


def _encode_payload(data: np.ndarray, kind: str) -> bytes:
    if kind == "field":
        return np.ascontiguousarray(data, dtype=np.int64).astype("<u4").tobytes()
    return np.ascontiguousarray(data, dtype=np.float64).astype("<f8").tobytes()


def _decode_payload(raw: bytes, kind: str, shape: tuple[int, ...]) -> np.ndarray:
    elem = 4 if kind == "field" else 8
    want = int(np.prod(shape, dtype=np.int64)) * elem if shape else elem
    if len(raw) != want:
        raise WireFormatError(
            f"payload is {len(raw)} bytes but shape {shape} needs {want}"
        )
    if kind == "field":
        return np.frombuffer(raw, dtype="<u4").astype(np.int64).reshape(shape)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


_KIND_TAGS = {"field": _PAYLOAD_FIELD, "float": _PAYLOAD_FLOAT}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def _common_header(
    msg: int, request_id: str, kind: str, shape: tuple[int, ...], scale: int, modulus: int
) -> bytes:
    rid = request_id.encode("utf-8")
    head = struct.pack("<BBH", FRAME_VERSION, msg, len(rid)) + rid
    head += struct.pack("<BB", _KIND_TAGS[kind], len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape)
    head += struct.pack("<II", scale, modulus)
    return head


class _Reader:
    def __init__(self, raw: bytes):
        self.view = memoryview(raw)
        self.offset = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.view):
            raise WireFormatError("truncated frame")
        vals = struct.unpack_from(fmt, self.view, self.offset)
        self.offset += size
        return vals

    def take_bytes(self, n: int) -> bytes:
        if self.offset + n > len(self.view):
            raise WireFormatError("truncated frame")
        out = bytes(self.view[self.offset : self.offset + n])
        self.offset += n
        return out


def _read_common(r: _Reader, expected_msg: int):
    version, msg, rid_len = r.take("<BBH")
    if version != FRAME_VERSION:
        raise WireFormatError(f"unsupported frame version {version}")
    if msg != expected_msg:
        raise WireFormatError(f"unexpected message type {msg}")
    try:
        request_id = r.take_bytes(rid_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise WireFormatError(f"request id is not valid UTF-8: {exc}") from None
    tag, rank = r.take("<BB")
    if tag not in _TAG_KINDS:
        raise WireFormatError(f"unknown payload tag {tag}")
    shape = r.take(f"<{rank}I")
    scale, modulus = r.take("<II")
    return request_id, _TAG_KINDS[tag], tuple(shape), scale, modulus


def encode_request(req: WorkerRequest) -> bytes:
    head = _common_header(
        _MSG_REQUEST, req.request_id, req.payload_kind, req.payload.shape, req.scale, req.modulus
    )
    head += struct.pack("<BIIB", req.op, req.layer_start, req.layer_end, int(req.blinded))
    return head + _encode_payload(req.payload, req.payload_kind)


def decode_request(raw: bytes) -> WorkerRequest:
    r = _Reader(raw)
    request_id, kind, shape, scale, modulus = _read_common(r, _MSG_REQUEST)
    op, start, end, blinded = r.take("<BIIB")
    if op not in (OP_LINEAR, OP_RANGE):
        raise WireFormatError(f"unknown op tag {op}")
    payload = _decode_payload(r.take_bytes(len(r.view) - r.offset), kind, shape)
    return WorkerRequest(
        request_id=request_id,
        op=op,
        layer_start=start,
        layer_end=end,
        blinded=bool(blinded),
        payload=payload,
        payload_kind=kind,
        scale=scale,
        modulus=modulus,
    )


def encode_response(resp: WorkerResponse) -> bytes:
    head = _common_header(
        _MSG_RESPONSE, resp.request_id, resp.payload_kind, resp.payload.shape, resp.scale, resp.modulus
    )
    return head + _encode_payload(resp.payload, resp.payload_kind)


def decode_response(raw: bytes) -> WorkerResponse:
    r = _Reader(raw)
    request_id, kind, shape, scale, modulus = _read_common(r, _MSG_RESPONSE)
    payload = _decode_payload(r.take_bytes(len(r.view) - r.offset), kind, shape)
    return WorkerResponse(
        request_id=request_id, payload=payload, payload_kind=kind, scale=scale, modulus=modulus
    )


def frame(raw: bytes) -> bytes:
    """Length-prefix a frame for stream transports."""
    return struct.pack("<I", len(raw)) + raw


def read_frame(sock) -> bytes:
    header = _read_exact(sock, 4)
    (length,) = struct.unpack("<I", header)
    return _read_exact(sock, length)


def _read_exact(sock, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(1 << 20, n - got))
        if not chunk:
            raise WireFormatError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)

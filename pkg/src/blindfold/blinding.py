"""Additive blinding over the field plus its precomputation and file format.

blind(x, r) = (x + r) mod p with r drawn uniformly from [0, p). Because the
offloaded maps are linear, unblind(L(x + r), L(r)) recovers L(x) exactly in
the integers, so a blinded offload is indistinguishable in value from local
execution. Factors are one-time: a (request, layer) pair may be drawn once.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .fieldmath import FieldError, validate_modulus
from .kernels import conv2d, dense
from .model import LayerKind, Model, PartitionPlan
from .tensors import QuantizedTensor, check_same_field

BLOB_MAGIC = b"BFUB"
BLOB_VERSION = 1


class BlindingError(RuntimeError):
    """Raised on factor reuse or malformed unblinding blobs."""


def _request_digest(request_id: str) -> bytes:
    return hashlib.sha256(request_id.encode("utf-8")).digest()[:8]


class BlindingStream:
    """Deterministic uniform field elements from a counter-mode keystream.

    The ChaCha20 nonce namespaces draws by (request, layer): a zero block
    counter, 8 bytes of request digest, and the layer index. Identical
    (seed, request, layer, shape) always reproduces the same factors, and a
    second draw for the same (request, layer) raises: the pad is one-time.
    """

    def __init__(self, seed: int | bytes):
        if isinstance(seed, int):
            key = hashlib.sha256(b"blindfold-stream" + struct.pack("<q", seed)).digest()
        else:
            if len(seed) != 32:
                raise FieldError("byte seeds must be exactly 32 bytes")
            key = bytes(seed)
        self._key = key
        self._used: set[tuple[str, int]] = set()

    def factors_for(
        self, request_id: str, layer_index: int, shape: tuple[int, ...], modulus: int
    ) -> np.ndarray:
        """Draw a one-time uniform tensor in [0, modulus) for this slot."""
        validate_modulus(modulus)
        slot = (request_id, layer_index)
        if slot in self._used:
            raise BlindingError(
                f"blinding factors for request {request_id!r} layer {layer_index} "
                "were already drawn; factors are one-time"
            )
        self._used.add(slot)
        return self.peek_factors(request_id, layer_index, shape, modulus)

    def peek_factors(
        self, request_id: str, layer_index: int, shape: tuple[int, ...], modulus: int
    ) -> np.ndarray:
        """The deterministic draw without the reuse bookkeeping (tests only)."""
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nonce = b"\x00\x00\x00\x00" + _request_digest(request_id) + struct.pack(
            "<I", layer_index & 0xFFFFFFFF
        )
        cipher = Cipher(algorithms.ChaCha20(self._key, nonce), mode=None).encryptor()
        return _uniform_from_stream(cipher, count, modulus).reshape(shape)


def _uniform_from_stream(cipher, count: int, modulus: int) -> np.ndarray:
    """Rejection-sample uniform values in [0, modulus) from 32-bit words."""
    limit = (2**32 // modulus) * modulus  # largest multiple of p below 2**32
    out = np.empty(count, dtype=np.int64)
    filled = 0
    need = count
    while filled < count:
        raw = cipher.update(bytes(4 * (need + 8)))
        words = np.frombuffer(raw, dtype="<u4").astype(np.int64)
        kept = words[words < limit] % modulus
        take = min(count - filled, kept.size)
        out[filled : filled + take] = kept[:take]
        filled += take
        need = count - filled
    return out


def blind(x: QuantizedTensor, factors: np.ndarray) -> QuantizedTensor:
    """Mask a tensor: (x + r) mod p. The result is uniform, whatever x is."""
    if factors.shape != x.shape:
        raise FieldError(f"factor shape {factors.shape} != tensor shape {x.shape}")
    return x.with_data(np.mod(x.data + factors, x.modulus))


def unblind(z: QuantizedTensor, u: QuantizedTensor) -> QuantizedTensor:
    """Strip the linear image of the factors: (z - U) mod p."""
    check_same_field(z, u)
    if u.shape != z.shape:
        raise FieldError(f"unblinding shape {u.shape} != tensor shape {z.shape}")
    return z.with_data(np.mod(z.data - u.data, z.modulus))


@dataclass(frozen=True)
class UnblindingRecord:
    """Factors r for one layer plus their raw linear image U = L(r)."""

    layer_index: int
    factors: QuantizedTensor  # at the activation scale, uniform field values
    linear_image: QuantizedTensor  # at scale**2, matches the raw worker output


@dataclass
class UnblindingSet:
    request_id: str
    records: dict[int, UnblindingRecord] = field(default_factory=dict)

    def record(self, layer_index: int) -> UnblindingRecord:
        if layer_index not in self.records:
            raise BlindingError(
                f"no unblinding material for layer {layer_index} "
                f"(request {self.request_id!r})"
            )
        return self.records[layer_index]

    @property
    def total_bytes(self) -> int:
        return sum(
            r.factors.nbytes_transport + r.linear_image.nbytes_transport
            for r in self.records.values()
        )


def blinded_linear_layers(model: Model, plan: PartitionPlan) -> list[int]:
    """Indices of tier-1 linear layers whose offload gets blinded."""
    if not plan.blinds_tier1:
        return []
    return [
        l.index
        for l in model.graph.layers
        if l.index <= plan.partition and l.kind in (LayerKind.CONV, LayerKind.DENSE)
    ]


def precompute_unblinding(
    model: Model,
    plan: PartitionPlan,
    request_id: str,
    stream: BlindingStream,
    batch: int = 1,
) -> UnblindingSet:
    """Draw per-layer factors and their linear images ahead of a request.

    This is the offline half of the protocol: the linear images cost a full
    pass over the blinded layers but happen before inference starts.
    """
    out = UnblindingSet(request_id=request_id)
    graph = model.graph
    for index in blinded_linear_layers(model, plan):
        layer = graph.layer(index)
        shape = (batch, *layer.input_shape)
        factors = stream.factors_for(request_id, index, shape, graph.modulus)
        r = QuantizedTensor(factors, graph.scale, graph.modulus)
        w = model.kernel(index)
        if layer.kind is LayerKind.CONV:
            u = conv2d(r, w, stride=layer.stride, padding=layer.padding)
        else:
            u = dense(r, w)
        out.records[index] = UnblindingRecord(index, r, u)
    return out


# ---------------------------------------------------------------------------
# unblinding blob file format

_KIND_FACTORS = 0
_KIND_LINEAR_IMAGE = 1


def write_unblinding_blob(material: UnblindingSet, key: bytes) -> bytes:
    """Serialize precomputed material, each tensor sealed with an AEAD.

    Field elements pack into 4-byte words (they are below 2**24); the header
    is authenticated as associated data, so any tamper fails decryption.
    """
    aead = ChaCha20Poly1305(key)
    rid = material.request_id.encode("utf-8")
    parts = [BLOB_MAGIC, struct.pack("<IH", BLOB_VERSION, len(rid)), rid]
    parts.append(struct.pack("<I", len(material.records)))
    for index in sorted(material.records):
        rec = material.records[index]
        for kind, tensor in (
            (_KIND_FACTORS, rec.factors),
            (_KIND_LINEAR_IMAGE, rec.linear_image),
        ):
            header = struct.pack(
                "<IBBII",
                index,
                kind,
                len(tensor.shape),
                tensor.scale,
                tensor.modulus,
            ) + struct.pack(f"<{len(tensor.shape)}I", *tensor.shape)
            nonce = hashlib.sha256(rid + header).digest()[:12]
            sealed = aead.encrypt(nonce, tensor.data.astype("<u4").tobytes(), header)
            parts.append(header)
            parts.append(struct.pack("<Q", len(sealed)))
            parts.append(sealed)
    return b"".join(parts)


def read_unblinding_blob(blob: bytes, key: bytes) -> UnblindingSet:
    aead = ChaCha20Poly1305(key)
    view = memoryview(blob)
    if len(view) < 10 or bytes(view[:4]) != BLOB_MAGIC:
        raise BlindingError("not an unblinding blob (bad magic)")
    version, rid_len = struct.unpack_from("<IH", view, 4)
    if version != BLOB_VERSION:
        raise BlindingError(f"unsupported blob version {version}")
    offset = 10
    rid = bytes(view[offset : offset + rid_len]).decode("utf-8")
    offset += rid_len
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4
    halves: dict[tuple[int, int], QuantizedTensor] = {}
    for _ in range(2 * count):
        if offset + 14 > len(view):
            raise BlindingError("truncated unblinding blob")
        index, kind, rank, scale, modulus = struct.unpack_from("<IBBII", view, offset)
        header_len = 14 + 4 * rank
        header = bytes(view[offset : offset + header_len])
        shape = struct.unpack_from(f"<{rank}I", view, offset + 14)
        offset += header_len
        (sealed_len,) = struct.unpack_from("<Q", view, offset)
        offset += 8
        sealed = bytes(view[offset : offset + sealed_len])
        if len(sealed) != sealed_len:
            raise BlindingError("truncated unblinding blob")
        offset += sealed_len
        nonce = hashlib.sha256(rid.encode("utf-8") + header).digest()[:12]
        try:
            raw = aead.decrypt(nonce, sealed, header)
        except InvalidTag:
            raise BlindingError(
                f"unblinding material for layer {index} failed authentication "
                "(tampered blob or wrong key)"
            ) from None
        data = np.frombuffer(raw, dtype="<u4").astype(np.int64).reshape(shape)
        halves[(index, kind)] = QuantizedTensor(data, scale, modulus)
    out = UnblindingSet(request_id=rid)
    indices = {i for i, _ in halves}
    for index in sorted(indices):
        try:
            factors = halves[(index, _KIND_FACTORS)]
            image = halves[(index, _KIND_LINEAR_IMAGE)]
        except KeyError:
            raise BlindingError(f"layer {index} missing half of its material") from None
        out.records[index] = UnblindingRecord(index, factors, image)
    return out


# ---------------------------------------------------------------------------
# byte accounting


@dataclass(frozen=True)
class BlindedBytesReport:
    """Honest per-direction byte totals plus the feature-cycle summary.

    ``cycle_bytes`` counts each intermediate feature that completed the
    blind -> offload -> unblind cycle once (the unblinded output bytes);
    it is the figure comparable to the analytic conv/dense feature-map sum.
    """

    per_layer_blinded: dict[int, int]
    per_layer_unblinded: dict[int, int]
    total_blinded: int
    total_unblinded: int

    @property
    def cycle_bytes(self) -> int:
        return self.total_unblinded

    @property
    def combined(self) -> int:
        return self.total_blinded + self.total_unblinded


def blinded_bytes_accounting(trace) -> BlindedBytesReport:
    """Summarize the blinded/unblinded byte columns of an InferenceTrace."""
    per_b = {r.layer_index: r.bytes_blinded for r in trace.records if r.bytes_blinded}
    per_u = {r.layer_index: r.bytes_unblinded for r in trace.records if r.bytes_unblinded}
    return BlindedBytesReport(
        per_layer_blinded=per_b,
        per_layer_unblinded=per_u,
        total_blinded=sum(per_b.values()),
        total_unblinded=sum(per_u.values()),
    )

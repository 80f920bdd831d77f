"""Inference under a partition plan: real tensor runs and analytic dry runs.

One control loop produces both. The dry run walks the layer graph doing only
the cost arithmetic; the live run layers tensor math and worker round-trips
on top of the very same arithmetic. That construction is what makes the
simulated timings testable: a live trace and an analytic trace of the same
plan agree field for field.

Trust boundary, concretely:

* the enclave side holds the decrypted input, all tier-1 activations, the
  blinding factors, and (in non-blinding modes) tier-1 parameters;
* the untrusted worker holds the clear model weights and sees only what
  crosses the channel — blinded tier-1 inputs, and tier-2 activations once
  the plan hands the tail over.

Every worker exchange passes through the wire codec, in-process or not, so
byte accounting is identical across transports.
"""

from __future__ import annotations

import hashlib
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from . import wire
from .blinding import (
    BlindingError,
    BlindingStream,
    UnblindingSet,
    blind,
    precompute_unblinding,
    unblind,
)
from .enclave import (
    CostModel,
    EnclaveConfig,
    EnclaveError,
    EnclaveState,
    copy_across_boundary,
    create_enclave,
    default_cost_model,
    default_enclave_config,
    load_params,
    peak_memory,
)
from .fieldmath import FieldError
from .kernels import conv2d, dense, linear_postprocess, maxpool2d, softmax
from .model import (
    FEATURE_ELEM_BYTES,
    ExecutionMode,
    LayerKind,
    Model,
    ModelGraph,
    PartitionPlan,
)
from .tensors import QuantizedTensor, dequantize, quantize
from .trace import InferenceTrace, LayerTrace

_RESULT_ELEM_BYTES = 8  # probabilities travel as float64


class WorkerError(RuntimeError):
    """Raised when the untrusted worker gets a request it cannot serve."""


# ---------------------------------------------------------------------------
# encrypted inputs

_INPUT_MAGIC = b"BFEI"
_INPUT_VERSION = 1


class InsecureContext:
    """Explicit consent to decrypt an input outside any enclave.

    UntrustedOnly offers no input privacy; constructing one of these is how
    a caller acknowledges that instead of getting it silently.
    """


@dataclass(frozen=True)
class EncryptedInput:
    """A client image sealed for the enclave (header is authenticated)."""

    header: bytes
    nonce: bytes
    ciphertext: bytes

    @property
    def shape(self) -> tuple[int, ...]:
        return _parse_input_header(self.header)


def _input_header(shape: tuple[int, ...]) -> bytes:
    head = struct.pack("<4sBB", _INPUT_MAGIC, _INPUT_VERSION, len(shape))
    return head + struct.pack(f"<{len(shape)}I", *shape)


def _parse_input_header(header: bytes) -> tuple[int, ...]:
    if len(header) < 6:
        raise EnclaveError("truncated encrypted-input header")
    magic, version, rank = struct.unpack_from("<4sBB", header)
    if magic != _INPUT_MAGIC:
        raise EnclaveError("not an encrypted input (bad magic)")
    if version != _INPUT_VERSION:
        raise EnclaveError(f"unsupported encrypted-input version {version}")
    if len(header) != 6 + 4 * rank:
        raise EnclaveError("encrypted-input header length mismatch")
    return struct.unpack_from(f"<{rank}I", header, 6)


def encrypt_input(images: np.ndarray, key: bytes) -> EncryptedInput:
    """Seal a float image batch for the enclave.

    The nonce is derived from key, header, and plaintext, so equal inputs
    encrypt identically and reports stay reproducible; distinct inputs never
    share a nonce.
    """
    if len(key) != 32:
        raise EnclaveError("input keys are 32 bytes")
    data = np.ascontiguousarray(images, dtype=np.float32)
    header = _input_header(data.shape)
    raw = data.tobytes()
    nonce = hashlib.sha256(b"blindfold-input" + key + header + raw).digest()[:12]
    ciphertext = ChaCha20Poly1305(key).encrypt(nonce, raw, header)
    return EncryptedInput(header=header, nonce=nonce, ciphertext=ciphertext)


def decrypt_input(
    enc: EncryptedInput, key: bytes, context: EnclaveState | InsecureContext
) -> np.ndarray:
    """Open a sealed input — inside a live enclave, or with explicit consent."""
    if isinstance(context, EnclaveState):
        context.require_alive()
    elif not isinstance(context, InsecureContext):
        raise EnclaveError(
            "input decryption needs a live enclave, or an InsecureContext "
            "to accept cleartext exposure"
        )
    shape = _parse_input_header(enc.header)
    try:
        raw = ChaCha20Poly1305(key).decrypt(enc.nonce, enc.ciphertext, enc.header)
    except InvalidTag:
        raise EnclaveError(
            "encrypted input failed authentication (tampered or wrong key)"
        ) from None
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


# ---------------------------------------------------------------------------
# the untrusted worker and its channels


@dataclass(frozen=True)
class WorkerLogEntry:
    """What one request exposed to the worker; the privacy audit record."""

    request_id: str
    op: str  # "linear" | "range"
    layer_start: int
    layer_end: int
    blinded: bool
    payload_kind: str
    payload_bytes: int
    payload: np.ndarray | None = field(default=None, repr=False)


class UntrustedWorker:
    """The fast, untrusted device: clear weights, no secrets.

    It executes exactly what it is asked — a raw linear map, or a full run
    of a layer range — and logs every payload it sees. ``capture_payloads``
    keeps the payloads themselves for privacy assertions in tests.
    """

    def __init__(self, model: Model, capture_payloads: bool = False):
        self.model = model
        self.capture_payloads = capture_payloads
        self.log: list[WorkerLogEntry] = []

    def execute(self, req: wire.WorkerRequest) -> wire.WorkerResponse:
        graph = self.model.graph
        if req.modulus != graph.modulus:
            raise WorkerError(
                f"request modulus {req.modulus} != model modulus {graph.modulus}"
            )
        self.log.append(
            WorkerLogEntry(
                request_id=req.request_id,
                op="linear" if req.op == wire.OP_LINEAR else "range",
                layer_start=req.layer_start,
                layer_end=req.layer_end,
                blinded=req.blinded,
                payload_kind=req.payload_kind,
                payload_bytes=req.payload_bytes,
                payload=req.payload.copy() if self.capture_payloads else None,
            )
        )
        if req.payload_kind != "field":
            raise WorkerError("workers accept field tensors only")
        x = QuantizedTensor(req.payload, req.scale, graph.modulus)
        if req.op == wire.OP_LINEAR:
            return self._linear(req, x)
        return self._range(req, x)

    def _linear(self, req: wire.WorkerRequest, x: QuantizedTensor) -> wire.WorkerResponse:
        layer = self.model.graph.layer(req.layer_start)
        if layer.kind is LayerKind.CONV:
            raw = conv2d(x, self.model.kernel(layer.index), layer.stride, layer.padding)
        elif layer.kind is LayerKind.DENSE:
            raw = dense(x, self.model.kernel(layer.index))
        else:
            raise WorkerError(f"layer {layer.index} ({layer.kind.value}) has no linear map")
        return wire.WorkerResponse(req.request_id, raw.data, "field", raw.scale, raw.modulus)

    def _range(self, req: wire.WorkerRequest, x: QuantizedTensor) -> wire.WorkerResponse:
        graph = self.model.graph
        if not 1 <= req.layer_start <= req.layer_end <= graph.layer_count:
            raise WorkerError(
                f"layer range {req.layer_start}..{req.layer_end} outside the model"
            )
        for index in range(req.layer_start, req.layer_end + 1):
            layer = graph.layer(index)
            if layer.kind is LayerKind.CONV:
                raw = conv2d(x, self.model.kernel(index), layer.stride, layer.padding)
                x = linear_postprocess(raw, self.model.bias(index), graph.scale, layer.relu)
            elif layer.kind is LayerKind.DENSE:
                raw = dense(x, self.model.kernel(index))
                x = linear_postprocess(raw, self.model.bias(index), graph.scale, layer.relu)
            elif layer.kind is LayerKind.MAXPOOL:
                x = maxpool2d(x, layer.window, layer.stride)
            else:
                probs = softmax(dequantize(x))
                return wire.WorkerResponse(
                    req.request_id, probs, "float", 1, graph.modulus
                )
        return wire.WorkerResponse(req.request_id, x.data, "field", x.scale, x.modulus)


class InProcessChannel:
    """Same-process channel that still round-trips the wire codec.

    Encoding on the way in and out keeps in-process traffic byte-identical
    to the socket transport, so byte accounting never depends on transport.
    """

    def __init__(self, worker: UntrustedWorker):
        self.worker = worker

    def submit(self, req: wire.WorkerRequest) -> wire.WorkerResponse:
        decoded = wire.decode_request(wire.encode_request(req))
        resp = self.worker.execute(decoded)
        return wire.decode_response(wire.encode_response(resp))

    def close(self) -> None:
        pass


class WorkerServer:
    """Loopback TCP server wrapping a worker, one connection at a time."""

    def __init__(self, worker: UntrustedWorker, host: str = "127.0.0.1", port: int = 0):
        self.worker = worker
        self._listener = socket.create_server((host, port))
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    def start(self) -> "WorkerServer":
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._listener.close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            with conn:
                while True:
                    try:
                        raw = wire.read_frame(conn)
                    except (wire.WireFormatError, OSError):
                        break
                    resp = self.worker.execute(wire.decode_request(raw))
                    conn.sendall(wire.frame(wire.encode_response(resp)))


class SocketChannel:
    """Client side of a WorkerServer connection."""

    def __init__(self, address: tuple[str, int]):
        self._sock = socket.create_connection(address)

    def submit(self, req: wire.WorkerRequest) -> wire.WorkerResponse:
        self._sock.sendall(wire.frame(wire.encode_request(req)))
        return wire.decode_response(wire.read_frame(self._sock))

    def close(self) -> None:
        self._sock.close()


# ---------------------------------------------------------------------------
# the shared control loop


@dataclass
class InferenceResult:
    probabilities: np.ndarray  # (batch, classes) float64
    trace: InferenceTrace
    enclave: EnclaveState | None


def _prod(shape: tuple[int, ...]) -> int:
    out = 1
    for dim in shape:
        out *= int(dim)
    return out


def _blinded_indices(graph: ModelGraph, plan: PartitionPlan) -> list[int]:
    if not plan.blinds_tier1:
        return []
    return [
        l.index
        for l in graph.layers
        if l.index <= plan.partition and l.kind in (LayerKind.CONV, LayerKind.DENSE)
    ]


def _submit(channel, request_id: str, op: int, start: int, end: int, blinded: bool,
            x: QuantizedTensor) -> wire.WorkerResponse:
    req = wire.WorkerRequest(
        request_id=request_id,
        op=op,
        layer_start=start,
        layer_end=end,
        blinded=blinded,
        payload=x.data,
        payload_kind="field",
        scale=x.scale,
        modulus=x.modulus,
    )
    return channel.submit(req)


def _execute(
    graph: ModelGraph,
    plan: PartitionPlan,
    cost_model: CostModel,
    config: EnclaveConfig,
    batch: int,
    request_id: str,
    *,
    live: bool,
    model: Model | None = None,
    raw_input: np.ndarray | EncryptedInput | None = None,
    input_key: bytes | None = None,
    allow_insecure_input: bool = False,
    material: UnblindingSet | None = None,
    channel=None,
) -> tuple[np.ndarray | None, InferenceTrace, EnclaveState | None]:
    plan.validate(graph)
    cost_model.validate()
    config.validate()
    if batch < 1:
        raise FieldError(f"batch must be >= 1, got {batch}")

    cm = cost_model
    mode = plan.mode
    last = graph.layer_count
    p = plan.partition
    trace = InferenceTrace(
        mode=mode.value,
        partition=p,
        model_name=graph.name,
        request_id=request_id,
        batch=batch,
    )
    trace.peak_memory_bytes = peak_memory(graph, plan, config, batch=batch).total

    state: EnclaveState | None = None
    if mode is not ExecutionMode.UNTRUSTED_ONLY:
        state, creation = create_enclave(graph, plan, cm, config, batch=batch)
        trace.creation_ms = creation
        trace.recovery_ms = creation  # recovery rebuilds from scratch, same bill
    if plan.blinds_tier1:
        offline_macs = sum(graph.layer(i).macs for i in _blinded_indices(graph, plan))
        trace.offline_ms = offline_macs * batch * cm.untrusted_mac_ms

    # --- input arrival ------------------------------------------------------
    x: QuantizedTensor | None = None
    if live:
        arr = raw_input
        if isinstance(arr, EncryptedInput):
            if input_key is None:
                raise EnclaveError("an encrypted input needs its key")
            if mode is ExecutionMode.UNTRUSTED_ONLY:
                if not allow_insecure_input:
                    raise EnclaveError(
                        "untrusted-only decrypts the input outside any enclave; "
                        "pass allow_insecure_input=True to accept that"
                    )
                arr = decrypt_input(arr, input_key, InsecureContext())
            else:
                arr = decrypt_input(arr, input_key, state)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == len(graph.input_shape):
            arr = arr[None, ...]
        if arr.shape != (batch, *graph.input_shape):
            raise FieldError(
                f"input shape {arr.shape} != expected {(batch, *graph.input_shape)}"
            )
        x = quantize(arr, graph.scale, graph.modulus)

    in_elems = batch * _prod(graph.input_shape)
    in_bytes = FEATURE_ELEM_BYTES * in_elems
    records: list[LayerTrace] = []
    if mode is ExecutionMode.UNTRUSTED_ONLY:
        records.append(
            LayerTrace(
                0, "input", "input", location="untrusted", blinded=False,
                compute_ms=in_elems * cm.untrusted_mac_ms,
                bytes_copied_out=in_bytes,
                copy_ms=in_bytes * cm.copy_out_ms_per_byte,
            )
        )
    else:
        rep = copy_across_boundary(state, in_bytes, "in")
        state.copied_in_bytes += in_bytes
        records.append(
            LayerTrace(
                0, "input", "input", location="enclave", blinded=False,
                compute_ms=in_elems * cm.enclave_mac_ms,
                bytes_copied_in=in_bytes,
                copy_ms=rep.cost_ms,
            )
        )

    probs: np.ndarray | None = None

    # --- tier 1: enclave-controlled layers ----------------------------------
    for index in range(1, p + 1):
        layer = graph.layer(index)
        post_ms = layer.post_ops * batch * cm.enclave_mac_ms
        if layer.kind in (LayerKind.CONV, LayerKind.DENSE):
            if plan.blinds_tier1:
                in_b = layer.input_bytes * batch
                out_b = layer.output_bytes * batch
                rep_out = copy_across_boundary(state, in_b, "out")
                rep_in = copy_across_boundary(state, out_b, "in")
                state.copied_out_bytes += in_b
                state.copied_in_bytes += out_b
                records.append(
                    LayerTrace(
                        index, layer.kind.value, layer.name,
                        location="untrusted", blinded=True,
                        macs=layer.macs * batch,
                        compute_ms=layer.macs * batch * cm.untrusted_mac_ms + post_ms,
                        bytes_copied_in=out_b, bytes_copied_out=in_b,
                        copy_ms=rep_out.cost_ms + rep_in.cost_ms,
                        bytes_blinded=in_b, bytes_unblinded=out_b,
                        blind_ms=in_b * cm.blind_ms_per_byte
                        + out_b * (cm.unblind_ms_per_byte + cm.unblind_fetch_ms_per_byte),
                    )
                )
                if live:
                    record = material.record(index)
                    masked = blind(x, record.factors.data)
                    resp = _submit(
                        channel, request_id, wire.OP_LINEAR, index, index, True, masked
                    )
                    if resp.payload_kind != "field":
                        raise WorkerError("linear offload must return a field tensor")
                    z = QuantizedTensor(resp.payload, resp.scale, graph.modulus)
                    raw = unblind(z, record.linear_image)
                    x = linear_postprocess(raw, model.bias(index), graph.scale, layer.relu)
            else:
                rep = load_params(state, index)
                records.append(
                    LayerTrace(
                        index, layer.kind.value, layer.name,
                        location="enclave", blinded=False,
                        macs=layer.macs * batch,
                        compute_ms=layer.macs * batch * cm.enclave_mac_cost(layer.kind)
                        + post_ms,
                        bytes_params_loaded=rep.bytes,
                        param_load_ms=rep.cost_ms,
                        params_streamed=rep.streamed,
                    )
                )
                if live:
                    w = model.kernel(index)
                    if layer.kind is LayerKind.CONV:
                        raw = conv2d(x, w, layer.stride, layer.padding)
                    else:
                        raw = dense(x, w)
                    x = linear_postprocess(raw, model.bias(index), graph.scale, layer.relu)
        elif layer.kind is LayerKind.MAXPOOL:
            records.append(
                LayerTrace(
                    index, layer.kind.value, layer.name,
                    location="enclave", blinded=False, compute_ms=post_ms,
                )
            )
            if live:
                x = maxpool2d(x, layer.window, layer.stride)
        else:  # softmax; tier 1 reaches it only when the plan pins p = L
            result_bytes = _RESULT_ELEM_BYTES * layer.output_elems * batch
            rep = copy_across_boundary(state, result_bytes, "out")
            state.copied_out_bytes += result_bytes
            records.append(
                LayerTrace(
                    index, layer.kind.value, layer.name,
                    location="enclave", blinded=False,
                    compute_ms=post_ms,
                    bytes_copied_out=result_bytes,
                    copy_ms=rep.cost_ms,
                )
            )
            if live:
                probs = softmax(dequantize(x))

    # --- tier 2: the untrusted tail -----------------------------------------
    if p < last:
        cross_bytes = 0
        cross_ms = 0.0
        if mode is not ExecutionMode.UNTRUSTED_ONLY:
            boundary_bytes = (
                graph.layer(p).output_bytes if p >= 1 else FEATURE_ELEM_BYTES * _prod(graph.input_shape)
            )
            cross_bytes = boundary_bytes * batch
            rep = copy_across_boundary(state, cross_bytes, "out")
            state.copied_out_bytes += cross_bytes
            cross_ms = rep.cost_ms
        if live:
            resp = _submit(channel, request_id, wire.OP_RANGE, p + 1, last, False, x)
            if resp.payload_kind != "float":
                raise WorkerError("a range ending at softmax must return probabilities")
            probs = resp.payload
        for index in range(p + 1, last + 1):
            layer = graph.layer(index)
            row = dict(
                layer_index=index,
                kind=layer.kind.value,
                name=layer.name,
                location="untrusted",
                blinded=False,
                macs=layer.macs * batch,
                compute_ms=(layer.macs + layer.post_ops) * batch * cm.untrusted_mac_ms,
            )
            if index == p + 1 and cross_bytes:
                row["bytes_copied_out"] = cross_bytes
                row["copy_ms"] = cross_ms
            if layer.kind is LayerKind.SOFTMAX:
                result_bytes = _RESULT_ELEM_BYTES * layer.output_elems * batch
                row["bytes_copied_in"] = result_bytes
                row["copy_ms"] = row.get("copy_ms", 0.0) + result_bytes * cm.copy_in_ms_per_byte
            records.append(LayerTrace(**row))

    trace.records = records
    return probs, trace, state


def run_inference(
    model: Model,
    plan: PartitionPlan,
    images: np.ndarray | EncryptedInput,
    *,
    input_key: bytes | None = None,
    request_id: str = "request-0",
    blinding_seed: int | bytes | None = None,
    material: UnblindingSet | None = None,
    channel=None,
    cost_model: CostModel | None = None,
    config: EnclaveConfig | None = None,
    allow_insecure_input: bool = False,
) -> InferenceResult:
    """Run one request end to end under a plan; returns probabilities + trace.

    Blinding modes need either ``blinding_seed`` (factors are drawn and their
    linear images precomputed here, priced as offline work) or ready-made
    ``material`` for this request id. ``channel`` defaults to an in-process
    worker holding this model; pass a SocketChannel to cross a real transport.
    """
    graph = model.graph
    cm = cost_model or default_cost_model()
    cfg = config or default_enclave_config()
    plan.validate(graph)

    if isinstance(images, EncryptedInput):
        shape: tuple[int, ...] = images.shape
    else:
        images = np.asarray(images)
        shape = images.shape
    if len(shape) == len(graph.input_shape):
        batch = 1
    elif len(shape) == len(graph.input_shape) + 1:
        batch = int(shape[0])
    else:
        raise FieldError(f"input shape {shape} does not fit {graph.input_shape}")
    if tuple(shape[-len(graph.input_shape):]) != graph.input_shape:
        raise FieldError(
            f"input shape {shape} != model input {graph.input_shape}"
        )

    if plan.blinds_tier1:
        if material is None:
            if blinding_seed is None:
                raise BlindingError(
                    "blinded offload needs blinding_seed or precomputed material"
                )
            stream = BlindingStream(blinding_seed)
            material = precompute_unblinding(model, plan, request_id, stream, batch)
        elif material.request_id != request_id:
            raise BlindingError(
                f"unblinding material belongs to request {material.request_id!r}, "
                f"not {request_id!r}"
            )

    owns_channel = False
    needs_worker = plan.blinds_tier1 or plan.partition < graph.layer_count
    if channel is None and needs_worker:
        channel = InProcessChannel(UntrustedWorker(model))
        owns_channel = True
    try:
        probs, trace, state = _execute(
            graph, plan, cm, cfg, batch, request_id,
            live=True,
            model=model,
            raw_input=images,
            input_key=input_key,
            allow_insecure_input=allow_insecure_input,
            material=material,
            channel=channel,
        )
    finally:
        if owns_channel:
            channel.close()
    return InferenceResult(probabilities=probs, trace=trace, enclave=state)


def simulate_trace(
    model_or_graph: Model | ModelGraph,
    plan: PartitionPlan,
    *,
    batch: int = 1,
    request_id: str = "analytic",
    cost_model: CostModel | None = None,
    config: EnclaveConfig | None = None,
) -> InferenceTrace:
    """Analytic dry run: the exact trace a live run would produce, no tensors."""
    graph = model_or_graph.graph if isinstance(model_or_graph, Model) else model_or_graph
    cm = cost_model or default_cost_model()
    cfg = config or default_enclave_config()
    _, trace, _ = _execute(graph, plan, cm, cfg, batch, request_id, live=False)
    return trace

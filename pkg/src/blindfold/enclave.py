"""Enclave lifecycle and cost simulation.

Costs are simulated milliseconds derived from byte/MAC coefficients; nothing
here measures wall-clock time. The default calibration reproduces the
relative behavior of an SGX-class enclave with a GPU-class untrusted worker:
dense layers dominated by parameter movement, blinding priced per byte, and
enclave creation priced per committed page plus preloaded parameter bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .fieldmath import FieldError
from .model import ExecutionMode, LayerKind, ModelGraph, PartitionPlan

MIB = 1 << 20


class EnclaveError(RuntimeError):
    """Raised for lifecycle misuse (destroyed enclave, EPC overflow...)."""


class EpcOverflowError(EnclaveError):
    """Strict-policy EPC exhaustion."""


@dataclass(frozen=True)
class CostModel:
    """Simulated-cost coefficients (milliseconds per unit).

    ``enclave_dense_mac_factor`` scales the enclave per-MAC cost for dense
    layers, whose streamed weights make each MAC memory-bound; one shared
    coefficient cannot reflect both conv and dense behavior.
    """

    enclave_mac_ms: float = 2.7e-8
    enclave_dense_mac_factor: float = 54.0
    untrusted_mac_ms: float = 4.42e-10
    copy_in_ms_per_byte: float = 3.645e-7
    copy_out_ms_per_byte: float = 3.645e-7
    blind_ms_per_byte: float = 4.0 / (6 * MIB)  # 6 MiB blinds in ~4 ms
    unblind_ms_per_byte: float = 4.0 / (6 * MIB)
    # Per-layer unblinding-factor fetches prefetch/overlap with worker
    # compute; price them separately so that assumption stays adjustable.
    unblind_fetch_ms_per_byte: float = 0.0
    page_encrypt_ms: float = 7.3e-3
    create_base_ms: float = 0.5

    def validate(self) -> None:
        for name in (
            "enclave_mac_ms",
            "untrusted_mac_ms",
            "copy_in_ms_per_byte",
            "copy_out_ms_per_byte",
            "blind_ms_per_byte",
            "unblind_ms_per_byte",
            "unblind_fetch_ms_per_byte",
            "page_encrypt_ms",
            "create_base_ms",
        ):
            if getattr(self, name) < 0:
                raise FieldError(f"cost coefficient {name} must be non-negative")
        if self.enclave_dense_mac_factor < 1:
            raise FieldError("enclave_dense_mac_factor must be >= 1")
        if self.untrusted_mac_ms > self.enclave_mac_ms:
            raise FieldError(
                "untrusted per-MAC cost must not exceed the enclave per-MAC cost"
            )

    def enclave_mac_cost(self, kind: LayerKind) -> float:
        if kind is LayerKind.DENSE:
            return self.enclave_mac_ms * self.enclave_dense_mac_factor
        return self.enclave_mac_ms


@dataclass(frozen=True)
class EnclaveConfig:
    """Capacity and policy knobs (sizes in bytes)."""

    epc_bytes: int = 128 * MIB
    page_bytes: int = 4096
    base_overhead_bytes: int = 1 * MIB  # code, stack, runtime
    lazy_dense_threshold: int = 8 * MIB
    stream_chunk_bytes: int = 8 * MIB
    strict_epc: bool = True
    epc_overflow_penalty: float = 10.0

    def validate(self) -> None:
        if min(self.epc_bytes, self.page_bytes, self.stream_chunk_bytes) <= 0:
            raise FieldError("enclave sizes must be positive")
        if self.base_overhead_bytes < 0 or self.lazy_dense_threshold < 0:
            raise FieldError("enclave sizes must be non-negative")
        if self.epc_overflow_penalty < 1:
            raise FieldError("epc_overflow_penalty must be >= 1")


def default_cost_model() -> CostModel:
    return CostModel()


def default_enclave_config() -> EnclaveConfig:
    return EnclaveConfig()


# ---------------------------------------------------------------------------
# analytic sizing


def _params_bytes(graph: ModelGraph, layer_index: int) -> int:
    return graph.layer(layer_index).param_count * graph.param_width


def _is_lazy(graph: ModelGraph, layer_index: int, config: EnclaveConfig) -> bool:
    layer = graph.layer(layer_index)
    return (
        layer.kind is LayerKind.DENSE
        and _params_bytes(graph, layer_index) > config.lazy_dense_threshold
    )


def resident_param_layers(
    graph: ModelGraph, plan: PartitionPlan, config: EnclaveConfig
) -> list[int]:
    """Tier-1 layers whose parameters live inside the enclave.

    Blinding modes keep no weights inside: the worker owns the linear maps.
    Baseline2 streams big dense layers on demand instead of pinning them.
    """
    if plan.blinds_tier1 or plan.mode is ExecutionMode.UNTRUSTED_ONLY:
        return []
    resident = []
    for l in graph.layers:
        if not l.parameterized or l.index > plan.partition:
            continue
        if plan.mode is ExecutionMode.BASELINE2 and _is_lazy(graph, l.index, config):
            continue
        resident.append(l.index)
    return resident


def streamed_param_layers(
    graph: ModelGraph, plan: PartitionPlan, config: EnclaveConfig
) -> list[int]:
    if plan.mode is not ExecutionMode.BASELINE2:
        return []
    return [
        l.index
        for l in graph.layers
        if l.parameterized and l.index <= plan.partition and _is_lazy(graph, l.index, config)
    ]


@dataclass(frozen=True)
class PeakMemoryReport:
    """Enclave peak residency and its components, in bytes."""

    total: int
    base_overhead: int
    resident_params: int
    working_buffers: int  # double buffer of the largest tier-1 activation
    blinding_buffer: int  # largest tensor a blinded layer masks or unmasks
    stream_chunk: int


def peak_memory(
    graph: ModelGraph,
    plan: PartitionPlan,
    config: EnclaveConfig | None = None,
    batch: int = 1,
) -> PeakMemoryReport:
    config = config or default_enclave_config()
    config.validate()
    plan.validate(graph)

    if plan.mode is ExecutionMode.UNTRUSTED_ONLY:
        return PeakMemoryReport(config.base_overhead_bytes, config.base_overhead_bytes, 0, 0, 0, 0)

    params = sum(
        _params_bytes(graph, i) for i in resident_param_layers(graph, plan, config)
    )
    tier1 = [l for l in graph.layers if l.index <= plan.partition]
    largest_act = max((l.output_bytes for l in tier1), default=0) * batch
    working = 2 * largest_act

    blinding_buffer = 0
    if plan.blinds_tier1:
        blinded = [
            l for l in tier1 if l.kind in (LayerKind.CONV, LayerKind.DENSE)
        ]
        blinding_buffer = max(
            (max(l.input_bytes, l.output_bytes) for l in blinded), default=0
        ) * batch

    chunk = config.stream_chunk_bytes if streamed_param_layers(graph, plan, config) else 0
    total = config.base_overhead_bytes + params + working + blinding_buffer + chunk
    return PeakMemoryReport(
        total=total,
        base_overhead=config.base_overhead_bytes,
        resident_params=params,
        working_buffers=working,
        blinding_buffer=blinding_buffer,
        stream_chunk=chunk,
    )


# ---------------------------------------------------------------------------
# lifecycle


@dataclass
class EnclaveState:
    """A live (or destroyed) enclave: sizing, residency ledger, policy."""

    graph: ModelGraph
    plan: PartitionPlan
    cost_model: CostModel
    config: EnclaveConfig
    static_bytes: int
    pages: int
    alive: bool = True
    resident_bytes: int = 0
    copied_in_bytes: int = 0
    copied_out_bytes: int = 0
    loaded_layers: frozenset[int] = frozenset()

    def require_alive(self) -> None:
        if not self.alive:
            raise EnclaveError(
                "enclave was destroyed by a power event; recover() builds a new one"
            )

    @property
    def over_epc(self) -> bool:
        return self.static_bytes > self.config.epc_bytes

    def _penalized(self, per_byte: float) -> float:
        if self.over_epc:
            return per_byte * self.config.epc_overflow_penalty
        return per_byte


def creation_cost_ms(
    graph: ModelGraph,
    plan: PartitionPlan,
    cost_model: CostModel,
    config: EnclaveConfig,
    batch: int = 1,
) -> float:
    """Deterministic creation cost: base + page commits + preloaded copies.

    recover() returns exactly this figure: recovery is a fresh creation.
    """
    sizing = peak_memory(graph, plan, config, batch=batch)
    pages = math.ceil(sizing.total / config.page_bytes)
    preload = sum(
        _params_bytes(graph, i) for i in resident_param_layers(graph, plan, config)
    )
    per_byte = cost_model.copy_in_ms_per_byte
    if sizing.total > config.epc_bytes:
        if config.strict_epc:
            raise EpcOverflowError(
                f"enclave needs {sizing.total} bytes but EPC holds {config.epc_bytes}"
            )
        per_byte *= config.epc_overflow_penalty
    return cost_model.create_base_ms + pages * cost_model.page_encrypt_ms + preload * per_byte


def create_enclave(
    graph: ModelGraph,
    plan: PartitionPlan,
    cost_model: CostModel | None = None,
    config: EnclaveConfig | None = None,
    batch: int = 1,
) -> tuple[EnclaveState, float]:
    """Size an enclave for the plan, preload tier-1 parameters, price it."""
    cost_model = cost_model or default_cost_model()
    config = config or default_enclave_config()
    cost_model.validate()
    config.validate()
    cost = creation_cost_ms(graph, plan, cost_model, config, batch=batch)
    sizing = peak_memory(graph, plan, config, batch=batch)
    resident = resident_param_layers(graph, plan, config)
    state = EnclaveState(
        graph=graph,
        plan=plan,
        cost_model=cost_model,
        config=config,
        static_bytes=sizing.total,
        pages=math.ceil(sizing.total / config.page_bytes),
        resident_bytes=sum(_params_bytes(graph, i) for i in resident),
        copied_in_bytes=sum(_params_bytes(graph, i) for i in resident),
        loaded_layers=frozenset(resident),
    )
    return state, cost


@dataclass(frozen=True)
class TransferReport:
    bytes: int
    cost_ms: float
    streamed: bool = False


def load_params(state: EnclaveState, layer_index: int) -> TransferReport:
    """Bring one layer's parameters across the boundary.

    Preloaded layers cost nothing (already resident). Lazy dense layers
    stream through the chunk buffer: full copy-in cost, no residency change
    (the matching eviction is recorded so the copy ledger stays conserved).
    """
    state.require_alive()
    if layer_index in state.loaded_layers:
        return TransferReport(0, 0.0)
    if state.plan.blinds_tier1:
        raise EnclaveError(
            "blinding modes keep no layer parameters inside the enclave"
        )
    bytes_needed = _params_bytes(state.graph, layer_index)
    per_byte = state._penalized(state.cost_model.copy_in_ms_per_byte)
    if _is_lazy(state.graph, layer_index, state.config):
        # streamed: enters and leaves through the chunk buffer
        state.copied_in_bytes += bytes_needed
        state.copied_out_bytes += bytes_needed  # zero-cost eviction
        return TransferReport(bytes_needed, bytes_needed * per_byte, streamed=True)
    if state.resident_bytes + bytes_needed > state.config.epc_bytes:
        if state.config.strict_epc:
            raise EpcOverflowError(
                f"loading layer {layer_index} ({bytes_needed} bytes) exceeds EPC"
            )
        per_byte *= state.config.epc_overflow_penalty
    state.resident_bytes += bytes_needed
    state.copied_in_bytes += bytes_needed
    state.loaded_layers = state.loaded_layers | {layer_index}
    return TransferReport(bytes_needed, bytes_needed * per_byte)


def copy_across_boundary(
    state: EnclaveState, nbytes: int, direction: str
) -> TransferReport:
    """Price a transient copy (activations, blinded tensors, results)."""
    state.require_alive()
    if nbytes < 0:
        raise FieldError(f"cannot copy {nbytes} bytes")
    if direction == "in":
        per_byte = state._penalized(state.cost_model.copy_in_ms_per_byte)
    elif direction == "out":
        per_byte = state._penalized(state.cost_model.copy_out_ms_per_byte)
    else:
        raise FieldError(f"direction must be 'in' or 'out', got {direction!r}")
    return TransferReport(nbytes, nbytes * per_byte)


def power_event(state: EnclaveState) -> None:
    """Destroy the enclave; all protected state is lost."""
    state.alive = False
    state.resident_bytes = 0
    state.loaded_layers = frozenset()


def recover(state: EnclaveState) -> tuple[EnclaveState, float]:
    """Rebuild after a power event. Costs exactly one fresh creation."""
    if state.alive:
        raise EnclaveError("recover() is only meaningful after a power event")
    return create_enclave(state.graph, state.plan, state.cost_model, state.config)

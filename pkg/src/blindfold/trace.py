"""Inference traces: who ran each layer, what it cost, what crossed where.

A trace is pure accounting: the same record set comes out of a real tensor
run and of an analytic dry run over the shapes, which is what makes the
simulated timings testable. Serialization is line-oriented JSON with a
versioned header so reports round-trip byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

TRACE_FORMAT = "blindfold-trace"
TRACE_VERSION = 1


class TraceFormatError(ValueError):
    """Raised when parsing a malformed trace document."""


@dataclass(frozen=True)
class LayerTrace:
    """Costs and byte movement attributed to one layer of one request."""

    layer_index: int
    kind: str
    name: str
    location: str  # "enclave" | "untrusted"
    blinded: bool
    macs: int = 0
    compute_ms: float = 0.0
    bytes_copied_in: int = 0
    bytes_copied_out: int = 0
    copy_ms: float = 0.0
    bytes_blinded: int = 0
    bytes_unblinded: int = 0
    blind_ms: float = 0.0
    bytes_params_loaded: int = 0
    param_load_ms: float = 0.0
    params_streamed: bool = False

    @property
    def total_ms(self) -> float:
        return self.compute_ms + self.copy_ms + self.blind_ms + self.param_load_ms


@dataclass
class InferenceTrace:
    """One request's full record: identity, per-layer rows, summary facts."""

    mode: str
    partition: int
    model_name: str
    request_id: str
    batch: int = 1
    records: list[LayerTrace] = field(default_factory=list)
    creation_ms: float = 0.0  # enclave setup, excluded from inference time
    offline_ms: float = 0.0  # unblinding precompute, excluded as well
    peak_memory_bytes: int = 0
    recovery_ms: float = 0.0

    @property
    def total_ms(self) -> float:
        return sum(r.total_ms for r in self.records)

    @property
    def total_blinded_bytes(self) -> int:
        return sum(r.bytes_blinded for r in self.records)

    @property
    def total_unblinded_bytes(self) -> int:
        return sum(r.bytes_unblinded for r in self.records)

    @property
    def blind_cycle_bytes(self) -> int:
        """Each feature completing blind -> offload -> unblind, counted once."""
        return self.total_unblinded_bytes

    def to_text(self) -> str:
        header = {
            "format": TRACE_FORMAT,
            "version": TRACE_VERSION,
            "mode": self.mode,
            "partition": self.partition,
            "model": self.model_name,
            "request_id": self.request_id,
            "batch": self.batch,
            "creation_ms": self.creation_ms,
            "offline_ms": self.offline_ms,
            "peak_memory_bytes": self.peak_memory_bytes,
            "recovery_ms": self.recovery_ms,
        }
        lines = [json.dumps(header, sort_keys=True)]
        for rec in self.records:
            lines.append(json.dumps({"layer": asdict(rec)}, sort_keys=True))
        totals = {
            "totals": {
                "total_ms": self.total_ms,
                "blinded_bytes": self.total_blinded_bytes,
                "unblinded_bytes": self.total_unblinded_bytes,
            }
        }
        lines.append(json.dumps(totals, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "InferenceTrace":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise TraceFormatError("empty trace document")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"bad trace header: {exc}") from exc
        if header.get("format") != TRACE_FORMAT:
            raise TraceFormatError("not a trace document (bad format field)")
        if header.get("version") != TRACE_VERSION:
            raise TraceFormatError(f"unsupported trace version {header.get('version')}")
        trace = cls(
            mode=header["mode"],
            partition=int(header["partition"]),
            model_name=header["model"],
            request_id=header["request_id"],
            batch=int(header.get("batch", 1)),
            creation_ms=float(header["creation_ms"]),
            offline_ms=float(header["offline_ms"]),
            peak_memory_bytes=int(header["peak_memory_bytes"]),
            recovery_ms=float(header["recovery_ms"]),
        )
        for line in lines[1:]:
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"bad trace row: {exc}") from exc
            if "layer" in row:
                trace.records.append(LayerTrace(**row["layer"]))
            elif "totals" in row:
                declared = row["totals"]
                if abs(declared["total_ms"] - trace.total_ms) > 1e-6:
                    raise TraceFormatError("trace totals do not match records")
            else:
                raise TraceFormatError(f"unknown trace row keys: {sorted(row)}")
        return trace


# ---------------------------------------------------------------------------
# breakdown


@dataclass(frozen=True)
class RuntimeBreakdown:
    """Per-category cost split; shares are percentages of the total."""

    total_ms: float
    compute_ms: float
    copy_ms: float
    blind_ms: float
    param_load_ms: float
    dense_ms: float
    dense_share_pct: float
    category_shares_pct: dict[str, float]
    per_layer_ms: dict[int, float]


def runtime_breakdown(trace: InferenceTrace) -> RuntimeBreakdown:
    compute = sum(r.compute_ms for r in trace.records)
    copy = sum(r.copy_ms for r in trace.records)
    blind = sum(r.blind_ms for r in trace.records)
    params = sum(r.param_load_ms for r in trace.records)
    total = compute + copy + blind + params
    dense = sum(r.total_ms for r in trace.records if r.kind == "dense")
    if total > 0:
        shares = {
            "compute": 100.0 * compute / total,
            "copy": 100.0 * copy / total,
            "blind": 100.0 * blind / total,
            "param_load": 100.0 * params / total,
        }
        dense_share = 100.0 * dense / total
    else:
        shares = {"compute": 0.0, "copy": 0.0, "blind": 0.0, "param_load": 0.0}
        dense_share = 0.0
    return RuntimeBreakdown(
        total_ms=total,
        compute_ms=compute,
        copy_ms=copy,
        blind_ms=blind,
        param_load_ms=params,
        dense_ms=dense,
        dense_share_pct=dense_share,
        category_shares_pct=shares,
        per_layer_ms={r.layer_index: r.total_ms for r in trace.records},
    )

"""Choosing the tier-1/tier-2 boundary from reconstruction-oracle scores.

The partition search walks layers shallow to deep. A layer whose oracle
score drops below the threshold is a candidate boundary; it is accepted only
when the next two layers stay below the threshold too, so a lone dip never
ends tier 1 early. A candidate too close to the end to have two confirming
successors cannot be accepted.

The oracle itself lives outside this package (an image-reconstruction
adversary); it communicates through two file formats defined here: exported
feature maps it consumes, and the score table it produces.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fieldmath import FieldError
from .kernels import conv2d, dense, linear_postprocess, maxpool2d, softmax
from .model import LayerKind, Model
from .tensors import QuantizedTensor, dequantize, quantize

DEFAULT_THRESHOLD = 0.2


# ---------------------------------------------------------------------------
# the boundary walk


@dataclass(frozen=True)
class PartitionStep:
    """One visited layer in the walk, for auditable reports."""

    layer_index: int
    score: float
    below: bool
    note: str


@dataclass(frozen=True)
class PartitionDecision:
    partition: int | None
    threshold: float
    layer_count: int
    steps: tuple[PartitionStep, ...] = field(default_factory=tuple)

    @property
    def found(self) -> bool:
        return self.partition is not None


def check_threshold(threshold: float) -> float:
    if not (0.0 < threshold < 1.0) or not math.isfinite(threshold):
        raise FieldError(f"threshold must sit strictly inside (0, 1), got {threshold}")
    return float(threshold)


def find_partition(
    scores: list[float] | tuple[float, ...], threshold: float = DEFAULT_THRESHOLD
) -> PartitionDecision:
    """Walk per-layer oracle scores and pick the confirmed boundary.

    ``scores[i]`` is the reconstruction score for layer ``i + 1``. Returns a
    decision whose ``partition`` is None when no boundary can be confirmed.
    """
    threshold = check_threshold(threshold)
    values = [float(s) for s in scores]
    if not values:
        raise FieldError("cannot choose a partition from an empty score list")
    for i, s in enumerate(values, start=1):
        if not math.isfinite(s):
            raise FieldError(f"score for layer {i} is not finite: {s}")
    count = len(values)
    steps: list[PartitionStep] = []
    index = 1
    while index <= count:
        score = values[index - 1]
        if score >= threshold:
            steps.append(PartitionStep(index, score, False, "above threshold"))
            index += 1
            continue
        if index + 2 > count:
            steps.append(
                PartitionStep(
                    index, score, True,
                    "candidate, but too close to the end for two confirming layers",
                )
            )
            break
        after_one = values[index]
        after_two = values[index + 1]
        if after_one < threshold and after_two < threshold:
            steps.append(
                PartitionStep(index, score, True, "candidate confirmed by the next two layers")
            )
            return PartitionDecision(
                partition=index,
                threshold=threshold,
                layer_count=count,
                steps=tuple(steps),
            )
        offender = index + 1 if after_one >= threshold else index + 2
        steps.append(
            PartitionStep(
                index, score, True,
                f"candidate rejected: layer {offender} climbs back above threshold",
            )
        )
        index += 1
    return PartitionDecision(
        partition=None, threshold=threshold, layer_count=count, steps=tuple(steps)
    )


# ---------------------------------------------------------------------------
# oracle score tables (CSV)

ORACLE_HEADER = "layer_index,score"


def format_oracle_scores(scores: list[float] | tuple[float, ...]) -> str:
    lines = [ORACLE_HEADER]
    for i, s in enumerate(scores, start=1):
        lines.append(f"{i},{float(s):.6f}")
    return "\n".join(lines) + "\n"


def parse_oracle_scores(text: str) -> list[float]:
    """Read a score table: header row, then contiguous layers from 1 up."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines or lines[0].replace(" ", "") != ORACLE_HEADER:
        raise FieldError(f"score tables start with a {ORACLE_HEADER!r} header row")
    scores: list[float] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise FieldError(f"line {lineno}: expected 'layer_index,score', got {line!r}")
        try:
            index = int(parts[0])
            score = float(parts[1])
        except ValueError:
            raise FieldError(f"line {lineno}: bad row {line!r}") from None
        if index != len(scores) + 1:
            raise FieldError(
                f"line {lineno}: layer indices must run 1, 2, ... without gaps; "
                f"got {index}"
            )
        if not math.isfinite(score):
            raise FieldError(f"line {lineno}: score is not finite")
        scores.append(score)
    if not scores:
        raise FieldError("score table has no rows")
    return scores


# ---------------------------------------------------------------------------
# feature-map interchange files

FEATURE_MAP_MAGIC = b"BFFM"
FEATURE_MAP_VERSION = 1
MANIFEST_FORMAT = "blindfold-feature-maps"
MANIFEST_NAME = "manifest.json"


def write_feature_map(path: str | Path, layer_index: int, data: np.ndarray) -> None:
    """Write one layer's float32 feature maps (batch leading) to a file."""
    data = np.ascontiguousarray(data, dtype="<f4")
    header = struct.pack(
        "<4sBIB", FEATURE_MAP_MAGIC, FEATURE_MAP_VERSION, layer_index, data.ndim
    )
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    Path(path).write_bytes(header + data.tobytes())


def read_feature_map(path: str | Path) -> tuple[int, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != FEATURE_MAP_MAGIC:
        raise FieldError(f"{path}: not a feature-map file")
    _, version, layer_index, rank = struct.unpack_from("<4sBIB", raw)
    if version != FEATURE_MAP_VERSION:
        raise FieldError(f"{path}: unsupported feature-map version {version}")
    shape = struct.unpack_from(f"<{rank}I", raw, 10)
    offset = 10 + 4 * rank
    expected = 4 * int(np.prod(shape, dtype=np.int64)) if rank else 4
    if len(raw) != offset + expected:
        raise FieldError(f"{path}: payload length mismatch")
    data = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(shape)
    return layer_index, data.astype(np.float32)


def _forward_captures(
    model: Model, x: QuantizedTensor, wanted: set[int]
) -> dict[int, np.ndarray]:
    """Clear forward pass collecting dequantized outputs of selected layers."""
    graph = model.graph
    captures: dict[int, np.ndarray] = {}
    for layer in graph.layers:
        if layer.kind is LayerKind.CONV:
            raw = conv2d(x, model.kernel(layer.index), layer.stride, layer.padding)
            x = linear_postprocess(raw, model.bias(layer.index), graph.scale, layer.relu)
            out = None
        elif layer.kind is LayerKind.DENSE:
            raw = dense(x, model.kernel(layer.index))
            x = linear_postprocess(raw, model.bias(layer.index), graph.scale, layer.relu)
            out = None
        elif layer.kind is LayerKind.MAXPOOL:
            x = maxpool2d(x, layer.window, layer.stride)
            out = None
        else:
            out = softmax(dequantize(x))
        if layer.index in wanted:
            value = out if out is not None else dequantize(x)
            captures[layer.index] = np.asarray(value, dtype=np.float32)
        if len(captures) == len(wanted):
            break
    return captures


def export_feature_maps(
    model: Model,
    images: np.ndarray,
    out_dir: str | Path,
    layers: list[int] | None = None,
    image_names: list[str] | None = None,
) -> dict:
    """Run the model in the clear and write per-layer feature-map files.

    This is the reconstruction oracle's training/evaluation input: what an
    untrusted party would observe at each candidate boundary. Returns the
    manifest, which is also written as JSON next to the map files.
    """
    graph = model.graph
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == len(graph.input_shape):
        images = images[None, ...]
    if images.shape[1:] != graph.input_shape:
        raise FieldError(
            f"image batch shape {images.shape} does not end in {graph.input_shape}"
        )
    indices = sorted(layers) if layers else [l.index for l in graph.layers]
    for index in indices:
        graph.layer(index)  # raises on out-of-range
    if image_names is not None and len(image_names) != images.shape[0]:
        raise FieldError("image_names length must match the batch")

    x = quantize(images, graph.scale, graph.modulus)
    captures = _forward_captures(model, x, set(indices))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layer_rows = []
    for index in indices:
        layer = graph.layer(index)
        filename = f"layer_{index:02d}.bffm"
        write_feature_map(out / filename, index, captures[index])
        layer_rows.append(
            {
                "index": index,
                "name": layer.name,
                "kind": layer.kind.value,
                "shape": list(captures[index].shape),
                "file": filename,
            }
        )
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": FEATURE_MAP_VERSION,
        "model": graph.name,
        "scale": graph.scale,
        "modulus": graph.modulus,
        "batch": int(images.shape[0]),
        "images": list(image_names) if image_names is not None else None,
        "layers": layer_rows,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest

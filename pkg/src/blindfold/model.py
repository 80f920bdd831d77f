"""Model graphs, partition plans, and the text config format.

A graph is a 1-indexed sequence of layers (conv / maxpool / dense / softmax,
ReLU fused into the preceding linear layer) ending in exactly one softmax.
Layer indices are what partition points refer to: a plan with partition p
keeps layers 1..p under enclave control and hands p+1..L to the untrusted
worker.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fieldmath import (
    DEFAULT_MODULUS,
    DEFAULT_SCALE,
    FieldError,
    field_capacity_fan_in,
    validate_modulus,
)
from .tensors import QuantizedTensor, quantize
from .weights import read_weights, write_weights

CONFIG_FORMAT = "blindfold-model"
CONFIG_VERSION = 1

# Feature maps travel and are accounted as 4-byte words regardless of the
# at-rest parameter width.
FEATURE_ELEM_BYTES = 4

# Cost accounting for non-MAC work, in elementary-op units per element.
SOFTMAX_OPS_PER_ELEM = 8


class ModelConfigError(ValueError):
    """Raised for malformed model configs or mismatched weights."""


class LayerKind(str, enum.Enum):
    CONV = "conv"
    MAXPOOL = "maxpool"
    DENSE = "dense"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class LayerSpec:
    """One indexed layer plus its derived shape/cost facts."""

    index: int
    kind: LayerKind
    name: str
    # conv / dense parameters (unused fields stay at their defaults)
    out_channels: int = 0
    kernel: tuple[int, int] = (0, 0)
    stride: int = 1
    padding: int = 0
    relu: bool = False
    bias: bool = False
    window: int = 0
    # derived during graph construction (per image, no batch dim)
    input_shape: tuple[int, ...] = ()
    output_shape: tuple[int, ...] = ()

    @property
    def parameterized(self) -> bool:
        return self.kind in (LayerKind.CONV, LayerKind.DENSE)

    @property
    def fan_in(self) -> int:
        if self.kind is LayerKind.CONV:
            return self.kernel[0] * self.kernel[1] * self.input_shape[-1]
        if self.kind is LayerKind.DENSE:
            return int(np.prod(self.input_shape, dtype=np.int64))
        return 0

    @property
    def param_count(self) -> int:
        """Kernel elements only; bias is tracked separately and excluded."""
        if self.kind is LayerKind.CONV:
            return self.kernel[0] * self.kernel[1] * self.input_shape[-1] * self.out_channels
        if self.kind is LayerKind.DENSE:
            return self.fan_in * self.out_channels
        return 0

    @property
    def output_elems(self) -> int:
        return int(np.prod(self.output_shape, dtype=np.int64))

    @property
    def input_elems(self) -> int:
        return int(np.prod(self.input_shape, dtype=np.int64))

    @property
    def output_bytes(self) -> int:
        return FEATURE_ELEM_BYTES * self.output_elems

    @property
    def input_bytes(self) -> int:
        return FEATURE_ELEM_BYTES * self.input_elems

    @property
    def macs(self) -> int:
        """Linear multiply-accumulates per image (0 for non-linear layers)."""
        if self.parameterized:
            return self.output_elems * self.fan_in
        return 0

    @property
    def post_ops(self) -> int:
        """Elementwise work beyond the linear map, per image."""
        if self.kind is LayerKind.MAXPOOL:
            return self.output_elems * self.window * self.window
        if self.kind is LayerKind.SOFTMAX:
            return self.output_elems * SOFTMAX_OPS_PER_ELEM
        ops = self.output_elems if self.relu else 0
        if self.bias:
            ops += self.output_elems
        return ops

    @property
    def kernel_name(self) -> str:
        return f"{self.name}/kernel"

    @property
    def bias_name(self) -> str:
        return f"{self.name}/bias"


@dataclass(frozen=True)
class ModelGraph:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    scale: int = DEFAULT_SCALE
    modulus: int = DEFAULT_MODULUS
    param_width: int = FEATURE_ELEM_BYTES  # at-rest bytes per parameter

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def parameterized_count(self) -> int:
        return sum(1 for l in self.layers if l.parameterized)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def max_fan_in(self) -> int:
        return max((l.fan_in for l in self.layers), default=0)

    def layer(self, index: int) -> LayerSpec:
        if not 1 <= index <= self.layer_count:
            raise ModelConfigError(f"layer index {index} outside 1..{self.layer_count}")
        return self.layers[index - 1]

    def capacity_warnings(self) -> list[str]:
        """Layers whose fan-in can wrap for unit-bounded honest values."""
        cap = field_capacity_fan_in(self.modulus, self.scale)
        return [
            f"layer {l.index} ({l.name}): fan-in {l.fan_in} exceeds the "
            f"no-wraparound capacity {cap} at scale {self.scale}"
            for l in self.layers
            if l.parameterized and l.fan_in > cap
        ]


class ExecutionMode(str, enum.Enum):
    """The five ways a plan maps layers onto enclave and worker."""

    BASELINE2 = "baseline2"
    SPLIT = "split"
    SLALOM_PRIVACY = "slalom"
    ORIGAMI = "origami"
    UNTRUSTED_ONLY = "untrusted"


_MODE_ALIASES = {
    "baseline2": ExecutionMode.BASELINE2,
    "baseline-2": ExecutionMode.BASELINE2,
    "split": ExecutionMode.SPLIT,
    "slalom": ExecutionMode.SLALOM_PRIVACY,
    "slalom-privacy": ExecutionMode.SLALOM_PRIVACY,
    "slalomprivacy": ExecutionMode.SLALOM_PRIVACY,
    "origami": ExecutionMode.ORIGAMI,
    "untrusted": ExecutionMode.UNTRUSTED_ONLY,
    "untrusted-only": ExecutionMode.UNTRUSTED_ONLY,
    "untrustedonly": ExecutionMode.UNTRUSTED_ONLY,
}


def parse_mode_spec(text: str) -> tuple[ExecutionMode, int | None]:
    """Parse "origami/6" or "split" style mode strings."""
    name, sep, suffix = text.strip().lower().partition("/")
    mode = _MODE_ALIASES.get(name)
    if mode is None:
        raise ModelConfigError(
            f"unknown mode {text!r}; expected one of {sorted(set(_MODE_ALIASES))}"
        )
    partition = None
    if sep:
        try:
            partition = int(suffix)
        except ValueError:
            raise ModelConfigError(f"bad partition suffix in mode {text!r}") from None
    return mode, partition


@dataclass(frozen=True)
class PartitionPlan:
    """Execution mode plus the tier-1/tier-2 boundary.

    Layers 1..partition are tier 1 (enclave-controlled); the rest run
    untrusted. Mode constraints: Baseline2 and Slalom/Privacy control every
    layer (p = L); UntrustedOnly controls none (p = 0).
    """

    mode: ExecutionMode
    partition: int

    @classmethod
    def for_mode(
        cls, mode: ExecutionMode, layer_count: int, partition: int | None = None
    ) -> "PartitionPlan":
        pinned = {
            ExecutionMode.BASELINE2: layer_count,
            ExecutionMode.SLALOM_PRIVACY: layer_count,
            ExecutionMode.UNTRUSTED_ONLY: 0,
        }
        if mode in pinned:
            p = pinned[mode]
            if partition is not None and partition != p:
                raise ModelConfigError(
                    f"mode {mode.value} pins the partition to {p}, got {partition}"
                )
        else:
            if partition is None:
                raise ModelConfigError(f"mode {mode.value} requires an explicit partition")
            p = partition
        if not 0 <= p <= layer_count:
            raise ModelConfigError(
                f"partition {p} outside 0..{layer_count} for mode {mode.value}"
            )
        return cls(mode, p)

    def validate(self, graph: ModelGraph) -> None:
        PartitionPlan.for_mode(self.mode, graph.layer_count, self.partition)

    def in_tier1(self, layer_index: int) -> bool:
        return layer_index <= self.partition

    @property
    def blinds_tier1(self) -> bool:
        return self.mode in (ExecutionMode.SLALOM_PRIVACY, ExecutionMode.ORIGAMI)

    def label(self) -> str:
        if self.mode in (ExecutionMode.SPLIT, ExecutionMode.ORIGAMI):
            return f"{self.mode.value}/{self.partition}"
        return self.mode.value


# ---------------------------------------------------------------------------
# config text format


def parse_model_config(text: str) -> ModelGraph:
    """Parse the line-based model config format (see serialize_model_config)."""
    name = None
    input_shape: tuple[int, int, int] | None = None
    scale = DEFAULT_SCALE
    modulus = DEFAULT_MODULUS
    param_width = FEATURE_ELEM_BYTES
    version_seen = False
    rows: list[tuple[str, dict[str, str], int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        directive, args = tokens[0].lower(), tokens[1:]

        def fail(msg: str) -> ModelConfigError:
            return ModelConfigError(f"line {lineno}: {msg}")

        if directive == "format":
            if len(args) != 1:
                raise fail("format takes one token, e.g. blindfold-model/1")
            fmt, _, ver = args[0].partition("/")
            if fmt != CONFIG_FORMAT or ver != str(CONFIG_VERSION):
                raise fail(f"unsupported format {args[0]!r}")
            version_seen = True
        elif directive == "name":
            name = " ".join(args)
        elif directive == "input":
            if len(args) != 3:
                raise fail("input takes: height width channels")
            h, w, c = (_parse_int(a, lineno) for a in args)
            input_shape = (h, w, c)
        elif directive == "scale":
            scale = _parse_int(_one(args, directive, lineno), lineno)
        elif directive == "modulus":
            modulus = _parse_int(_one(args, directive, lineno), lineno)
        elif directive == "param-width":
            param_width = _parse_int(_one(args, directive, lineno), lineno)
            if param_width not in (1, 4):
                raise fail("param-width must be 1 or 4")
        elif directive in ("conv", "maxpool", "dense", "softmax"):
            kv = {}
            for tok in args:
                key, sep, value = tok.partition("=")
                if not sep:
                    raise fail(f"expected key=value, got {tok!r}")
                if key in kv:
                    raise fail(f"duplicate key {key!r}")
                kv[key] = value
            rows.append((directive, kv, lineno))
        else:
            raise fail(f"unknown directive {directive!r}")

    if not version_seen:
        raise ModelConfigError("missing 'format blindfold-model/1' header")
    if input_shape is None:
        raise ModelConfigError("missing 'input' directive")
    if not rows:
        raise ModelConfigError("config declares no layers")
    layers = _build_layers(rows, input_shape)
    graph = ModelGraph(
        name=name or "model",
        input_shape=input_shape,
        layers=layers,
        scale=scale,
        modulus=modulus,
        param_width=param_width,
    )
    _validate_graph(graph)
    return graph


def _one(args: list[str], directive: str, lineno: int) -> str:
    if len(args) != 1:
        raise ModelConfigError(f"line {lineno}: {directive} takes exactly one value")
    return args[0]


def _parse_int(token: str, lineno: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ModelConfigError(f"line {lineno}: expected integer, got {token!r}") from None
    if value <= 0:
        raise ModelConfigError(f"line {lineno}: expected positive integer, got {value}")
    return value


def _parse_nonneg(token: str, lineno: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ModelConfigError(f"line {lineno}: expected integer, got {token!r}") from None
    if value < 0:
        raise ModelConfigError(f"line {lineno}: expected non-negative integer, got {value}")
    return value


def _parse_bool(value: str, lineno: int) -> bool:
    if value in ("yes", "true", "1"):
        return True
    if value in ("no", "false", "0"):
        return False
    raise ModelConfigError(f"line {lineno}: expected yes/no, got {value!r}")


def _build_layers(
    rows: list[tuple[str, dict[str, str], int]],
    input_shape: tuple[int, int, int],
) -> tuple[LayerSpec, ...]:
    layers: list[LayerSpec] = []
    shape: tuple[int, ...] = input_shape
    for index, (kind_s, kv, lineno) in enumerate(rows, start=1):
        kind = LayerKind(kind_s)
        name = kv.pop("name", f"{kind_s}{index}")

        def want(key: str, default: str | None = None) -> str:
            if key in kv:
                return kv.pop(key)
            if default is None:
                raise ModelConfigError(f"line {lineno}: {kind_s} requires {key}=")
            return default

        if kind is LayerKind.CONV:
            if len(shape) != 3:
                raise ModelConfigError(
                    f"line {lineno}: conv needs a spatial input, have shape {shape}"
                )
            k = _parse_int(want("kernel"), lineno)
            spec = LayerSpec(
                index=index,
                kind=kind,
                name=name,
                out_channels=_parse_int(want("out"), lineno),
                kernel=(k, k),
                stride=_parse_int(want("stride", "1"), lineno),
                padding=_parse_nonneg(want("pad", "0"), lineno),
                relu=_parse_bool(want("relu", "no"), lineno),
                bias=_parse_bool(want("bias", "no"), lineno),
                input_shape=shape,
            )
            h, w, _ = shape
            ho = (h + 2 * spec.padding - k) // spec.stride + 1
            wo = (w + 2 * spec.padding - k) // spec.stride + 1
            if spec.padding < 0 or ho < 1 or wo < 1:
                raise ModelConfigError(f"line {lineno}: conv output collapses to {ho}x{wo}")
            shape = (ho, wo, spec.out_channels)
        elif kind is LayerKind.MAXPOOL:
            if len(shape) != 3:
                raise ModelConfigError(
                    f"line {lineno}: maxpool needs a spatial input, have shape {shape}"
                )
            window = _parse_int(want("window", "2"), lineno)
            stride = _parse_int(want("stride", str(window)), lineno)
            h, w, c = shape
            if h < window or w < window or (h - window) % stride or (w - window) % stride:
                raise ModelConfigError(
                    f"line {lineno}: pool {window}/{stride} does not tile {h}x{w}"
                )
            spec = LayerSpec(
                index=index,
                kind=kind,
                name=name,
                window=window,
                stride=stride,
                input_shape=shape,
            )
            shape = ((h - window) // stride + 1, (w - window) // stride + 1, c)
        elif kind is LayerKind.DENSE:
            spec = LayerSpec(
                index=index,
                kind=kind,
                name=name,
                out_channels=_parse_int(want("out"), lineno),
                relu=_parse_bool(want("relu", "no"), lineno),
                bias=_parse_bool(want("bias", "no"), lineno),
                input_shape=shape,
            )
            shape = (spec.out_channels,)
        else:  # softmax
            if len(shape) != 1:
                raise ModelConfigError(
                    f"line {lineno}: softmax needs a flat input, have shape {shape}"
                )
            spec = LayerSpec(index=index, kind=kind, name=name, input_shape=shape)
        if kv:
            raise ModelConfigError(f"line {lineno}: unknown keys {sorted(kv)}")
        layers.append(replace(spec, output_shape=shape))
    return tuple(layers)


def _validate_graph(graph: ModelGraph) -> None:
    try:
        validate_modulus(graph.modulus)
    except FieldError as exc:
        raise ModelConfigError(str(exc)) from exc
    if graph.scale < 1:
        raise ModelConfigError(f"scale must be >= 1, got {graph.scale}")
    names = [l.name for l in graph.layers]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ModelConfigError(
            f"duplicate layer names {dupes}; weight tensor names derive from "
            "layer names, so every layer needs a unique one"
        )
    softmaxes = [l.index for l in graph.layers if l.kind is LayerKind.SOFTMAX]
    if len(softmaxes) != 1 or softmaxes[0] != graph.layer_count:
        raise ModelConfigError(
            "model must contain exactly one softmax as its final layer"
        )
    for spec, expected in zip(graph.layers, range(1, graph.layer_count + 1)):
        if spec.index != expected:
            raise ModelConfigError("layer indices must be contiguous from 1")


def serialize_model_config(graph: ModelGraph) -> str:
    """Emit the canonical config text; parse_model_config round-trips it."""
    lines = [
        f"format {CONFIG_FORMAT}/{CONFIG_VERSION}",
        f"name {graph.name}",
        f"input {graph.input_shape[0]} {graph.input_shape[1]} {graph.input_shape[2]}",
        f"scale {graph.scale}",
        f"modulus {graph.modulus}",
        f"param-width {graph.param_width}",
    ]
    for l in graph.layers:
        if l.kind is LayerKind.CONV:
            row = (
                f"conv name={l.name} out={l.out_channels} kernel={l.kernel[0]} "
                f"stride={l.stride} pad={l.padding} relu={'yes' if l.relu else 'no'}"
            )
            if l.bias:
                row += " bias=yes"
        elif l.kind is LayerKind.MAXPOOL:
            row = f"maxpool name={l.name} window={l.window} stride={l.stride}"
        elif l.kind is LayerKind.DENSE:
            row = f"dense name={l.name} out={l.out_channels} relu={'yes' if l.relu else 'no'}"
            if l.bias:
                row += " bias=yes"
        else:
            row = f"softmax name={l.name}"
        lines.append(row)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# built-in configs


def _vgg_config(
    name: str,
    conv_blocks: list[tuple[int, int]],
    classes: int,
    scale: int,
    modulus: int,
) -> str:
    lines = [
        f"format {CONFIG_FORMAT}/{CONFIG_VERSION}",
        f"name {name}",
        "input 224 224 3",
        f"scale {scale}",
        f"modulus {modulus}",
    ]
    for block, (convs, channels) in enumerate(conv_blocks, start=1):
        for i in range(1, convs + 1):
            lines.append(
                f"conv name=conv{block}_{i} out={channels} kernel=3 stride=1 pad=1 relu=yes"
            )
        lines.append(f"maxpool name=pool{block} window=2 stride=2")
    lines.append("dense name=fc6 out=4096 relu=yes")
    lines.append("dense name=fc7 out=4096 relu=yes")
    lines.append(f"dense name=fc8 out={classes}")
    lines.append("softmax name=prob")
    return "\n".join(lines) + "\n"


def vgg16_config(
    classes: int = 1000, scale: int = DEFAULT_SCALE, modulus: int = DEFAULT_MODULUS
) -> str:
    blocks = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]
    return _vgg_config("vgg16", blocks, classes, scale, modulus)


def vgg19_config(
    classes: int = 1000, scale: int = DEFAULT_SCALE, modulus: int = DEFAULT_MODULUS
) -> str:
    blocks = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)]
    return _vgg_config("vgg19", blocks, classes, scale, modulus)


def toy_config(input_hw: int = 16, classes: int = 10, scale: int = 64) -> str:
    """Five-layer toy model: conv, pool, conv, dense, softmax."""
    return "\n".join(
        [
            f"format {CONFIG_FORMAT}/{CONFIG_VERSION}",
            "name toy5",
            f"input {input_hw} {input_hw} 3",
            f"scale {scale}",
            f"modulus {DEFAULT_MODULUS}",
            "conv name=c1 out=8 kernel=3 stride=1 pad=1 relu=yes",
            "maxpool name=p1 window=2 stride=2",
            "conv name=c2 out=8 kernel=3 stride=1 pad=1 relu=yes bias=yes",
            f"dense name=fc out={classes} bias=yes",
            "softmax name=prob",
        ]
    ) + "\n"


def toy3_config(input_hw: int = 32, classes: int = 10, scale: int = 64) -> str:
    """Three-layer CNN (plus softmax) used by the reconstruction adversary."""
    return "\n".join(
        [
            f"format {CONFIG_FORMAT}/{CONFIG_VERSION}",
            "name toycnn3",
            f"input {input_hw} {input_hw} 3",
            f"scale {scale}",
            f"modulus {DEFAULT_MODULUS}",
            "conv name=c1 out=8 kernel=3 stride=1 pad=1 relu=yes",
            "maxpool name=p1 window=2 stride=2",
            f"dense name=fc out={classes} bias=yes",
            "softmax name=prob",
        ]
    ) + "\n"


BUILTIN_CONFIGS = {
    "vgg16": vgg16_config,
    "vgg19": vgg19_config,
    "toy": toy_config,
    "toy3": toy3_config,
}


# ---------------------------------------------------------------------------
# analytic byte accounting


@dataclass(frozen=True)
class FeatureMapReport:
    """Per-layer output bytes (4 B/element) plus the analytic summaries."""

    per_layer: dict[int, int]
    largest_bytes: int
    largest_index: int
    conv_output_sum: int
    conv_dense_output_sum: int


def feature_map_bytes(graph: ModelGraph) -> FeatureMapReport:
    per_layer = {l.index: l.output_bytes for l in graph.layers}
    conv = [l for l in graph.layers if l.kind is LayerKind.CONV]
    linear = [l for l in graph.layers if l.parameterized]
    largest = max(graph.layers, key=lambda l: l.output_bytes)
    return FeatureMapReport(
        per_layer=per_layer,
        largest_bytes=largest.output_bytes,
        largest_index=largest.index,
        conv_output_sum=sum(l.output_bytes for l in conv),
        conv_dense_output_sum=sum(l.output_bytes for l in linear),
    )


@dataclass(frozen=True)
class ParamsReport:
    per_layer: dict[int, int]  # at-rest bytes, kernel elements only
    total: int
    parameterized_layers: int


def layer_params_bytes(graph: ModelGraph) -> ParamsReport:
    per_layer = {l.index: l.param_count * graph.param_width for l in graph.layers}
    return ParamsReport(
        per_layer=per_layer,
        total=sum(per_layer.values()),
        parameterized_layers=graph.parameterized_count,
    )


# ---------------------------------------------------------------------------
# weights binding


@dataclass(frozen=True)
class Model:
    """A graph plus its quantized parameters, ready to execute."""

    graph: ModelGraph
    kernels: dict[int, QuantizedTensor] = field(default_factory=dict)
    biases: dict[int, QuantizedTensor] = field(default_factory=dict)

    def kernel(self, index: int) -> QuantizedTensor:
        return self.kernels[index]

    def bias(self, index: int) -> QuantizedTensor | None:
        return self.biases.get(index)


def expected_weight_shapes(graph: ModelGraph) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for l in graph.layers:
        if l.kind is LayerKind.CONV:
            shapes[l.kernel_name] = (*l.kernel, l.input_shape[-1], l.out_channels)
        elif l.kind is LayerKind.DENSE:
            shapes[l.kernel_name] = (l.fan_in, l.out_channels)
        if l.parameterized and l.bias:
            shapes[l.bias_name] = (l.out_channels,)
    return shapes


def load_model(
    config_text: str,
    weights_blob: bytes | None = None,
    *,
    strict_capacity: bool = False,
) -> Model:
    """Parse a config and bind (quantize) its weights.

    With ``weights_blob=None`` the model is structural only (analytic ops
    work; execution does not). ``strict_capacity=True`` turns fan-in
    wraparound warnings into errors.
    """
    graph = parse_model_config(config_text)
    warnings = graph.capacity_warnings()
    if strict_capacity and warnings:
        raise ModelConfigError("field capacity exceeded:\n" + "\n".join(warnings))
    if weights_blob is None:
        return Model(graph=graph)

    named = read_weights(weights_blob)
    expected = expected_weight_shapes(graph)
    missing = sorted(set(expected) - set(named))
    extra = sorted(set(named) - set(expected))
    if missing or extra:
        raise ModelConfigError(
            f"weights do not match config: missing {missing or 'none'}, "
            f"unexpected {extra or 'none'}"
        )
    kernels: dict[int, QuantizedTensor] = {}
    biases: dict[int, QuantizedTensor] = {}
    for l in graph.layers:
        if not l.parameterized:
            continue
        arr = named[l.kernel_name]
        if tuple(arr.shape) != expected[l.kernel_name]:
            raise ModelConfigError(
                f"{l.kernel_name}: shape {tuple(arr.shape)} != {expected[l.kernel_name]}"
            )
        kernels[l.index] = quantize(arr.astype(np.float64), graph.scale, graph.modulus)
        if l.bias:
            barr = named[l.bias_name]
            if tuple(barr.shape) != expected[l.bias_name]:
                raise ModelConfigError(
                    f"{l.bias_name}: shape {tuple(barr.shape)} != {expected[l.bias_name]}"
                )
            # Bias joins the raw product, so it carries scale**2.
            biases[l.index] = quantize(
                barr.astype(np.float64), graph.scale * graph.scale, graph.modulus
            )
    return Model(graph=graph, kernels=kernels, biases=biases)


def synthesize_weights(graph: ModelGraph, seed: int, spread: float = 2.0) -> bytes:
    """Deterministic random weights that quantize exactly at the graph scale.

    Kernel entries sit on the 1/scale grid with magnitude about
    spread/sqrt(fan_in) — variance-preserving, so activations keep a stable
    size layer over layer and even huge-fan-in dense layers get nonzero
    quantized weights. Biases sit on the 1/scale**2 grid. Every value
    survives quantization exactly, whatever the scale.
    """
    rng = np.random.default_rng(seed)
    scale = graph.scale
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected_weight_shapes(graph).items():
        if name.endswith("/bias"):
            grid = rng.integers(-scale, scale + 1, size=shape)
            tensors[name] = (grid / (scale * scale)).astype(np.float32)
            continue
        fan_in = int(np.prod(shape[:-1], dtype=np.int64))
        top = max(1, round(spread * scale / math.sqrt(max(1, fan_in))))
        grid = rng.integers(-top, top + 1, size=shape)
        tensors[name] = (grid / scale).astype(np.float32)
    return write_weights(tensors)

"""Blindfold: a simulator for partitioned private CNN inference.

A model splits at a boundary layer: everything up to it stays under enclave
control (with linear layers optionally offloaded under additive blinding),
everything after it runs on untrusted hardware in the clear. The simulator
executes real tensor math over a prime field — all execution modes produce
bit-identical probabilities — while accounting simulated time, memory, and
boundary traffic.
"""

from .blinding import (
    BlindingError,
    BlindingStream,
    UnblindingRecord,
    UnblindingSet,
    blind,
    blinded_bytes_accounting,
    blinded_linear_layers,
    BlindedBytesReport,
    precompute_unblinding,
    read_unblinding_blob,
    unblind,
    write_unblinding_blob,
)
from .enclave import (
    CostModel,
    EnclaveConfig,
    EnclaveError,
    EnclaveState,
    EpcOverflowError,
    MIB,
    PeakMemoryReport,
    copy_across_boundary,
    create_enclave,
    creation_cost_ms,
    default_cost_model,
    default_enclave_config,
    load_params,
    peak_memory,
    power_event,
    recover,
)
from .executor import (
    EncryptedInput,
    InferenceResult,
    InProcessChannel,
    InsecureContext,
    SocketChannel,
    UntrustedWorker,
    WorkerError,
    WorkerLogEntry,
    WorkerServer,
    decrypt_input,
    encrypt_input,
    run_inference,
    simulate_trace,
)
from .fieldmath import (
    DEFAULT_MODULUS,
    DEFAULT_SCALE,
    FieldError,
    field_capacity_fan_in,
    field_matmul,
    validate_modulus,
)
from .kernels import (
    add_bias,
    conv2d,
    dense,
    linear_postprocess,
    maxpool2d,
    relu,
    rescale,
    softmax,
)
from .model import (
    BUILTIN_CONFIGS,
    ExecutionMode,
    FeatureMapReport,
    LayerKind,
    LayerSpec,
    Model,
    ModelConfigError,
    ModelGraph,
    ParamsReport,
    PartitionPlan,
    expected_weight_shapes,
    feature_map_bytes,
    layer_params_bytes,
    load_model,
    parse_mode_spec,
    parse_model_config,
    serialize_model_config,
    synthesize_weights,
    toy3_config,
    toy_config,
    vgg16_config,
    vgg19_config,
)
from .partition import (
    DEFAULT_THRESHOLD,
    PartitionDecision,
    PartitionStep,
    export_feature_maps,
    find_partition,
    format_oracle_scores,
    parse_oracle_scores,
    read_feature_map,
    write_feature_map,
)
from .ssim import SsimReport, gaussian_window, mean_ssim, ssim
from .tensors import QuantizationError, QuantizedTensor, dequantize, quantize
from .trace import (
    InferenceTrace,
    LayerTrace,
    RuntimeBreakdown,
    TraceFormatError,
    runtime_breakdown,
)
from .weights import WeightsFormatError, read_weights, write_weights

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

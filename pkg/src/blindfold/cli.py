"""Command-line front end.

Subcommands: ``validate`` (check a model config), ``run`` (one inference
under a chosen mode), ``find-partition`` (walk oracle scores), ``export-maps``
(write feature-map files for the reconstruction oracle), ``ssim`` (compare
images), ``report`` (break down a saved trace).

A JSON options file (``--config``) overrides command-line flags: flags give
the interactive default, the file pins down a reproducible configuration.

Exit codes: 0 success; 1 runtime failure; 2 usage error; 3 the partition
walk confirmed no boundary.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .enclave import MIB, peak_memory
from .executor import (
    InProcessChannel,
    SocketChannel,
    UntrustedWorker,
    WorkerServer,
    run_inference,
)
from .images import load_image
from .model import (
    BUILTIN_CONFIGS,
    PartitionPlan,
    feature_map_bytes,
    layer_params_bytes,
    load_model,
    parse_mode_spec,
    parse_model_config,
    synthesize_weights,
)
from .partition import (
    DEFAULT_THRESHOLD,
    export_feature_maps,
    find_partition,
    parse_oracle_scores,
)
from .ssim import mean_ssim, ssim
from .trace import InferenceTrace, runtime_breakdown
from .weights import read_weights

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NO_PARTITION = 3


def _mib(nbytes: int | float) -> str:
    return f"{nbytes / MIB:.2f} MiB"


def _load_graph_text(spec: str) -> str:
    if spec in BUILTIN_CONFIGS:
        return BUILTIN_CONFIGS[spec]()
    return Path(spec).read_text()


def _build_model(args) -> "Model":
    text = _load_graph_text(args.model)
    graph = parse_model_config(text)
    if getattr(args, "weights", None):
        blob = Path(args.weights).read_bytes()
    else:
        blob = synthesize_weights(graph, seed=args.seed)
    return load_model(text, blob)


def _load_inputs(args, graph) -> np.ndarray:
    if getattr(args, "input", None):
        path = Path(args.input)
        if path.suffix == ".npy":
            images = np.load(path, allow_pickle=False)
        else:
            images = load_image(str(path))
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == len(graph.input_shape):
            images = images[None, ...]
        return images
    rng = np.random.default_rng(args.seed)
    return rng.uniform(0.0, 1.0, size=(args.batch, *graph.input_shape))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_validate(args) -> int:
    text = _load_graph_text(args.model)
    graph = parse_model_config(text)
    features = feature_map_bytes(graph)
    params = layer_params_bytes(graph)
    print(f"model {graph.name}: {graph.layer_count} layers "
          f"({graph.parameterized_count} parameterized)")
    print(f"input {'x'.join(str(d) for d in graph.input_shape)}  "
          f"scale {graph.scale}  modulus {graph.modulus}")
    print(f"multiply-accumulates {graph.total_macs}")
    print(f"parameters {_mib(params.total)} ({params.total} bytes)")
    print(f"largest feature map {_mib(features.largest_bytes)} "
          f"at layer {features.largest_index}")
    print(f"feature maps, conv layers {_mib(features.conv_output_sum)}; "
          f"with dense {_mib(features.conv_dense_output_sum)}")
    warnings = graph.capacity_warnings()
    for warning in warnings:
        print(f"warning: {warning}")
    if warnings and args.strict:
        return EXIT_ERROR
    return EXIT_OK


def _cmd_run(args) -> int:
    model = _build_model(args)
    graph = model.graph
    mode, partition = parse_mode_spec(args.mode)
    plan = PartitionPlan.for_mode(mode, graph.layer_count, partition)
    images = _load_inputs(args, graph)

    server = None
    channel = None
    try:
        if args.socket:
            server = WorkerServer(UntrustedWorker(model)).start()
            channel = SocketChannel(server.address)
        elif plan.blinds_tier1 or plan.partition < graph.layer_count:
            channel = InProcessChannel(UntrustedWorker(model))
        result = run_inference(
            model,
            plan,
            images,
            request_id=args.request_id,
            blinding_seed=args.seed,
            channel=channel,
        )
    finally:
        if channel is not None:
            channel.close()
        if server is not None:
            server.stop()

    trace = result.trace
    probs = result.probabilities
    top = int(np.argmax(probs[0]))
    print(f"mode {plan.label()}  model {graph.name}  batch {trace.batch}")
    print(f"inference {trace.total_ms:.3f} ms  "
          f"(creation {trace.creation_ms:.3f} ms and offline {trace.offline_ms:.3f} ms excluded)")
    print(f"peak memory {_mib(trace.peak_memory_bytes)}  recovery {trace.recovery_ms:.3f} ms")
    print(f"blinded {_mib(trace.total_blinded_bytes)}  "
          f"unblinded {_mib(trace.total_unblinded_bytes)}  "
          f"cycle {_mib(trace.blind_cycle_bytes)}")
    print(f"top-1 class {top} (p={probs[0, top]:.6f})")
    if args.trace:
        Path(args.trace).write_text(trace.to_text())
        print(f"trace written to {args.trace}")
    if args.report:
        Path(args.report).write_text(_layer_csv(trace))
        print(f"report written to {args.report}")
    return EXIT_OK


def _layer_csv(trace: InferenceTrace) -> str:
    lines = [
        "layer_index,kind,name,location,blinded,macs,"
        "compute_ms,copy_ms,blind_ms,param_load_ms,total_ms"
    ]
    for r in trace.records:
        lines.append(
            f"{r.layer_index},{r.kind},{r.name},{r.location},{int(r.blinded)},"
            f"{r.macs},{r.compute_ms:.6f},{r.copy_ms:.6f},{r.blind_ms:.6f},"
            f"{r.param_load_ms:.6f},{r.total_ms:.6f}"
        )
    return "\n".join(lines) + "\n"


def _cmd_report(args) -> int:
    trace = InferenceTrace.from_text(Path(args.trace).read_text())
    breakdown = runtime_breakdown(trace)
    print(f"mode {trace.mode}/{trace.partition}  model {trace.model_name}  "
          f"batch {trace.batch}")
    print(f"total {breakdown.total_ms:.3f} ms")
    for category in ("compute", "copy", "blind", "param_load"):
        ms = getattr(breakdown, f"{category}_ms")
        share = breakdown.category_shares_pct[category]
        print(f"  {category:<10} {ms:12.3f} ms  {share:5.1f}%")
    print(f"dense layers {breakdown.dense_ms:.3f} ms "
          f"({breakdown.dense_share_pct:.1f}% of total)")
    if args.csv:
        Path(args.csv).write_text(_layer_csv(trace))
        print(f"per-layer table written to {args.csv}")
    return EXIT_OK


def _cmd_find_partition(args) -> int:
    scores = parse_oracle_scores(Path(args.scores).read_text())
    decision = find_partition(scores, threshold=args.threshold)
    for step in decision.steps:
        marker = "below" if step.below else "above"
        print(f"layer {step.layer_index:>2}  score {step.score:.4f}  "
              f"{marker}  {step.note}")
    if not decision.found:
        print(f"no boundary confirmed at threshold {decision.threshold}")
        return EXIT_NO_PARTITION
    print(f"partition {decision.partition} (threshold {decision.threshold})")
    print(f"suggested mode origami/{decision.partition}")
    return EXIT_OK


def _cmd_export_maps(args) -> int:
    model = _build_model(args)
    graph = model.graph
    names = None
    if args.images:
        stacked = []
        for path in args.images:
            image = load_image(path)
            if image.shape != graph.input_shape:
                raise ValueError(
                    f"{path}: image shape {image.shape} != model input "
                    f"{graph.input_shape}"
                )
            stacked.append(image)
        images = np.stack(stacked)
        names = [Path(p).name for p in args.images]
    else:
        rng = np.random.default_rng(args.seed)
        images = rng.uniform(0.0, 1.0, size=(args.count, *graph.input_shape))
    layers = None
    if args.layers:
        layers = [int(tok) for tok in args.layers.split(",") if tok.strip()]
    manifest = export_feature_maps(model, images, args.out, layers=layers, image_names=names)
    print(f"wrote {len(manifest['layers'])} feature-map files for "
          f"{manifest['batch']} images to {args.out}")
    return EXIT_OK


def _cmd_ssim(args) -> int:
    if args.pairs:
        rows = []
        for lineno, line in enumerate(Path(args.pairs).read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{args.pairs}:{lineno}: expected 'reference candidate'")
            rows.append(parts)
        scores = [
            ssim(load_image(ref), load_image(cand), data_range=1.0) for ref, cand in rows
        ]
        lines = ["reference,candidate,score"]
        for (ref, cand), score in zip(rows, scores):
            lines.append(f"{ref},{cand},{score:.6f}")
        body = "\n".join(lines) + "\n"
        if args.csv:
            Path(args.csv).write_text(body)
        else:
            sys.stdout.write(body)
        print(f"mean {float(np.mean(scores)):.6f}")
        return EXIT_OK
    if not (args.reference and args.candidate):
        raise ValueError("ssim needs two image paths, or --pairs FILE")
    score = ssim(load_image(args.reference), load_image(args.candidate), data_range=1.0)
    print(f"{score:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blindfold",
        description="Partitioned private CNN inference simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=0,
                       help="seed for weights, inputs, and blinding (default 0)")
        p.add_argument("--config", metavar="FILE", default=None,
                       help="JSON options file; its entries override flags")

    p = sub.add_parser("validate", help="parse a model config and summarize it")
    p.add_argument("--model", required=True, help="builtin name or config path")
    p.add_argument("--strict", action="store_true",
                   help="fail when capacity warnings fire")
    common(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="run one inference under a mode")
    p.add_argument("--model", required=True, help="builtin name or config path")
    p.add_argument("--mode", required=True,
                   help="baseline2 | split/P | slalom | origami/P | untrusted")
    p.add_argument("--weights", default=None, help="weights file (default: synthesized)")
    p.add_argument("--input", default=None, help=".npy batch or an image file")
    p.add_argument("--batch", type=int, default=1, help="random-input batch size")
    p.add_argument("--request-id", default="cli", help="request identifier")
    p.add_argument("--socket", action="store_true",
                   help="cross a loopback socket to the worker")
    p.add_argument("--trace", default=None, help="write the trace (JSON lines)")
    p.add_argument("--report", default=None, help="write the per-layer CSV")
    common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="break down a saved trace")
    p.add_argument("--trace", required=True, help="trace file from a run")
    p.add_argument("--csv", default=None, help="write the per-layer CSV here")
    common(p)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("find-partition", help="walk oracle scores to a boundary")
    p.add_argument("--scores", required=True, help="CSV of layer_index,score")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help=f"acceptance threshold in (0, 1), default {DEFAULT_THRESHOLD}")
    common(p)
    p.set_defaults(func=_cmd_find_partition)

    p = sub.add_parser("export-maps", help="write feature-map files for the oracle")
    p.add_argument("--model", required=True, help="builtin name or config path")
    p.add_argument("--weights", default=None, help="weights file (default: synthesized)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--images", nargs="*", default=None, help="input image files")
    p.add_argument("--count", type=int, default=4, help="random-image count")
    p.add_argument("--layers", default=None, help="comma-separated layer indices")
    common(p)
    p.set_defaults(func=_cmd_export_maps)

    p = sub.add_parser("ssim", help="structural similarity between images")
    p.add_argument("reference", nargs="?", default=None)
    p.add_argument("candidate", nargs="?", default=None)
    p.add_argument("--pairs", default=None,
                   help="file of 'reference candidate' lines")
    p.add_argument("--csv", default=None, help="write pair scores here")
    common(p)
    p.set_defaults(func=_cmd_ssim)

    return parser


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    if not getattr(args, "config", None):
        return
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config file {args.config}: {exc}")
    if not isinstance(overrides, dict):
        parser.error(f"config file {args.config} must hold a JSON object")
    known = vars(args)
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("func", "command", "config"):
            parser.error(f"config file {args.config}: unknown option {key!r}")
        setattr(args, dest, value)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config_file(args, parser)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

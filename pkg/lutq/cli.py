"""``lutq`` command line.

Subcommands::

    lutq train CONFIG.toml              train a network, write model + trace
    lutq quantize MODEL --k 4           post-training LUT-Q quantization
    lutq report ARCH --plan lutq:16     memory / computation footprint
    lutq infer MODEL INPUT --kernel grouped
    lutq evaluate MODEL DATASET

Exit codes: 0 ok, 2 configuration error, 3 corrupt artifact, 4 contract
violation, 1 any other toolkit error.  ``LUTQ_SEED`` overrides config seeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from sqlalchemy.exc import SQLAlchemyError

from lutq.core.storage.ledger import RunLedger
from lutq.core.storage.model_file import load_model, save_model
from lutq.core.tensor import make_rng
from lutq.data_models import (
    ActQuantConfig,
    ActQuantScheme,
    Activation,
    ConstraintKind,
    EpochRecord,
    QuantizerConfig,
    TrainJobConfig,
    WeightQuantPlan,
)
from lutq.errors import EXIT_OK, ArgumentError, ConfigError, LUTQError
from lutq.footprint.architecture import load_architecture
from lutq.footprint.report import build_report, render_table
from lutq.inference.kernels import OpCounter
from lutq.inference.runner import Kernel, run_network
from lutq.nn.data import Dataset, load_delimited, make_blobs
from lutq.nn.losses import softmax
from lutq.nn.network import Network, build_mlp, network_class
from lutq.nn.train import evaluate, train
from lutq.quantizers.dictionary import quantization_error
from lutq.quantizers.kmeans import lutq_quantize
from lutq.settings import get_settings

logger = logging.getLogger(__name__)

__all__ = [
    "LOG_FORMAT",
    "cmd_train",
    "cmd_quantize",
    "cmd_report",
    "cmd_infer",
    "cmd_evaluate",
    "build_parser",
    "main",
]

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _emit(payload: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _validation_to_config_error(exc: ValidationError, source: str) -> ConfigError:
    error = exc.errors()[0]
    field = ".".join(str(part) for part in error["loc"]) or None
    return ConfigError(f"{source}: {error['msg']}", field=field)


def load_job_config(path: str | Path) -> TrainJobConfig:
    """Read a flat TOML job file; unknown keys and bad values raise :class:`ConfigError`."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from exc
    try:
        job = TrainJobConfig.model_validate(raw)
        job.quantizer_config()
    except ValidationError as exc:
        raise _validation_to_config_error(exc, str(path)) from exc
    seed = get_settings().seed
    if seed is not None and seed != job.seed:
        logger.info("LUTQ_SEED=%d overrides config seed %d", seed, job.seed)
        job = job.model_copy(update={"seed": seed})
    return job


def load_dataset(spec: str, delimiter: str = ",", *, seed: int = 0, **blobs: Any) -> Dataset:
    """``"blobs"`` draws the synthetic generator, anything else is a delimited file."""
    if spec == "blobs":
        return make_blobs(blobs.get("n_samples", 4000), blobs.get("n_classes", 4), seed, std=blobs.get("std", 0.6))
    return load_delimited(spec, delimiter)


def _apply_job_quantization(net: Network, job: TrainJobConfig, qcfg: Optional[QuantizerConfig]) -> None:
    act_quant = _act_quant_config(job)
    for layer in net.weight_layers:
        layer.qcfg = qcfg
        layer.qweight = None
    for layer in net.layers:
        if layer.act_quant is None and act_quant is not None and layer.activation is Activation.RELU:
            layer.act_quant = act_quant
    net.refresh_quantization()


def _act_quant_config(job: TrainJobConfig) -> Optional[ActQuantConfig]:
    if job.activation_scheme is ActQuantScheme.NONE:
        return None
    return ActQuantConfig(n_bits=job.activation_bits, scheme=job.activation_scheme)


class _Recorder:
    """Ledger facade; every ledger failure is logged and swallowed."""

    def __init__(self, ledger: Optional[RunLedger], run_id: Any = None) -> None:
        self.ledger = ledger
        self.run_id = run_id

    def epoch(self, record: EpochRecord) -> None:
        if self.ledger is None or self.run_id is None:
            return
        try:
            self.ledger.record_epoch(self.run_id, record)
        except SQLAlchemyError:
            logger.exception("Could not record epoch %d", record.epoch)


@contextmanager
def _recorded_run(command: str, config: Dict[str, Any], seed: Optional[int] = None) -> Iterator[_Recorder]:
    settings = get_settings()
    if not settings.ledger_enabled:
        yield _Recorder(None)
        return
    try:
        ledger: Optional[RunLedger] = RunLedger.from_database_url(str(settings.database_url))
        run_id = ledger.start_run(command, config=config, seed=seed)
    except SQLAlchemyError:
        logger.exception("Run ledger unavailable; continuing without recording")
        yield _Recorder(None)
        return
    recorder = _Recorder(ledger, run_id)
    try:
        yield recorder
    except LUTQError as exc:
        _finish(ledger, run_id, exc.exit_code, error=str(exc))
        raise
    except Exception as exc:
        _finish(ledger, run_id, 1, error=repr(exc))
        raise
    else:
        _finish(ledger, run_id, EXIT_OK)


def _finish(ledger: RunLedger, run_id: Any, exit_code: int, error: Optional[str] = None) -> None:
    try:
        ledger.finish_run(run_id, exit_code, error=error)
    except SQLAlchemyError:
        logger.exception("Could not finalise run %s", run_id)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(
    config_path: str | Path,
    model_out: Optional[str] = None,
    trace_out: Optional[str] = None,
) -> Dict[str, Any]:
    """Train from a job file; writes the model file and the per-epoch trace."""
    job = load_job_config(config_path)
    model_path = Path(model_out or job.model_out)
    trace_path = Path(trace_out or job.trace_out)
    with _recorded_run("train", job.model_dump(mode="json"), seed=job.seed) as recorder:
        dataset = load_dataset(
            job.dataset,
            job.delimiter,
            seed=job.seed,
            n_samples=job.blobs_samples,
            n_classes=job.blobs_classes,
            std=job.blobs_std,
        )
        qcfg = job.quantizer_config()
        if job.init_model:
            net = load_model(job.init_model)
            _apply_job_quantization(net, job, qcfg)
        else:
            net = build_mlp(
                dataset.n_features,
                job.hidden_units,
                max(dataset.n_classes, 2),
                make_rng(job.seed),
                qcfg=qcfg,
                batchnorm=job.batchnorm,
                act_quant=_act_quant_config(job),
            )
        result = train(net, dataset, job.train_config(), on_epoch=recorder.epoch)
        size = save_model(result.net, model_path)
        try:
            trace_path.write_text(result.trace.model_dump_json(indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot write trace {str(trace_path)!r}: {exc.strerror}", field="trace_out") from exc
    summary = {
        "model": str(model_path),
        "model_bytes": size,
        "trace": str(trace_path),
        "epochs": len(result.trace.epochs),
        "final_loss": result.trace.losses[-1] if result.trace.epochs else None,
        "final_accuracy": result.trace.accuracies[-1] if result.trace.epochs else None,
        "network_class": network_class(result.net),
    }
    return summary


def cmd_quantize(
    model_path: str | Path,
    qcfg: QuantizerConfig,
    out_path: str | Path,
    keep_accumulators: bool = False,
) -> Dict[str, Any]:
    """Post-training quantization of every weight layer without retraining."""
    with _recorded_run("quantize", {"model": str(model_path), **qcfg.model_dump(mode="json")}):
        net = load_model(model_path)
        layers = []
        for layer in net.weight_layers:
            if qcfg.size > layer.w_full.size:
                raise ConfigError(
                    f"dictionary size {qcfg.size} exceeds the {layer.w_full.size} weights of {layer.name!r}",
                    field="k",
                )
            layer.qcfg = qcfg
            layer.qweight = lutq_quantize(layer.w_full, qcfg)
            error = quantization_error(layer.w_full, layer.qweight.q)
            logger.info("%s: K=%d error=%.6g", layer.name, layer.qweight.k, error)
            layers.append(
                {
                    "layer": layer.name,
                    "k": layer.qweight.k,
                    "dictionary": layer.qweight.dictionary.values.tolist(),
                    "error": error,
                }
            )
        size = save_model(net, out_path, keep_accumulators=keep_accumulators)
    return {"model": str(out_path), "model_bytes": size, "layers": layers, "network_class": network_class(net)}


def cmd_report(
    arch_path: str | Path,
    plans: Sequence[str] = ("float",),
    prune_ratio: float = 0.0,
    table: bool = False,
    count_bn_ops: bool = False,
) -> str:
    """Footprint report(s) as JSON, or as a plain-text table with *table*."""
    arch = load_architecture(arch_path)
    try:
        parsed = [WeightQuantPlan.parse(plan) for plan in plans]
    except ValueError as exc:
        raise ConfigError(str(exc), field="plan") from exc
    if not 0.0 <= prune_ratio < 1.0:
        raise ConfigError(f"pruning ratio must lie in [0, 1), got {prune_ratio}", field="prune")
    reports = [build_report(arch, plan, prune_ratio, count_bn_ops) for plan in parsed]
    if table:
        return render_table(reports)
    payload = [
        {**report.model_dump(mode="json"), "param_mb": report.param_mb, "buffer_mb": report.buffer_mb}
        for report in reports
    ]
    return json.dumps(payload[0] if len(payload) == 1 else payload, indent=2)


def _load_inputs(path: str | Path, n_features: int, delimiter: str) -> tuple[np.ndarray, Optional[np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"input file {str(path)!r} does not exist", field="input")
    try:
        table = np.loadtxt(path, delimiter=delimiter, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {str(path)!r}: {exc}", field="input") from exc
    if table.shape[1] == n_features:
        return table, None
    if table.shape[1] == n_features + 1:
        return table[:, :-1], table[:, -1].astype(np.int64)
    raise ConfigError(f"input rows have {table.shape[1]} columns, the model expects {n_features}", field="input")


def cmd_infer(
    model_path: str | Path,
    input_path: str | Path,
    kernel: Kernel = Kernel.NAIVE,
    delimiter: str = ",",
) -> Dict[str, Any]:
    """Predict with the chosen kernel and report the executed-operation counters."""
    with _recorded_run("infer", {"model": str(model_path), "input": str(input_path), "kernel": kernel.value}):
        net = load_model(model_path)
        if not net.weight_layers:
            raise ConfigError(f"model {str(model_path)!r} has no weight layer to take inputs", field="model")
        first = net.weight_layers[0]
        x, labels = _load_inputs(input_path, int(first.w_full[0].size), delimiter)
        counter = OpCounter()
        logits = run_network(net, x, kernel, counter=counter)
    predictions = np.argmax(logits, axis=1)
    payload: Dict[str, Any] = {
        "kernel": kernel.value,
        "predictions": predictions.tolist(),
        "logits": logits.tolist(),
        "probabilities": softmax(logits).tolist(),
        "counters": counter.as_dict(),
    }
    if labels is not None:
        payload["accuracy"] = float(np.mean(predictions == labels))
    return payload


def cmd_evaluate(
    model_path: str | Path,
    dataset: str,
    delimiter: str = ",",
    seed: int = 0,
) -> Dict[str, Any]:
    """Mean loss and accuracy of a stored model on a dataset."""
    override = get_settings().seed
    seed = override if override is not None else seed
    with _recorded_run("evaluate", {"model": str(model_path), "dataset": dataset}, seed=seed):
        net = load_model(model_path)
        data = load_dataset(dataset, delimiter, seed=seed)
        loss, accuracy = evaluate(net, data)
    return {"model": str(model_path), "dataset": dataset, "loss": loss, "accuracy": accuracy}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _parse_fixed_values(text: Optional[str]) -> Optional[tuple]:
    if not text:
        return None
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot parse fixed values {text!r}", field="fixed_values") from exc


def _quantizer_from_args(args: argparse.Namespace) -> QuantizerConfig:
    constraint = ConstraintKind(args.constraint)
    k = args.k
    if k is None and args.bits is not None and constraint in (ConstraintKind.FREE, ConstraintKind.POW2):
        k = 2**args.bits
    try:
        return QuantizerConfig(
            k=k,
            constraint=constraint,
            fixed_values=_parse_fixed_values(args.fixed_values),
            prune_ratio=args.prune,
            n_bits=args.bits if constraint in (ConstraintKind.UNIFORM, ConstraintKind.POW2_FIXED) else None,
            steps=args.steps,
        )
    except ValidationError as exc:
        raise _validation_to_config_error(exc, "quantizer") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lutq", description="Look-up table quantization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network from a TOML job file")
    p_train.add_argument("config", help="flat TOML job configuration")
    p_train.add_argument("--model-out", help="override the job's model_out path")
    p_train.add_argument("--trace-out", help="override the job's trace_out path")

    p_quant = sub.add_parser("quantize", help="post-training LUT-Q quantization of a stored model")
    p_quant.add_argument("model")
    p_quant.add_argument("--k", type=int, help="dictionary size K")
    p_quant.add_argument("--bits", type=int, help="K = 2^bits (free/pow2) or the uniform/pow2_fixed grid width")
    p_quant.add_argument("--constraint", choices=[kind.value for kind in ConstraintKind], default="free")
    p_quant.add_argument("--prune", type=float, help="pruning ratio pinned to the zero entry")
    p_quant.add_argument("--fixed-values", help="comma separated dictionary for --constraint fixed")
    p_quant.add_argument("--steps", type=int, default=1, help="k-means steps after the initial clustering")
    p_quant.add_argument("--out", required=True, help="quantized model path")
    p_quant.add_argument("--keep-accumulators", action="store_true", help="also store the float weights")

    p_report = sub.add_parser("report", help="memory and computation footprint of an architecture")
    p_report.add_argument("arch", help="architecture JSON file or a shipped name (resnet20, resnet18, ...)")
    p_report.add_argument("--plan", action="append", help="float, lutq:K or fp:n; repeat for several rows")
    p_report.add_argument("--prune", type=float, default=0.0)
    p_report.add_argument("--table", action="store_true", help="print a plain-text table")
    p_report.add_argument("--count-bn-ops", action="store_true", help="include batch-norm operations")

    p_infer = sub.add_parser("infer", help="run a stored model through an inference kernel")
    p_infer.add_argument("model")
    p_infer.add_argument("input", help="delimited samples, optionally with a trailing label column")
    p_infer.add_argument("--kernel", choices=[kernel.value for kernel in Kernel], default="naive")
    p_infer.add_argument("--delimiter", default=",")

    p_eval = sub.add_parser("evaluate", help="loss and accuracy of a stored model")
    p_eval.add_argument("model")
    p_eval.add_argument("dataset", help="delimited file (label last) or 'blobs'")
    p_eval.add_argument("--delimiter", default=",")
    p_eval.add_argument("--seed", type=int, default=0, help="seed of the synthetic blobs")
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "train":
        _emit(cmd_train(args.config, args.model_out, args.trace_out))
    elif args.command == "quantize":
        _emit(cmd_quantize(args.model, _quantizer_from_args(args), args.out, args.keep_accumulators))
    elif args.command == "report":
        sys.stdout.write(
            cmd_report(args.arch, args.plan or ["float"], args.prune, args.table, args.count_bn_ops) + "\n"
        )
    elif args.command == "infer":
        _emit(cmd_infer(args.model, args.input, Kernel(args.kernel), args.delimiter))
    elif args.command == "evaluate":
        _emit(cmd_evaluate(args.model, args.dataset, args.delimiter, args.seed))
    else:  # pragma: no cover
        raise ArgumentError(f"unknown command {args.command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_settings()
    logging.basicConfig(level=settings.log_level.upper(), format=LOG_FORMAT, stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except LUTQError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

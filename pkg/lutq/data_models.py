"""Pydantic data models used throughout the LUT-Q toolkit.

Configuration objects (quantizers, training, activation quantization), the
declarative architecture description consumed by the footprint calculator,
and the report/trace payloads written by the command line all live here so
every layer shares one contract.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

__all__ = [
    "ConstraintKind",
    "QuantizerConfig",
    "ActQuantScheme",
    "ActQuantConfig",
    "Activation",
    "BatchNormMode",
    "TrainConfig",
    "EpochRecord",
    "TrainTrace",
    "TrainJobConfig",
    "LayerKind",
    "PoolOp",
    "WeightQuantScheme",
    "WeightQuantPlan",
    "LayerSpec",
    "ArchitectureSpec",
    "LayerFootprint",
    "FootprintReport",
    "LayerOps",
    "OpsReport",
    "is_power_of_two",
]


def is_power_of_two(value: float) -> bool:
    """Return ``True`` if *value* equals ``2**b`` for an integer ``b``."""
    if not math.isfinite(value) or value <= 0:
        return False
    mantissa, _ = math.frexp(value)
    return mantissa == 0.5


# ---------------------------------------------------------------------------
# Quantizer configuration
# ---------------------------------------------------------------------------


class ConstraintKind(str, Enum):
    """How a layer's dictionary may move during training."""

    FREE = "free"
    FIXED = "fixed"
    POW2 = "pow2"
    UNIFORM = "uniform"
    POW2_FIXED = "pow2_fixed"


class QuantizerConfig(BaseModel):
    """Per-layer LUT-Q configuration.

    ``prune_ratio`` activates the zero-pinned first dictionary entry and may be
    combined with the free or power-of-two constraints.  For fixed, uniform and
    pow2_fixed dictionaries ``k`` is derived from the value list / bit width;
    the pow2_fixed grid is ``{0, ±2^e}`` with its top exponent taken from the
    layer's dynamic range at every refresh.
    """

    model_config = ConfigDict(frozen=True)

    k: Optional[int] = Field(None, ge=1, description="Dictionary size K")
    constraint: ConstraintKind = Field(ConstraintKind.FREE, description="Dictionary constraint kind")
    fixed_values: Optional[Tuple[float, ...]] = Field(
        None, description="Dictionary values for the fixed constraint, in index order"
    )
    prune_ratio: Optional[float] = Field(
        None, ge=0.0, lt=1.0, description="Fraction of weights pinned to the zero entry d_1"
    )
    n_bits: Optional[int] = Field(None, ge=2, description="Bit width of the uniform or pow2_fixed grid")
    delta: Optional[float] = Field(
        None, gt=0.0, description="Uniform grid step (power of two); None derives it from the dynamic range"
    )
    steps: int = Field(1, ge=1, le=65535, description="k-means steps M per refresh")
    max_init_iterations: int = Field(100, ge=1, le=65535, description="Iteration cap of the initial k-means")

    @model_validator(mode="after")
    def _check_consistency(self) -> "QuantizerConfig":
        kind = self.constraint
        if kind is ConstraintKind.FIXED:
            if not self.fixed_values:
                raise ValueError("fixed constraint requires fixed_values")
            if self.k is not None and self.k != len(self.fixed_values):
                raise ValueError("k must match the number of fixed_values")
        elif kind is ConstraintKind.UNIFORM:
            if self.n_bits is None:
                raise ValueError("uniform constraint requires n_bits")
            if self.delta is not None and not is_power_of_two(self.delta):
                raise ValueError("uniform delta must be a power of two")
        elif kind is ConstraintKind.POW2_FIXED:
            if self.n_bits is None:
                raise ValueError("pow2_fixed constraint requires n_bits")
            if self.delta is not None:
                raise ValueError("delta applies to the uniform constraint only")
        elif self.k is None:
            raise ValueError(f"{kind.value} constraint requires k")
        if self.prune_ratio is not None:
            if kind not in (ConstraintKind.FREE, ConstraintKind.POW2):
                raise ValueError("pruning combines with the free or pow2 constraint only")
            if (self.k or 0) < 2:
                raise ValueError("pruning requires k >= 2")
        return self

    @property
    def size(self) -> int:
        """Dictionary size K (derived for fixed/uniform dictionaries)."""
        if self.constraint is ConstraintKind.FIXED:
            return len(self.fixed_values or ())
        if self.constraint is ConstraintKind.UNIFORM:
            return 2 ** int(self.n_bits or 0) - 1
        if self.constraint is ConstraintKind.POW2_FIXED:
            return 2 ** (int(self.n_bits or 0) - 1) + 1
        return int(self.k or 0)

    @property
    def zero_pinned(self) -> bool:
        return self.prune_ratio is not None

    @property
    def learns_dictionary(self) -> bool:
        """``True`` when the k-means centroid pass updates the dictionary."""
        return self.constraint in (ConstraintKind.FREE, ConstraintKind.POW2)


# ---------------------------------------------------------------------------
# Network / training configuration
# ---------------------------------------------------------------------------


class ActQuantScheme(str, Enum):
    NONE = "none"
    FP = "fp"
    POW2 = "pow2"


class ActQuantConfig(BaseModel):
    """Quantization of post-ReLU activations to ``[0, r]``."""

    model_config = ConfigDict(frozen=True)

    n_bits: int = Field(8, ge=1, le=16, description="Activation bit width (unsigned)")
    scheme: ActQuantScheme = Field(ActQuantScheme.FP, description="Quantization grid")
    range_r: Optional[float] = Field(
        None, description="Dynamic range r = 2^m; None until calibrated"
    )

    @field_validator("range_r")
    @classmethod
    def _range_is_power_of_two(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not is_power_of_two(value):
            raise ValueError("range_r must be a power of two")
        return value


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"
    SOFTMAX = "softmax"


class BatchNormMode(str, Enum):
    TRADITIONAL = "traditional"
    MULTIPLIER_LESS = "multiplierless"


class TrainConfig(BaseModel):
    """Optimizer and schedule settings of one LUT-Q training run."""

    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(0.1, gt=0.0, description="SGD step size eta")
    momentum: float = Field(0.0, ge=0.0, lt=1.0, description="Classical momentum coefficient")
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    kmeans_interval: int = Field(1, ge=1, description="Minibatches between dictionary/assignment refreshes")
    kmeans_steps: int = Field(1, ge=1, description="k-means steps M per refresh")
    seed: int = 0


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=1)
    loss: float = Field(..., description="Mean minibatch training loss")
    accuracy: float = Field(..., ge=0.0, le=1.0, description="Training accuracy of the epoch's forward passes")


class TrainTrace(BaseModel):
    """Per-epoch history of a training run."""

    seed: int
    epochs: List[EpochRecord] = Field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [record.loss for record in self.epochs]

    @property
    def accuracies(self) -> List[float]:
        return [record.accuracy for record in self.epochs]


class TrainJobConfig(BaseModel):
    """Flat key-value job description read by ``lutq train``.

    Key names carry their units; unknown keys are rejected.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    dataset: str = Field(..., description="'blobs' for the synthetic generator or a delimited file path")
    delimiter: str = ","
    blobs_classes: int = Field(4, ge=2)
    blobs_samples: int = Field(4000, ge=2)
    blobs_std: float = Field(0.6, gt=0.0)
    hidden_units: List[int] = Field(default_factory=lambda: [32, 32])
    batchnorm: Optional[BatchNormMode] = None
    weight_constraint: Optional[ConstraintKind] = Field(None, description="None trains full precision")
    weight_bits: int = Field(2, ge=0, le=16, description="K = 2^weight_bits for free/pow2")
    fixed_values: Optional[List[float]] = None
    prune_ratio: Optional[float] = Field(None, ge=0.0, lt=1.0)
    activation_bits: int = Field(8, ge=1, le=16)
    activation_scheme: ActQuantScheme = ActQuantScheme.NONE
    learning_rate: float = Field(0.1, gt=0.0)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    kmeans_interval: int = Field(1, ge=1)
    kmeans_steps: int = Field(1, ge=1)
    seed: int = 0
    init_model: Optional[str] = Field(None, description="Seed network whose accumulators initialise training")
    model_out: str = "model.lutq"
    trace_out: str = "trace.json"

    @field_validator("hidden_units")
    @classmethod
    def _positive_units(cls, value: List[int]) -> List[int]:
        if any(units < 1 for units in value):
            raise ValueError("hidden_units entries must be positive")
        return value

    def quantizer_config(self) -> Optional[QuantizerConfig]:
        """Return the per-layer quantizer implied by the job, if any."""
        if self.weight_constraint is None:
            return None
        common = dict(constraint=self.weight_constraint, steps=self.kmeans_steps)
        if self.weight_constraint is ConstraintKind.FIXED:
            return QuantizerConfig(fixed_values=tuple(self.fixed_values or ()), **common)
        if self.weight_constraint in (ConstraintKind.UNIFORM, ConstraintKind.POW2_FIXED):
            return QuantizerConfig(n_bits=self.weight_bits, **common)
        return QuantizerConfig(k=2**self.weight_bits, prune_ratio=self.prune_ratio, **common)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            epochs=self.epochs,
            batch_size=self.batch_size,
            kmeans_interval=self.kmeans_interval,
            kmeans_steps=self.kmeans_steps,
            seed=self.seed,
        )


# ---------------------------------------------------------------------------
# Architecture description & footprint report
# ---------------------------------------------------------------------------


class LayerKind(str, Enum):
    CONV2D = "conv2d"
    AFFINE = "affine"
    BN = "bn"
    POOL = "pool"
    ADD = "add"


class PoolOp(str, Enum):
    AVG = "avg"
    MAX = "max"


class WeightQuantScheme(str, Enum):
    NONE = "none"
    LUTQ = "lutq"
    FP = "fp"


class WeightQuantPlan(BaseModel):
    """How a layer's weights are stored: float, LUT-Q with K entries, or n-bit fixed point."""

    model_config = ConfigDict(frozen=True)

    scheme: WeightQuantScheme = WeightQuantScheme.NONE
    k: Optional[int] = Field(None, ge=1)
    bits: Optional[int] = Field(None, ge=1, le=32)

    @model_validator(mode="after")
    def _check_scheme_fields(self) -> "WeightQuantPlan":
        if self.scheme is WeightQuantScheme.LUTQ and self.k is None:
            raise ValueError("lutq plan requires k")
        if self.scheme is WeightQuantScheme.FP and self.bits is None:
            raise ValueError("fp plan requires bits")
        return self

    @classmethod
    def parse(cls, text: str) -> "WeightQuantPlan":
        """Parse ``float``/``none``, ``lutq:K`` or ``fp:n``."""
        head, _, arg = text.strip().lower().partition(":")
        if head in ("float", "none", "full"):
            return cls()
        if head == "lutq" and arg:
            return cls(scheme=WeightQuantScheme.LUTQ, k=int(arg))
        if head == "fp" and arg:
            return cls(scheme=WeightQuantScheme.FP, bits=int(arg))
        raise ValueError(f"unrecognised weight plan {text!r}")

    def __str__(self) -> str:
        if self.scheme is WeightQuantScheme.LUTQ:
            return f"lutq:{self.k}"
        if self.scheme is WeightQuantScheme.FP:
            return f"fp:{self.bits}"
        return "float"


class LayerSpec(BaseModel):
    """One layer of an :class:`ArchitectureSpec`.  ``map_size`` is the output map."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = Field(..., min_length=1)
    kind: LayerKind
    in_maps: int = Field(..., ge=1, description="Input maps I (input features for affine)")
    out_maps: int = Field(..., ge=1, description="Output maps O (output features for affine)")
    map_size: Tuple[int, int] = Field((1, 1), description="Output map size S as (h, w)")
    filter_size: Tuple[int, int] = Field((1, 1), description="Filter/window size F as (h, w)")
    stride: int = Field(1, ge=1)
    bias: bool = False
    pool_op: Optional[PoolOp] = None
    bn_mode: BatchNormMode = BatchNormMode.TRADITIONAL
    activation_bits: Optional[int] = Field(None, ge=1, le=32)
    weight_quant: Optional[WeightQuantPlan] = None

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "LayerSpec":
        if any(v < 1 for v in (*self.map_size, *self.filter_size)):
            raise ValueError("map_size and filter_size extents must be positive")
        if self.kind in (LayerKind.BN, LayerKind.ADD, LayerKind.POOL) and self.in_maps != self.out_maps:
            raise ValueError(f"{self.kind.value} layers keep the number of maps")
        if self.kind is LayerKind.POOL and self.pool_op is None:
            raise ValueError("pool layers require pool_op")
        return self

    @property
    def has_weights(self) -> bool:
        return self.kind in (LayerKind.CONV2D, LayerKind.AFFINE)

    @property
    def map_elements(self) -> int:
        return self.map_size[0] * self.map_size[1]

    @property
    def filter_elements(self) -> int:
        return self.filter_size[0] * self.filter_size[1]

    @property
    def weight_count(self) -> int:
        """Weight count N = O * I * F for weight layers, 0 otherwise."""
        if not self.has_weights:
            return 0
        return self.out_maps * self.in_maps * self.filter_elements

    @property
    def input_activations(self) -> int:
        h, w = self.map_size
        return self.in_maps * (h * self.stride) * (w * self.stride)

    @property
    def output_activations(self) -> int:
        return self.out_maps * self.map_elements


class ArchitectureSpec(BaseModel):
    """Declarative network description used for footprint accounting."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = Field(..., min_length=1)
    input_maps: int = Field(..., ge=1)
    input_size: Tuple[int, int] = (1, 1)
    activation_bits: int = Field(32, ge=1, le=32)
    layers: List[LayerSpec] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _check_chaining(self) -> "ArchitectureSpec":
        produced = {self.input_maps}
        names = set()
        for layer in self.layers:
            if layer.name in names:
                raise ValueError(f"duplicate layer name {layer.name!r}")
            names.add(layer.name)
            if layer.in_maps not in produced:
                raise ValueError(
                    f"layer {layer.name!r} consumes {layer.in_maps} maps but no earlier layer produces them"
                )
            produced.add(layer.out_maps)
        return self


class LayerFootprint(BaseModel):
    name: str
    kind: LayerKind
    weight_quant: str = "float"
    param_bits: int = 0
    buffer_bits: int = 0
    additions: int = 0
    multiplications: int = 0


class FootprintReport(BaseModel):
    """Memory and computation totals of one architecture under one plan."""

    architecture: str
    plan: str
    prune_ratio: float = 0.0
    layers: List[LayerFootprint] = Field(default_factory=list)
    param_bits: int = 0
    buffer_bits: int = 0
    additions: int = 0
    multiplications: int = 0

    @property
    def param_mb(self) -> float:
        """Parameter memory in MB (2^20 bytes)."""
        return self.param_bits / 8 / 2**20

    @property
    def buffer_mb(self) -> float:
        return self.buffer_bits / 8 / 2**20


class LayerOps(BaseModel):
    name: str
    kind: LayerKind
    additions: int = 0
    multiplications: int = 0


class OpsReport(BaseModel):
    """Per-layer and total operation counts of one architecture under one plan."""

    architecture: str
    plan: str
    prune_ratio: float = 0.0
    count_bn_ops: bool = False
    layers: List[LayerOps] = Field(default_factory=list)
    additions: int = 0
    multiplications: int = 0

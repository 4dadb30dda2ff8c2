"""LUTQ v1 binary model files.

Layout (little-endian)::

    header   b"LUTQ" | u16 version | u16 flags | u32 layer count
    chunk    4-byte tag (AFFN, CONV, BNRM) | u32 payload length | payload

Every payload starts with ``u8 name length | name (utf-8)``.  Weight layers
then store activation, flags, shape, stride/padding, the float bias, and
optionally the quantizer (dictionary in f64 plus assignments packed at
``⌈log₂K⌉`` bits per entry, MSB first, each output row padded to a byte),
the full-precision accumulator and the activation quantizer.  Batch-norm
chunks store mode, activation, flags, epsilon, momentum and the four
per-channel vectors.  The packed assignments make the file size track the
dictionary/assignment memory cost of the model.
"""

from __future__ import annotations

import logging
import math
import struct
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from lutq.data_models import (
    ActQuantConfig,
    ActQuantScheme,
    Activation,
    BatchNormMode,
    ConstraintKind,
    QuantizerConfig,
)
from lutq.errors import ConfigError, CorruptArtifactError, LUTQError
from lutq.footprint.memory import index_bits
from lutq.nn.layers import AffineLayer, BatchNormLayer, Conv2DLayer
from lutq.nn.network import Layer, Network, WeightLayer
from lutq.quantizers.dictionary import AssignmentTensor, Dictionary, QuantizedWeight

logger = logging.getLogger(__name__)

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "pack_assignments",
    "unpack_assignments",
    "model_to_bytes",
    "model_from_bytes",
    "save_model",
    "load_model",
]

MAGIC = b"LUTQ"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHHI")
_CHUNK = struct.Struct("<4sI")

TAG_AFFINE = b"AFFN"
TAG_CONV = b"CONV"
TAG_BATCHNORM = b"BNRM"

FLAG_QUANTIZED = 1
FLAG_ACCUMULATOR = 2
FLAG_ACT_QUANT = 4

_ACTIVATIONS = [Activation.IDENTITY, Activation.RELU, Activation.SOFTMAX]
_CONSTRAINTS = [
    ConstraintKind.FREE,
    ConstraintKind.FIXED,
    ConstraintKind.POW2,
    ConstraintKind.UNIFORM,
    ConstraintKind.POW2_FIXED,
]
# kind, K, steps, initial iterations, prune ratio, n_bits, delta
_QUANTIZER = struct.Struct("<BIHHdBd")
_BN_MODES = [BatchNormMode.TRADITIONAL, BatchNormMode.MULTIPLIER_LESS]
_ACT_SCHEMES = [ActQuantScheme.NONE, ActQuantScheme.FP, ActQuantScheme.POW2]


# ---------------------------------------------------------------------------
# Assignment packing
# ---------------------------------------------------------------------------


def pack_assignments(assignment: AssignmentTensor, k: int) -> bytes:
    """Pack ``A − 1`` at ``⌈log₂K⌉`` bits per entry, one byte-aligned row per output."""
    bits = index_bits(k)
    if bits == 0:
        return b""
    indices = assignment.indices
    rows = indices.reshape(indices.shape[0], -1) - 1
    shifts = np.arange(bits - 1, -1, -1, dtype=np.int64)
    bit_planes = ((rows[:, :, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bit_planes.reshape(rows.shape[0], -1), axis=1).tobytes()


def _packed_row_bytes(row_entries: int, k: int) -> int:
    return math.ceil(row_entries * index_bits(k) / 8)


def unpack_assignments(data: bytes, shape: Tuple[int, ...], k: int) -> AssignmentTensor:
    bits = index_bits(k)
    if bits == 0:
        return AssignmentTensor(np.ones(shape, dtype=np.int64))
    n_rows = shape[0]
    row_entries = int(np.prod(shape[1:], dtype=np.int64))
    packed = np.frombuffer(data, dtype=np.uint8).reshape(n_rows, _packed_row_bytes(row_entries, k))
    planes = np.unpackbits(packed, axis=1)[:, : row_entries * bits].reshape(n_rows, row_entries, bits)
    weights = np.left_shift(1, np.arange(bits - 1, -1, -1, dtype=np.int64))
    indices = (planes.astype(np.int64) * weights).sum(axis=2) + 1
    return AssignmentTensor(indices.reshape(shape))


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _f64(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def _nan_if_none(value: Optional[float]) -> float:
    return math.nan if value is None else float(value)


def _encode_name(name: str) -> bytes:
    # cut at 255 bytes without splitting a multi-byte character
    raw = name.encode("utf-8")[:255].decode("utf-8", errors="ignore").encode("utf-8")
    return struct.pack("<B", len(raw)) + raw


def _encode_act_quant(cfg: ActQuantConfig) -> bytes:
    return struct.pack("<BBd", _ACT_SCHEMES.index(cfg.scheme), cfg.n_bits, _nan_if_none(cfg.range_r))


def _encode_weight_layer(layer: WeightLayer, keep_accumulators: bool) -> bytes:
    quantized = layer.qcfg is not None
    if quantized and layer.qweight is None:
        layer.refresh_quantization()
    flags = 0
    if quantized:
        flags |= FLAG_QUANTIZED
    if keep_accumulators or not quantized:
        flags |= FLAG_ACCUMULATOR
    if layer.act_quant is not None:
        flags |= FLAG_ACT_QUANT
    stride, padding = (layer.stride, layer.padding) if isinstance(layer, Conv2DLayer) else (1, 0)
    shape = layer.w_full.shape
    parts = [
        _encode_name(layer.name),
        struct.pack("<BBB", _ACTIVATIONS.index(layer.activation), flags, len(shape)),
        struct.pack(f"<{len(shape)}I", *shape),
        struct.pack("<HH", stride, padding),
        _f64(layer.bias),
    ]
    if quantized:
        cfg = layer.qcfg
        qweight = layer.qweight
        assert cfg is not None and qweight is not None
        dictionary = qweight.dictionary
        parts.append(
            _QUANTIZER.pack(
                _CONSTRAINTS.index(cfg.constraint),
                dictionary.size,
                cfg.steps,
                cfg.max_init_iterations,
                _nan_if_none(dictionary.prune_ratio),
                cfg.n_bits or 0,
                _nan_if_none(cfg.delta),
            )
        )
        parts.append(_f64(dictionary.values))
        parts.append(pack_assignments(qweight.assignment, dictionary.size))
    if flags & FLAG_ACCUMULATOR:
        parts.append(_f64(layer.w_full.reshape(-1)))
    if layer.act_quant is not None:
        parts.append(_encode_act_quant(layer.act_quant))
    return b"".join(parts)


def _encode_batchnorm(layer: BatchNormLayer) -> bytes:
    flags = FLAG_ACT_QUANT if layer.act_quant is not None else 0
    parts = [
        _encode_name(layer.name),
        struct.pack(
            "<BBBIdd",
            _BN_MODES.index(layer.mode),
            _ACTIVATIONS.index(layer.activation),
            flags,
            layer.features,
            layer.epsilon,
            layer.momentum,
        ),
        _f64(layer.gamma),
        _f64(layer.beta),
        _f64(layer.running_mean),
        _f64(layer.running_var),
    ]
    if layer.act_quant is not None:
        parts.append(_encode_act_quant(layer.act_quant))
    return b"".join(parts)


def model_to_bytes(net: Network, keep_accumulators: bool = True) -> bytes:
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, 0, len(net.layers))]
    for layer in net.layers:
        if isinstance(layer, BatchNormLayer):
            tag, payload = TAG_BATCHNORM, _encode_batchnorm(layer)
        else:
            tag = TAG_CONV if isinstance(layer, Conv2DLayer) else TAG_AFFINE
            payload = _encode_weight_layer(layer, keep_accumulators)
        chunks.append(_CHUNK.pack(tag, len(payload)))
        chunks.append(payload)
    return b"".join(chunks)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes) -> None:
        self._data = memoryview(data)
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self.offset

    def take(self, size: int) -> bytes:
        if size < 0 or size > self.remaining:
            raise CorruptArtifactError(f"truncated model file: needed {size} bytes at offset {self.offset}")
        chunk = bytes(self._data[self.offset : self.offset + size])
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        layout = struct.Struct(fmt)
        return layout.unpack(self.take(layout.size))

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def name(self) -> str:
        (length,) = self.unpack("<B")
        return self.take(length).decode("utf-8", errors="replace")


def _code(table: list, index: int, what: str):
    if index >= len(table):
        raise CorruptArtifactError(f"unknown {what} code {index}")
    return table[index]


def _none_if_nan(value: float) -> Optional[float]:
    return None if math.isnan(value) else value


def _decode_act_quant(reader: _Reader) -> ActQuantConfig:
    scheme, n_bits, range_r = reader.unpack("<BBd")
    return ActQuantConfig(
        scheme=_code(_ACT_SCHEMES, scheme, "activation scheme"), n_bits=n_bits, range_r=_none_if_nan(range_r)
    )


def _decode_weight_layer(reader: _Reader, conv: bool) -> WeightLayer:
    name = reader.name()
    activation, flags, ndim = reader.unpack("<BBB")
    if ndim != (4 if conv else 2):
        raise CorruptArtifactError(f"layer {name!r} has {ndim} weight axes")
    shape = reader.unpack(f"<{ndim}I")
    if 0 in shape:
        raise CorruptArtifactError(f"layer {name!r} has an empty weight shape {shape}")
    stride, padding = reader.unpack("<HH")
    bias = reader.f64(shape[0])
    n_weights = int(np.prod(shape, dtype=np.int64))

    qcfg: Optional[QuantizerConfig] = None
    qweight: Optional[QuantizedWeight] = None
    if flags & FLAG_QUANTIZED:
        kind_code, k, steps, max_init_iterations, prune, n_bits, delta = reader.unpack(_QUANTIZER.format)
        kind = _code(_CONSTRAINTS, kind_code, "constraint")
        values = reader.f64(k)
        packed = reader.take(shape[0] * _packed_row_bytes(n_weights // shape[0], k))
        prune_ratio = _none_if_nan(prune)
        dictionary = Dictionary(values=values, kind=kind, prune_ratio=prune_ratio)
        assignment = unpack_assignments(packed, shape, k)
        qweight = QuantizedWeight.build(dictionary, assignment)
        qcfg = QuantizerConfig(
            k=k if kind in (ConstraintKind.FREE, ConstraintKind.POW2) else None,
            constraint=kind,
            fixed_values=tuple(values.tolist()) if kind is ConstraintKind.FIXED else None,
            prune_ratio=prune_ratio,
            n_bits=n_bits or None,
            delta=_none_if_nan(delta),
            steps=steps,
            max_init_iterations=max_init_iterations,
        )
    if flags & FLAG_ACCUMULATOR:
        w_full = reader.f64(n_weights).reshape(shape)
    elif qweight is not None:
        w_full = np.array(qweight.q)
    else:
        raise CorruptArtifactError(f"layer {name!r} stores neither weights nor a quantizer")
    act_quant = _decode_act_quant(reader) if flags & FLAG_ACT_QUANT else None

    common = dict(
        w_full=w_full,
        bias=bias,
        activation=_code(_ACTIVATIONS, activation, "activation"),
        qcfg=qcfg,
        qweight=qweight,
        act_quant=act_quant,
        name=name,
    )
    if conv:
        return Conv2DLayer(stride=stride, padding=padding, **common)
    return AffineLayer(**common)


def _decode_batchnorm(reader: _Reader) -> BatchNormLayer:
    name = reader.name()
    mode, activation, flags, features, epsilon, momentum = reader.unpack("<BBBIdd")
    gamma, beta, mean, var = (reader.f64(features) for _ in range(4))
    act_quant = _decode_act_quant(reader) if flags & FLAG_ACT_QUANT else None
    return BatchNormLayer(
        gamma=gamma,
        beta=beta,
        running_mean=mean,
        running_var=var,
        epsilon=epsilon,
        momentum=momentum,
        mode=_code(_BN_MODES, mode, "batch-norm mode"),
        activation=_code(_ACTIVATIONS, activation, "activation"),
        act_quant=act_quant,
        name=name,
    )


_DECODERS: dict[bytes, Callable[[_Reader], Layer]] = {
    TAG_AFFINE: lambda reader: _decode_weight_layer(reader, conv=False),
    TAG_CONV: lambda reader: _decode_weight_layer(reader, conv=True),
    TAG_BATCHNORM: _decode_batchnorm,
}


def model_from_bytes(data: bytes) -> Network:
    reader = _Reader(data)
    magic, version, _flags, n_layers = reader.unpack(_HEADER.format)
    if magic != MAGIC:
        raise CorruptArtifactError(f"bad magic {magic!r}; not a LUTQ model file")
    if version != FORMAT_VERSION:
        raise CorruptArtifactError(f"unsupported LUTQ format version {version}")
    if n_layers == 0:
        raise CorruptArtifactError("model file holds no layers")
    layers: List[Layer] = []
    for index in range(n_layers):
        tag, length = reader.unpack(_CHUNK.format)
        decoder = _DECODERS.get(tag)
        if decoder is None:
            raise CorruptArtifactError(f"unknown chunk tag {tag!r} for layer {index}")
        payload = _Reader(reader.take(length))
        try:
            layer = decoder(payload)
        except CorruptArtifactError:
            raise
        except (LUTQError, ValidationError, ValueError) as exc:
            raise CorruptArtifactError(f"layer {index} is malformed: {exc}") from exc
        if payload.remaining:
            raise CorruptArtifactError(f"layer {index} chunk has {payload.remaining} unread bytes")
        layers.append(layer)
    if reader.remaining:
        raise CorruptArtifactError(f"{reader.remaining} trailing bytes after the last layer")
    return Network(layers)


def save_model(net: Network, path: Union[str, Path], keep_accumulators: bool = True) -> int:
    """Write *net* to *path*; returns the file size in bytes."""
    data = model_to_bytes(net, keep_accumulators)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise ConfigError(f"cannot write model file {str(path)!r}: {exc.strerror}", field="model_out") from exc
    logger.info("Wrote %d layers (%d bytes) to %s", len(net.layers), len(data), path)
    return len(data)


def load_model(path: Union[str, Path]) -> Network:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"model file {str(path)!r} does not exist", field="model")
    net = model_from_bytes(path.read_bytes())
    logger.debug("Loaded %d layers from %s", len(net.layers), path)
    return net

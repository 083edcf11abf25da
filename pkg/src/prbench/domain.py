"""Core vocabulary: operation kinds, layer configurations, bounds, records.

A LayerConfig is a single DNN operation with concrete integer parameters.
Each kind has a fixed canonical parameter set; validation is strict so that
every artifact downstream (sweeps, stores, models) agrees on the schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple

from .errors import InvalidParam, KindMismatch, MappingMismatch, NonPositiveOutput


class OpKind(str, Enum):
    Conv1D = "Conv1D"
    Conv2D = "Conv2D"
    PointwiseConv2D = "PointwiseConv2D"
    DepthwiseConv2D = "DepthwiseConv2D"
    FullyConnected = "FullyConnected"
    AvgPool2D = "AvgPool2D"
    MaxPool2D = "MaxPool2D"
    ReLU = "ReLU"
    Add = "Add"

    def __str__(self) -> str:
        return self.value


# Canonical parameter names per kind, in canonical order.  Element-wise kinds
# (ReLU, Add) carry their input shape so that output element counts and graph
# shape checks are well defined.
CANONICAL_PARAMS: Dict[OpKind, Tuple[str, ...]] = {
    OpKind.Conv1D: ("C", "C_w", "K", "F", "s", "pad"),
    OpKind.Conv2D: ("C", "C_h", "C_w", "K", "F_h", "F_w", "s", "pad"),
    OpKind.PointwiseConv2D: ("C", "C_h", "C_w", "K", "F_h", "F_w", "s", "pad"),
    OpKind.DepthwiseConv2D: ("C", "C_h", "C_w", "K", "F_h", "F_w", "s", "pad"),
    OpKind.FullyConnected: ("batch", "in", "out"),
    OpKind.AvgPool2D: ("C", "C_h", "C_w", "F"),
    OpKind.MaxPool2D: ("C", "C_h", "C_w", "F"),
    OpKind.ReLU: ("C", "C_h", "C_w"),
    OpKind.Add: ("C", "C_h", "C_w"),
}

POOLING_KINDS = frozenset({OpKind.AvgPool2D, OpKind.MaxPool2D})
ELEMENTWISE_KINDS = frozenset({OpKind.ReLU, OpKind.Add})

_KIND_ALIASES = {
    "conv1d": OpKind.Conv1D,
    "conv2d": OpKind.Conv2D,
    "pointwiseconv2d": OpKind.PointwiseConv2D,
    "pointwise_conv2d": OpKind.PointwiseConv2D,
    "pwconv2d": OpKind.PointwiseConv2D,
    "depthwiseconv2d": OpKind.DepthwiseConv2D,
    "depthwise_conv2d": OpKind.DepthwiseConv2D,
    "dwconv2d": OpKind.DepthwiseConv2D,
    "fullyconnected": OpKind.FullyConnected,
    "fully_connected": OpKind.FullyConnected,
    "fc": OpKind.FullyConnected,
    "avgpool2d": OpKind.AvgPool2D,
    "maxpool2d": OpKind.MaxPool2D,
    "relu": OpKind.ReLU,
    "add": OpKind.Add,
}


def parse_kind(name: str) -> OpKind:
    """Resolve a kind name, accepting canonical casing and common aliases."""
    try:
        return OpKind(name)
    except ValueError:
        pass
    key = name.strip().lower().replace("-", "_")
    if key in _KIND_ALIASES:
        return _KIND_ALIASES[key]
    raise InvalidParam("kind", name, "unknown operation kind")


@dataclass(frozen=True, eq=False)
class LayerConfig:
    """One concrete layer: an operation kind plus integer parameters."""

    kind: OpKind
    params: Mapping[str, int]

    def __post_init__(self) -> None:
        validate(self.kind, self.params)
        ordered = {name: int(self.params[name]) for name in CANONICAL_PARAMS[self.kind]}
        object.__setattr__(self, "params", ordered)

    def _key(self) -> tuple:
        return (self.kind, tuple(self.params.items()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayerConfig):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"LayerConfig({self.kind}, {inner})"

    def replace(self, **updates: int) -> "LayerConfig":
        params = dict(self.params)
        params.update(updates)
        return LayerConfig(self.kind, params)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LayerConfig":
        if "kind" not in doc or "params" not in doc:
            raise InvalidParam("layer", dict(doc), "expected keys 'kind' and 'params'")
        return cls(parse_kind(doc["kind"]), dict(doc["params"]))


def validate(kind: OpKind, params: Mapping[str, int]) -> None:
    """Check a parameter mapping against the canonical schema of `kind`.

    Raises InvalidParam on unknown/missing names, non-integers, values below
    their floor (1, or 0 for padding), and violated kind constraints
    (pointwise kernels must be 1x1, depthwise has a single output channel
    per input channel).
    """
    canonical = CANONICAL_PARAMS[kind]
    for name in params:
        if name not in canonical:
            raise InvalidParam(name, params[name], f"not a parameter of {kind}")
    for name in canonical:
        if name not in params:
            raise InvalidParam(name, None, f"missing for {kind}")
        value = params[name]
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidParam(name, value, "must be an integer")
        floor = 0 if name == "pad" else 1
        if value < floor:
            raise InvalidParam(name, value, f"must be >= {floor}")
    if kind is OpKind.PointwiseConv2D:
        if params["F_h"] != 1 or params["F_w"] != 1:
            raise InvalidParam("F_h", params["F_h"], "pointwise kernels must be 1x1")
    if kind is OpKind.DepthwiseConv2D and params["K"] != 1:
        raise InvalidParam("K", params["K"], "depthwise convolution carries K=1")


def conv_output_len(size: int, kernel: int, stride: int, pad: int) -> int:
    """Output length of a strided convolution window over a padded axis."""
    out = (size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise NonPositiveOutput(
            f"window {kernel} stride {stride} pad {pad} over {size} leaves no output"
        )
    return out


def output_shape(config: LayerConfig) -> Tuple[int, ...]:
    """Output tensor shape (channels first, batch omitted)."""
    p = config.params
    kind = config.kind
    if kind is OpKind.Conv1D:
        return (p["K"], conv_output_len(p["C_w"], p["F"], p["s"], p["pad"]))
    if kind in (OpKind.Conv2D, OpKind.PointwiseConv2D):
        out_h = conv_output_len(p["C_h"], p["F_h"], p["s"], p["pad"])
        out_w = conv_output_len(p["C_w"], p["F_w"], p["s"], p["pad"])
        return (p["K"], out_h, out_w)
    if kind is OpKind.DepthwiseConv2D:
        out_h = conv_output_len(p["C_h"], p["F_h"], p["s"], p["pad"])
        out_w = conv_output_len(p["C_w"], p["F_w"], p["s"], p["pad"])
        return (p["C"], out_h, out_w)
    if kind is OpKind.FullyConnected:
        return (p["batch"], p["out"])
    if kind in POOLING_KINDS:
        # Non-overlapping pooling: the window advances by its own size.
        out_h = p["C_h"] // p["F"]
        out_w = p["C_w"] // p["F"]
        if out_h < 1 or out_w < 1:
            raise NonPositiveOutput(
                f"pool window {p['F']} over {p['C_h']}x{p['C_w']} leaves no output"
            )
        return (p["C"], out_h, out_w)
    return (p["C"], p["C_h"], p["C_w"])


def output_size(config: LayerConfig) -> int:
    """Spatial extent of the output: positions per channel, batch*out for FC."""
    shape = output_shape(config)
    if config.kind is OpKind.FullyConnected:
        return int(math.prod(shape))
    return int(math.prod(shape[1:]))


def output_elements(config: LayerConfig) -> int:
    return int(math.prod(output_shape(config)))


def mac_count(config: LayerConfig) -> int:
    """Multiply-accumulate count of a layer, the workload proxy.

    Convolutions count one MAC per kernel tap per output position per
    channel pair; fully connected layers count batch * in * out; pooling
    and element-wise kinds count output elements.
    """
    p = config.params
    kind = config.kind
    if kind is OpKind.Conv1D:
        out_w = conv_output_len(p["C_w"], p["F"], p["s"], p["pad"])
        return p["K"] * p["C"] * p["F"] * out_w
    if kind in (OpKind.Conv2D, OpKind.PointwiseConv2D):
        out_h = conv_output_len(p["C_h"], p["F_h"], p["s"], p["pad"])
        out_w = conv_output_len(p["C_w"], p["F_w"], p["s"], p["pad"])
        return p["K"] * p["C"] * p["F_h"] * p["F_w"] * out_h * out_w
    if kind is OpKind.DepthwiseConv2D:
        out_h = conv_output_len(p["C_h"], p["F_h"], p["s"], p["pad"])
        out_w = conv_output_len(p["C_w"], p["F_w"], p["s"], p["pad"])
        return p["C"] * p["F_h"] * p["F_w"] * out_h * out_w
    if kind is OpKind.FullyConnected:
        return p["batch"] * p["in"] * p["out"]
    return output_elements(config)


class Bound(NamedTuple):
    """Inclusive integer range plus the value used when a param is held fixed."""

    min: int
    max: int
    default: int


@dataclass(frozen=True)
class ParamBounds:
    """Per-parameter ranges for one operation kind."""

    kind: OpKind
    ranges: Mapping[str, Bound]

    def __post_init__(self) -> None:
        canonical = CANONICAL_PARAMS[self.kind]
        normalized = {}
        for name in self.ranges:
            if name not in canonical:
                raise InvalidParam(name, None, f"not a parameter of {self.kind}")
        for name in canonical:
            if name not in self.ranges:
                raise InvalidParam(name, None, f"bounds missing for {self.kind}")
            b = Bound(*map(int, self.ranges[name]))
            floor = 0 if name == "pad" else 1
            if not (floor <= b.min <= b.default <= b.max):
                raise InvalidParam(
                    name, tuple(b), f"need {floor} <= min <= default <= max"
                )
            normalized[name] = b
        object.__setattr__(self, "ranges", normalized)

    def defaults(self) -> Dict[str, int]:
        return {name: b.default for name, b in self.ranges.items()}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "bounds": {
                name: {"min": b.min, "max": b.max, "default": b.default}
                for name, b in self.ranges.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ParamBounds":
        if "kind" not in doc or "bounds" not in doc:
            raise InvalidParam("bounds", dict(doc), "expected keys 'kind' and 'bounds'")
        ranges = {}
        for name, entry in doc["bounds"].items():
            ranges[name] = Bound(entry["min"], entry["max"], entry["default"])
        return cls(parse_kind(doc["kind"]), ranges)


# Fallback bounds used by the CLI when no bounds file is given.  Defaults are
# mid-range values rounded to common DNN shapes.
DEFAULT_BOUNDS: Dict[OpKind, Dict[str, Bound]] = {
    OpKind.Conv1D: {
        "C": Bound(1, 64, 16),
        "C_w": Bound(1, 128, 64),
        "K": Bound(1, 64, 16),
        "F": Bound(1, 9, 3),
        "s": Bound(1, 1, 1),
        "pad": Bound(0, 0, 0),
    },
    OpKind.Conv2D: {
        "C": Bound(1, 64, 16),
        "C_h": Bound(1, 224, 56),
        "C_w": Bound(1, 224, 56),
        "K": Bound(1, 64, 32),
        "F_h": Bound(1, 7, 3),
        "F_w": Bound(1, 7, 3),
        "s": Bound(1, 1, 1),
        "pad": Bound(0, 3, 1),
    },
    OpKind.PointwiseConv2D: {
        "C": Bound(1, 64, 16),
        "C_h": Bound(1, 224, 56),
        "C_w": Bound(1, 224, 56),
        "K": Bound(1, 64, 32),
        "F_h": Bound(1, 1, 1),
        "F_w": Bound(1, 1, 1),
        "s": Bound(1, 1, 1),
        "pad": Bound(0, 0, 0),
    },
    OpKind.DepthwiseConv2D: {
        "C": Bound(1, 64, 16),
        "C_h": Bound(1, 224, 56),
        "C_w": Bound(1, 224, 56),
        "K": Bound(1, 1, 1),
        "F_h": Bound(1, 7, 3),
        "F_w": Bound(1, 7, 3),
        "s": Bound(1, 1, 1),
        "pad": Bound(0, 3, 1),
    },
    OpKind.FullyConnected: {
        "batch": Bound(1, 8, 1),
        "in": Bound(1, 1024, 256),
        "out": Bound(1, 1024, 128),
    },
    OpKind.AvgPool2D: {
        "C": Bound(1, 64, 32),
        "C_h": Bound(1, 224, 56),
        "C_w": Bound(1, 224, 56),
        "F": Bound(1, 8, 2),
    },
    OpKind.MaxPool2D: {
        "C": Bound(1, 64, 32),
        "C_h": Bound(1, 224, 56),
        "C_w": Bound(1, 224, 56),
        "F": Bound(1, 8, 2),
    },
    OpKind.ReLU: {
        "C": Bound(1, 64, 32),
        "C_h": Bound(1, 224, 56),
        "C_w": Bound(1, 224, 56),
    },
    OpKind.Add: {
        "C": Bound(1, 64, 32),
        "C_h": Bound(1, 224, 56),
        "C_w": Bound(1, 224, 56),
    },
}


def default_bounds(kind: OpKind) -> ParamBounds:
    return ParamBounds(kind, DEFAULT_BOUNDS[kind])


@dataclass(frozen=True)
class HardwareDescription:
    """White-box accelerator description: which dims tile which parameters.

    `dims` holds the hardware tile sizes and `mapping` names the operation
    parameter each dim applies to, index for index.
    """

    operation: OpKind
    operation_params: Tuple[str, ...]
    dims: Tuple[int, ...]
    mapping: Tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "operation_params", tuple(self.operation_params))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "mapping", tuple(self.mapping))
        canonical = CANONICAL_PARAMS[self.operation]
        for name in self.operation_params:
            if name not in canonical:
                raise InvalidParam(name, None, f"not a parameter of {self.operation}")
        if len(self.dims) != len(self.mapping):
            raise MappingMismatch(
                f"{len(self.dims)} dims but {len(self.mapping)} mapped parameters"
            )
        for name in self.mapping:
            if name not in self.operation_params:
                raise InvalidParam(name, None, "mapped name not in operation_params")
        for d in self.dims:
            if d < 1:
                raise InvalidParam("dims", d, "tile sizes must be >= 1")

    def to_dict(self) -> dict:
        return {
            "operation": self.operation.value,
            "operation_params": list(self.operation_params),
            "dims": list(self.dims),
            "mapping": list(self.mapping),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "HardwareDescription":
        for key in ("operation", "operation_params", "dims", "mapping"):
            if key not in doc:
                raise InvalidParam("hardware", dict(doc), f"missing key {key!r}")
        return cls(
            parse_kind(doc["operation"]),
            tuple(doc["operation_params"]),
            tuple(doc["dims"]),
            tuple(doc["mapping"]),
        )


@dataclass
class MeasurementRecord:
    """One benchmark result: a subject, its repeats, and the aggregate."""

    subject: object  # LayerConfig or fusion.BlockInstance
    repeats: int
    raw_times: List[float]
    latency: float
    backend_id: str
    timestamp: Optional[float] = field(default=None)

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise InvalidParam("repeats", self.repeats, "must be >= 1")
        if len(self.raw_times) != self.repeats:
            raise InvalidParam(
                "raw_times", len(self.raw_times), f"expected {self.repeats} entries"
            )
        if self.latency <= 0:
            raise InvalidParam("latency", self.latency, "must be positive")


def require_kind(expected: OpKind, actual: OpKind, context: str) -> None:
    if expected is not actual:
        raise KindMismatch(f"{context}: expected {expected}, got {actual}")

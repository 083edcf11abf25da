"""Building blocks: known layer groups and block-level latency estimation.

Per-layer estimates rarely sum to the measured time of a whole block,
because runtimes overlap or fuse adjacent layers.  This module models the
two behaviors seen in practice: two functional units executing known layer
pairs concurrently (block time is the max), and a per-block fusing gain
that grows linearly with the block's operation count (block time is the
sum minus a fitted gap).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import (
    LayerConfig,
    OpKind,
    POOLING_KINDS,
    mac_count,
    output_elements,
    output_shape,
)
from .errors import (
    InsufficientData,
    InvalidParam,
    MissingEstimator,
    MissingFusingWeights,
    ShapeMismatch,
    SingularFit,
)


class BlockKind(str, Enum):
    DwSep = "DwSep"              # ReLU(PWConv(ReLU(DWConv(x))))
    ResNetPlain = "ResNetPlain"  # ReLU(Add(x, Conv1(ReLU(Conv0(x)))))
    ResNetDown = "ResNetDown"    # ReLU(Add(ConvSc(x), Conv1(ReLU(Conv0(x)))))
    PoolFc = "PoolFc"            # FullyConnected(Pool(x))

    def __str__(self) -> str:
        return self.value


# Layer kinds per block, in execution order.  Each entry is the set of
# acceptable kinds for that slot.
BLOCK_PATTERNS: Dict[BlockKind, Tuple[frozenset, ...]] = {
    BlockKind.DwSep: (
        frozenset({OpKind.DepthwiseConv2D}),
        frozenset({OpKind.ReLU}),
        frozenset({OpKind.PointwiseConv2D}),
        frozenset({OpKind.ReLU}),
    ),
    BlockKind.ResNetPlain: (
        frozenset({OpKind.Conv2D}),
        frozenset({OpKind.ReLU}),
        frozenset({OpKind.Conv2D}),
        frozenset({OpKind.Add}),
        frozenset({OpKind.ReLU}),
    ),
    BlockKind.ResNetDown: (
        frozenset({OpKind.Conv2D}),
        frozenset({OpKind.ReLU}),
        frozenset({OpKind.Conv2D}),
        frozenset({OpKind.Conv2D}),  # shortcut projection
        frozenset({OpKind.Add}),
        frozenset({OpKind.ReLU}),
    ),
    BlockKind.PoolFc: (
        frozenset(POOLING_KINDS),
        frozenset({OpKind.FullyConnected}),
    ),
}


def _input_shape(config: LayerConfig) -> Tuple[int, ...]:
    p = config.params
    if config.kind is OpKind.Conv1D:
        return (p["C"], p["C_w"])
    if config.kind is OpKind.FullyConnected:
        return (p["in"],)
    return (p["C"], p["C_h"], p["C_w"])


def _expect(produced: Tuple[int, ...], consumer: LayerConfig, where: str) -> None:
    expected = _input_shape(consumer)
    if consumer.kind is OpKind.FullyConnected:
        if int(np.prod(produced)) != expected[0]:
            raise ShapeMismatch(
                f"{where}: {consumer.kind} wants {expected[0]} inputs, "
                f"producer yields {int(np.prod(produced))}"
            )
        return
    if produced != expected:
        raise ShapeMismatch(
            f"{where}: producer yields {produced}, {consumer.kind} wants {expected}"
        )


@dataclass(frozen=True)
class BlockInstance:
    """A concrete block: its kind and the layers filling the pattern slots."""

    kind: BlockKind
    layers: Tuple[LayerConfig, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        pattern = BLOCK_PATTERNS[self.kind]
        if len(self.layers) != len(pattern):
            raise InvalidParam(
                "layers", len(self.layers),
                f"{self.kind} takes {len(pattern)} layers",
            )
        for slot, (layer, allowed) in enumerate(zip(self.layers, pattern)):
            if layer.kind not in allowed:
                raise InvalidParam(
                    "layers", layer.kind.value,
                    f"slot {slot} of {self.kind} expects {sorted(k.value for k in allowed)}",
                )
        self._validate_shapes()

    def _validate_shapes(self) -> None:
        L = self.layers
        name = self.kind.value
        if self.kind is BlockKind.DwSep:
            _expect(output_shape(L[0]), L[1], name)
            _expect(output_shape(L[1]), L[2], name)
            _expect(output_shape(L[2]), L[3], name)
        elif self.kind is BlockKind.ResNetPlain:
            conv0, relu_a, conv1, add, relu_out = L
            residual = _input_shape(conv0)
            _expect(output_shape(conv0), relu_a, name)
            _expect(output_shape(relu_a), conv1, name)
            _expect(output_shape(conv1), add, name)
            _expect(residual, add, name + " (residual)")
            _expect(output_shape(add), relu_out, name)
        elif self.kind is BlockKind.ResNetDown:
            conv0, relu_a, conv1, conv_sc, add, relu_out = L
            residual = _input_shape(conv0)
            if _input_shape(conv_sc) != residual:
                raise ShapeMismatch(
                    f"{name}: shortcut reads {_input_shape(conv_sc)}, trunk reads {residual}"
                )
            _expect(output_shape(conv0), relu_a, name)
            _expect(output_shape(relu_a), conv1, name)
            _expect(output_shape(conv1), add, name)
            _expect(output_shape(conv_sc), add, name + " (shortcut)")
            _expect(output_shape(add), relu_out, name)
        elif self.kind is BlockKind.PoolFc:
            _expect(output_shape(L[0]), L[1], name)


def block_ops(block: BlockInstance) -> int:
    """Operation count of a block: MACs summed over its non-ReLU layers."""
    return sum(mac_count(l) for l in block.layers if l.kind is not OpKind.ReLU)


@dataclass(frozen=True)
class FusingFactorModel:
    """Per block kind, the fitted linear gap: gap = weight * ops + offset."""

    weights: Mapping[BlockKind, Tuple[float, float]]

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "weights",
            {BlockKind(k): (float(w), float(c)) for k, (w, c) in self.weights.items()},
        )

    def gap_seconds(self, kind: BlockKind, ops: int) -> float:
        if kind not in self.weights:
            raise MissingFusingWeights(f"no fusing weights for {kind}")
        w, c = self.weights[kind]
        return w * ops + c


PROFILE_MODES = ("parallel_fu", "fusing_factor", "plain_sum")


@dataclass(frozen=True)
class PlatformProfile:
    """How a platform composes layer times into block times.

    parallel_fu: blocks named in parallel_pairs take the max per-layer
    estimate, everything else the sum.  fusing_factor: sum minus a fitted
    linear gap, floored at the largest per-layer estimate.  plain_sum:
    the sum.  relu_fused drops ReLU layers from every mode.
    """

    mode: str
    parallel_pairs: frozenset = frozenset()
    relu_fused: bool = True
    fusing: Optional[FusingFactorModel] = None

    def __post_init__(self) -> None:
        if self.mode not in PROFILE_MODES:
            raise InvalidParam("mode", self.mode, f"one of {PROFILE_MODES}")
        object.__setattr__(
            self,
            "parallel_pairs",
            frozenset(BlockKind(p) for p in self.parallel_pairs),
        )
        if self.mode == "fusing_factor" and self.fusing is None:
            raise MissingFusingWeights("fusing_factor profile carries no weights")

    def to_dict(self) -> dict:
        doc: dict = {"mode": self.mode, "relu_fused": self.relu_fused}
        if self.mode == "parallel_fu":
            doc["parallel_pairs"] = sorted(p.value for p in self.parallel_pairs)
        if self.fusing is not None:
            doc["fusing"] = {
                k.value: {"w": w, "c": c} for k, (w, c) in self.fusing.weights.items()
            }
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PlatformProfile":
        fusing = None
        if "fusing" in doc:
            fusing = FusingFactorModel(
                {BlockKind(k): (v["w"], v["c"]) for k, v in doc["fusing"].items()}
            )
        return cls(
            mode=doc.get("mode", "plain_sum"),
            parallel_pairs=frozenset(
                BlockKind(p) for p in doc.get("parallel_pairs", [])
            ),
            relu_fused=bool(doc.get("relu_fused", True)),
            fusing=fusing,
        )


LayerEstimators = Mapping[OpKind, Callable[[LayerConfig], float]]


def _layer_estimates(
    block: BlockInstance, estimators: LayerEstimators, relu_fused: bool
) -> List[float]:
    estimates = []
    for layer in block.layers:
        if relu_fused and layer.kind is OpKind.ReLU:
            continue
        if layer.kind not in estimators:
            raise MissingEstimator(f"no estimator for {layer.kind}")
        estimates.append(float(estimators[layer.kind](layer)))
    return estimates


def estimate_block(
    block: BlockInstance, estimators: LayerEstimators, profile: PlatformProfile
) -> float:
    """Block latency estimate in seconds under the platform's composition rule."""
    estimates = _layer_estimates(block, estimators, profile.relu_fused)
    if not estimates:
        return 0.0
    total = sum(estimates)
    if profile.mode == "parallel_fu" and block.kind in profile.parallel_pairs:
        return max(estimates)
    if profile.mode == "fusing_factor":
        if profile.fusing is None:
            raise MissingFusingWeights("fusing_factor profile carries no weights")
        gap = profile.fusing.gap_seconds(block.kind, block_ops(block))
        # fusing can never push the block below its slowest layer
        return max(total - gap, max(estimates))
    return total


def fit_fusing_factor(
    measurements: Sequence[Tuple[BlockInstance, float, float]]
) -> FusingFactorModel:
    """Fit per-kind linear gap models from (block, measured, estimate-sum) triples.

    The gap of one measurement is the estimate sum minus the measured block
    time; it is regressed against the block's operation count by ordinary
    least squares.
    """
    rows: Dict[BlockKind, List[Tuple[int, float]]] = {}
    for block, measured, est_sum in measurements:
        rows.setdefault(block.kind, []).append(
            (block_ops(block), float(est_sum) - float(measured))
        )
    return fit_fusing_factor_rows(rows)


def fit_fusing_factor_rows(
    rows: Mapping[BlockKind, Sequence[Tuple[int, float]]]
) -> FusingFactorModel:
    """Fit gap = weight * ops + offset per block kind from (ops, gap) pairs."""
    weights: Dict[BlockKind, Tuple[float, float]] = {}
    for kind, pairs in rows.items():
        if len(pairs) < 2:
            raise InsufficientData(
                f"{kind}: need at least 2 block measurements, got {len(pairs)}"
            )
        ops = np.asarray([p[0] for p in pairs], dtype=float)
        gaps = np.asarray([p[1] for p in pairs], dtype=float)
        if np.all(ops == ops[0]):
            raise SingularFit(f"{kind}: all blocks have the same operation count")
        if np.all(gaps == 0.0):
            weights[BlockKind(kind)] = (0.0, 0.0)
            continue
        if len(pairs) == 2:
            # Two points determine the line; solve directly so noiseless
            # calibration runs reproduce planted factors without fit noise.
            w = (gaps[1] - gaps[0]) / (ops[1] - ops[0])
            c = gaps[0] - w * ops[0]
        else:
            w, c = np.polyfit(ops, gaps, deg=1)
        weights[BlockKind(kind)] = (float(w), float(c))
    return FusingFactorModel(weights)

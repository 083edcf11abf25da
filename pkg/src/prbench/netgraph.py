"""Whole-network composition: graph loading, block matching, estimation.

A network is a DAG of layers.  Known block patterns are matched greedily
in topological order (larger patterns first) and estimated with the
platform's composition rule; everything unmatched is a residual layer
estimated on its own.  The network estimate is the sum over blocks and
residuals.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import LayerConfig, OpKind, POOLING_KINDS, output_shape
from .errors import CycleDetected, MissingEstimator, ParseError, ShapeMismatch
from .forest import LatencyModel, estimate_layer
from .fusion import (
    BlockInstance,
    BlockKind,
    PlatformProfile,
    _input_shape,
    estimate_block,
)

# matching priority: most specific pattern first
MATCH_PRIORITY = (
    BlockKind.ResNetDown,
    BlockKind.ResNetPlain,
    BlockKind.DwSep,
    BlockKind.PoolFc,
)


@dataclass(frozen=True)
class NetworkGraph:
    """Validated DAG of named layers."""

    nodes: Mapping[str, LayerConfig]
    edges: Tuple[Tuple[str, str], ...]
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    order: Tuple[str, ...] = field(init=False)  # topological, ids break ties

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "edges", tuple((str(a), str(b)) for a, b in self.edges))
        object.__setattr__(self, "inputs", tuple(str(i) for i in self.inputs))
        object.__setattr__(self, "outputs", tuple(str(o) for o in self.outputs))
        self._validate_structure()
        object.__setattr__(self, "order", self._topological_order())
        self._validate_reachability()
        self._validate_shapes()

    # -- structure ----------------------------------------------------------

    def _validate_structure(self) -> None:
        for a, b in self.edges:
            for end in (a, b):
                if end not in self.nodes:
                    raise ParseError(f"edge {a!r}->{b!r} references unknown node {end!r}")
        if len(set(self.edges)) != len(self.edges):
            raise ParseError("duplicate edges")
        for name in self.inputs + self.outputs:
            if name not in self.nodes:
                raise ParseError(f"input/output {name!r} is not a node")
        incoming = {n: 0 for n in self.nodes}
        for _, b in self.edges:
            incoming[b] += 1
        for name in self.inputs:
            if incoming[name] != 0:
                raise ParseError(f"declared input {name!r} has incoming edges")
        if self.nodes and not self.inputs:
            raise ParseError("graph declares no inputs")

    def _topological_order(self) -> Tuple[str, ...]:
        indeg = {n: 0 for n in self.nodes}
        succ: Dict[str, List[str]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            indeg[b] += 1
            succ[a].append(b)
        ready = sorted(n for n, d in indeg.items() if d == 0)
        heapq.heapify(ready)
        order: List[str] = []
        while ready:
            n = heapq.heappop(ready)
            order.append(n)
            for m in succ[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    heapq.heappush(ready, m)
        if len(order) != len(self.nodes):
            stuck = sorted(n for n, d in indeg.items() if d > 0)
            raise CycleDetected(f"cycle through {stuck[:5]}")
        return tuple(order)

    def _validate_reachability(self) -> None:
        seen = set(self.inputs)
        frontier = list(self.inputs)
        succ = self.successors()
        while frontier:
            n = frontier.pop()
            for m in succ[n]:
                if m not in seen:
                    seen.add(m)
                    frontier.append(m)
        unreachable = sorted(set(self.nodes) - seen)
        if unreachable:
            raise ParseError(f"nodes unreachable from inputs: {unreachable[:5]}")

    def _validate_shapes(self) -> None:
        preds = self.predecessors()
        for name in self.order:
            config = self.nodes[name]
            sources = preds[name]
            if not sources:
                continue
            produced = [output_shape(self.nodes[p]) for p in sources]
            if config.kind is OpKind.Add:
                if len(sources) != 2:
                    raise ShapeMismatch(f"{name}: Add needs exactly 2 inputs, has {len(sources)}")
            elif len(sources) != 1:
                raise ShapeMismatch(
                    f"{name}: {config.kind} takes one input, has {len(sources)}"
                )
            expected = _input_shape(config)
            for p, shape in zip(sources, produced):
                if config.kind is OpKind.FullyConnected:
                    if int(np.prod(shape)) != expected[0]:
                        raise ShapeMismatch(
                            f"edge {p!r}->{name!r}: {int(np.prod(shape))} elements "
                            f"feed a {expected[0]}-input layer"
                        )
                elif shape != expected:
                    raise ShapeMismatch(
                        f"edge {p!r}->{name!r}: produces {shape}, consumer wants {expected}"
                    )

    # -- queries ------------------------------------------------------------

    def successors(self) -> Dict[str, List[str]]:
        succ: Dict[str, List[str]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            succ[a].append(b)
        return {n: sorted(v) for n, v in succ.items()}

    def predecessors(self) -> Dict[str, List[str]]:
        pred: Dict[str, List[str]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            pred[b].append(a)
        return {n: sorted(v) for n, v in pred.items()}

    def to_dict(self) -> dict:
        return {
            "nodes": {n: c.to_dict() for n, c in self.nodes.items()},
            "edges": [list(e) for e in self.edges],
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
        }


def load_network(doc: Mapping) -> NetworkGraph:
    """Build and validate a graph from its JSON document."""
    if not isinstance(doc, Mapping):
        raise ParseError("network document must be an object")
    for key in ("nodes", "edges", "inputs", "outputs"):
        if key not in doc:
            raise ParseError(f"network document missing key {key!r}")
    try:
        nodes = {str(n): LayerConfig.from_dict(c) for n, c in doc["nodes"].items()}
        edges = tuple((str(a), str(b)) for a, b in doc["edges"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ParseError(f"malformed network document: {exc}") from exc
    return NetworkGraph(
        nodes=nodes,
        edges=edges,
        inputs=tuple(doc["inputs"]),
        outputs=tuple(doc["outputs"]),
    )


@dataclass(frozen=True)
class MatchedBlock:
    kind: BlockKind
    node_ids: Tuple[str, ...]

    def instance(self, graph: NetworkGraph) -> BlockInstance:
        return BlockInstance(self.kind, tuple(graph.nodes[n] for n in self.node_ids))


@dataclass(frozen=True)
class Decomposition:
    """Blocks plus residual layers; together they cover every node once."""

    blocks: Tuple[MatchedBlock, ...]
    residual_layers: Tuple[str, ...]


def _match_at(
    graph: NetworkGraph,
    root: str,
    kind: BlockKind,
    succ: Mapping[str, List[str]],
    pred: Mapping[str, List[str]],
    used: set,
) -> Optional[Tuple[str, ...]]:
    """Node ids filling `kind` rooted at `root`, or None.

    Interior pattern nodes must have exactly one consumer (the next pattern
    node); otherwise part of the block's work would escape the block.
    """
    nodes = graph.nodes

    def is_kind(n: str, kinds) -> bool:
        return n not in used and nodes[n].kind in kinds

    def sole_succ(n: str) -> Optional[str]:
        return succ[n][0] if len(succ[n]) == 1 else None

    if kind is BlockKind.DwSep:
        if not is_kind(root, {OpKind.DepthwiseConv2D}):
            return None
        relu_a = sole_succ(root)
        if relu_a is None or not is_kind(relu_a, {OpKind.ReLU}):
            return None
        pw = sole_succ(relu_a)
        if pw is None or not is_kind(pw, {OpKind.PointwiseConv2D}):
            return None
        relu_b = sole_succ(pw)
        if relu_b is None or not is_kind(relu_b, {OpKind.ReLU}):
            return None
        return (root, relu_a, pw, relu_b)

    if kind in (BlockKind.ResNetPlain, BlockKind.ResNetDown):
        if not is_kind(root, {OpKind.Conv2D}):
            return None
        if len(pred[root]) != 1:
            return None
        trunk_in = pred[root][0]
        relu_a = sole_succ(root)
        if relu_a is None or not is_kind(relu_a, {OpKind.ReLU}):
            return None
        conv1 = sole_succ(relu_a)
        if conv1 is None or not is_kind(conv1, {OpKind.Conv2D}):
            return None
        add = sole_succ(conv1)
        if add is None or not is_kind(add, {OpKind.Add}):
            return None
        others = [p for p in pred[add] if p != conv1]
        if len(pred[add]) != 2 or len(others) != 1:
            return None
        other = others[0]
        relu_out = sole_succ(add)
        if relu_out is None or not is_kind(relu_out, {OpKind.ReLU}):
            return None
        if kind is BlockKind.ResNetPlain:
            if other != trunk_in:
                return None
            return (root, relu_a, conv1, add, relu_out)
        # downsampling variant: the other Add input is a projection of the trunk input
        if not is_kind(other, {OpKind.Conv2D}):
            return None
        if pred[other] != [trunk_in] or sole_succ(other) != add:
            return None
        return (root, relu_a, conv1, other, add, relu_out)

    if kind is BlockKind.PoolFc:
        if not is_kind(root, POOLING_KINDS):
            return None
        fc = sole_succ(root)
        if fc is None or not is_kind(fc, {OpKind.FullyConnected}):
            return None
        return (root, fc)

    return None


def match_blocks(graph: NetworkGraph) -> Decomposition:
    """Greedy pattern matching over the topological order.

    At each unclaimed node the patterns are tried most-specific first
    (ResNetDown, ResNetPlain, DwSep, PoolFc); a match claims all its nodes.
    The result is deterministic: ties in the topological order fall back to
    the smallest node id.
    """
    succ = graph.successors()
    pred = graph.predecessors()
    used: set = set()
    blocks: List[MatchedBlock] = []
    for node in graph.order:
        if node in used:
            continue
        for kind in MATCH_PRIORITY:
            ids = _match_at(graph, node, kind, succ, pred, used)
            if ids is not None:
                block = MatchedBlock(kind, ids)
                block.instance(graph)  # shape-check the candidate
                blocks.append(block)
                used.update(ids)
                break
    residual = tuple(n for n in graph.order if n not in used)
    return Decomposition(blocks=tuple(blocks), residual_layers=residual)


@dataclass(frozen=True)
class NetworkEstimate:
    total_seconds: float
    blocks: Tuple[Tuple[MatchedBlock, float], ...]
    residuals: Tuple[Tuple[str, float], ...]

    def to_dict(self) -> dict:
        return {
            "total_s": self.total_seconds,
            "blocks": [
                {"kind": b.kind.value, "nodes": list(b.node_ids), "seconds": s}
                for b, s in self.blocks
            ],
            "residual": [{"node": n, "seconds": s} for n, s in self.residuals],
        }


def estimators_from_models(
    models: Mapping[OpKind, LatencyModel]
) -> Dict[OpKind, Callable[[LayerConfig], float]]:
    return {
        kind: (lambda c, m=model: estimate_layer(m, c)) for kind, model in models.items()
    }


def estimate_network(
    graph: NetworkGraph,
    models: Mapping[OpKind, LatencyModel],
    profile: PlatformProfile,
) -> NetworkEstimate:
    """Network latency: blocks composed by the profile plus residual layers.

    Residual ReLU layers cost nothing when the profile fuses them; every
    other residual kind needs a model.  The reported total is exactly the
    sum of the reported parts.
    """
    decomposition = match_blocks(graph)
    estimators = estimators_from_models(models)
    block_parts: List[Tuple[MatchedBlock, float]] = []
    for matched in decomposition.blocks:
        seconds = estimate_block(matched.instance(graph), estimators, profile)
        block_parts.append((matched, seconds))
    residual_parts: List[Tuple[str, float]] = []
    for node in decomposition.residual_layers:
        config = graph.nodes[node]
        if config.kind is OpKind.ReLU and profile.relu_fused:
            residual_parts.append((node, 0.0))
            continue
        if config.kind not in estimators:
            raise MissingEstimator(f"no estimator for residual {config.kind} at {node!r}")
        residual_parts.append((node, float(estimators[config.kind](config))))
    total = sum(s for _, s in block_parts) + sum(s for _, s in residual_parts)
    return NetworkEstimate(
        total_seconds=total,
        blocks=tuple(block_parts),
        residuals=tuple(residual_parts),
    )

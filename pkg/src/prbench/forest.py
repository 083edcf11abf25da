"""Random-forest latency regression, built from scratch.

Trees are CART regressors: axis-aligned splits chosen to minimize the
summed squared error of the two children, thresholds taken as midpoints
between consecutive sorted feature values, leaves predicting the mean
target.  Determinism is part of the contract: equal inputs and seed give
bit-identical serialized models, so tie-breaking (lowest feature index,
then lowest threshold) and per-tree seed derivation are fixed here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import (
    CANONICAL_PARAMS,
    Bound,
    LayerConfig,
    OpKind,
    ParamBounds,
    mac_count,
    output_size,
    parse_kind,
)
from .errors import (
    CorruptModel,
    EncodingVersionMismatch,
    InsufficientData,
    InvalidParam,
    KindMismatch,
    VersionMismatch,
)
from .prset import PrLattice, map_to_pr

ENCODING_VERSION = "1"
MODEL_FORMAT_VERSION = "1"


def feature_names(kind: OpKind) -> Tuple[str, ...]:
    """Feature order: canonical parameters, then the two derived workload
    features (MAC count and output spatial size)."""
    return CANONICAL_PARAMS[kind] + ("mac_count", "out_size")


def encode_features(config: LayerConfig) -> np.ndarray:
    params = [float(config.params[name]) for name in CANONICAL_PARAMS[config.kind]]
    return np.asarray(
        params + [float(mac_count(config)), float(output_size(config))], dtype=float
    )


@dataclass(frozen=True)
class ForestHyperparams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1
    feature_subsample: float = 1.0 / 3.0
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise InvalidParam("n_trees", self.n_trees, "must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise InvalidParam("max_depth", self.max_depth, "must be >= 1 or None")
        if self.min_samples_leaf < 1:
            raise InvalidParam("min_samples_leaf", self.min_samples_leaf, "must be >= 1")
        if not (0 < self.feature_subsample <= 1):
            raise InvalidParam("feature_subsample", self.feature_subsample, "must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "feature_subsample": self.feature_subsample,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ForestHyperparams":
        return cls(**{k: doc[k] for k in cls().to_dict() if k in doc})


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    features: Sequence[int],
    min_leaf: int,
) -> Optional[Tuple[int, float, np.ndarray]]:
    """Best (feature, threshold, left mask) over the given features, or None.

    "Best" minimizes total child SSE; the first feature (lowest index) and
    the first threshold (lowest value) win exact ties because comparisons
    are strict.
    """
    n = y.size
    best_sse = np.inf
    best: Optional[Tuple[int, float]] = None
    for f in features:
        xv = X[:, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        ys = y[order]
        cuts = np.nonzero(xs[1:] > xs[:-1])[0] + 1  # left sizes with distinct values
        cuts = cuts[(cuts >= min_leaf) & (cuts <= n - min_leaf)]
        if cuts.size == 0:
            continue
        s1 = np.cumsum(ys)
        s2 = np.cumsum(ys * ys)
        left1, left2 = s1[cuts - 1], s2[cuts - 1]
        right1, right2 = s1[-1] - left1, s2[-1] - left2
        sse = (left2 - left1 * left1 / cuts) + (
            right2 - right1 * right1 / (n - cuts)
        )
        sse = np.maximum(sse, 0.0)
        i = int(np.argmin(sse))  # first minimum: lowest threshold
        if sse[i] < best_sse:
            best_sse = float(sse[i])
            k = cuts[i]
            best = (f, float((xs[k - 1] + xs[k]) / 2.0))
    if best is None:
        return None
    f, threshold = best
    return f, threshold, X[:, f] <= threshold


def _build_tree(
    X: np.ndarray, y: np.ndarray, hp: ForestHyperparams, rng: np.random.Generator
) -> List[dict]:
    d = X.shape[1]
    k = max(1, int(round(hp.feature_subsample * d)))
    nodes: List[dict] = []
    # explicit stack, preorder allocation: (indices, depth, parent id, side)
    stack = [(np.arange(X.shape[0]), 0, -1, "")]
    while stack:
        idx, depth, parent, side = stack.pop()
        node_id = len(nodes)
        nodes.append({})
        if parent >= 0:
            nodes[parent][side] = node_id
        yn = y[idx]
        done = (
            idx.size < 2 * hp.min_samples_leaf
            or idx.size < 2
            or (hp.max_depth is not None and depth >= hp.max_depth)
            or np.all(yn == yn[0])
        )
        split = None
        if not done:
            Xn = X[idx]
            features = np.sort(rng.choice(d, size=k, replace=False))
            split = _best_split(Xn, yn, features.tolist(), hp.min_samples_leaf)
            if split is None and k < d:
                # the drawn subset was constant on this node; widen so that
                # any distinguishing feature can still split
                split = _best_split(Xn, yn, range(d), hp.min_samples_leaf)
        if split is None:
            # constant targets keep their exact value, no mean rounding
            value = yn[0] if np.all(yn == yn[0]) else yn.mean()
            nodes[node_id] = {"value": float(value)}
            continue
        f, threshold, left_mask = split
        nodes[node_id] = {"feature": int(f), "threshold": float(threshold)}
        stack.append((idx[~left_mask], depth + 1, node_id, "right"))
        stack.append((idx[left_mask], depth + 1, node_id, "left"))
    return nodes


def _tree_predict(nodes: Sequence[dict], x: np.ndarray) -> float:
    node = nodes[0]
    while "value" not in node:
        node = nodes[node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]]
    return node["value"]


@dataclass
class LatencyModel:
    """A trained per-kind forest plus everything needed to apply it:
    the step widths and bounds that define its representative lattice."""

    kind: OpKind
    widths: Dict[str, int]
    bounds: ParamBounds
    hyperparams: ForestHyperparams
    trees: List[List[dict]]
    n_samples: int
    encoding_version: str = ENCODING_VERSION

    @property
    def lattice(self) -> PrLattice:
        return PrLattice(self.kind, self.widths, self.bounds)


def _bounds_from_samples(
    kind: OpKind, configs: Sequence[LayerConfig]
) -> ParamBounds:
    ranges = {}
    for name in CANONICAL_PARAMS[kind]:
        values = [c.params[name] for c in configs]
        lo, hi = min(values), max(values)
        ranges[name] = Bound(lo, hi, int(np.clip(int(np.median(values)), lo, hi)))
    return ParamBounds(kind, ranges)


def fit(
    samples: Sequence[Tuple[LayerConfig, float]],
    hyperparams: ForestHyperparams = ForestHyperparams(),
    widths: Optional[Mapping[str, int]] = None,
    bounds: Optional[ParamBounds] = None,
) -> LatencyModel:
    """Train a forest on (config, seconds) pairs.

    `widths` defaults to all ones (no representative mapping at estimation
    time); `bounds` defaults to the ranges spanned by the training configs.
    """
    if len(samples) < 2:
        raise InsufficientData(f"need at least 2 samples, got {len(samples)}")
    configs = [c for c, _ in samples]
    targets = np.asarray([t for _, t in samples], dtype=float)
    kind = configs[0].kind
    for c in configs[1:]:
        if c.kind is not kind:
            raise KindMismatch(f"mixed kinds in training data: {kind} and {c.kind}")
    if np.any(targets <= 0):
        raise InsufficientData("latencies must be positive")
    X = np.stack([encode_features(c) for c in configs])
    widths = {name: 1 for name in CANONICAL_PARAMS[kind]} | dict(widths or {})
    if bounds is None:
        bounds = _bounds_from_samples(kind, configs)
    seeds = np.random.SeedSequence(hyperparams.seed).spawn(hyperparams.n_trees)
    trees = []
    n = X.shape[0]
    for t in range(hyperparams.n_trees):
        rng = np.random.default_rng(seeds[t])
        if hyperparams.bootstrap:
            idx = rng.integers(0, n, size=n)
            Xt, yt = X[idx], targets[idx]
        else:
            Xt, yt = X, targets
        trees.append(_build_tree(Xt, yt, hyperparams, rng))
    return LatencyModel(
        kind=kind,
        widths=widths,
        bounds=bounds,
        hyperparams=hyperparams,
        trees=trees,
        n_samples=n,
    )


def predict(model: LatencyModel, config: LayerConfig) -> float:
    """Mean of the per-tree predictions for one config, as-is (no mapping)."""
    if model.encoding_version != ENCODING_VERSION:
        raise EncodingVersionMismatch(
            f"model encodes features as v{model.encoding_version}, "
            f"this build reads v{ENCODING_VERSION}"
        )
    if config.kind is not model.kind:
        raise KindMismatch(f"model is for {model.kind}, config is {config.kind}")
    x = encode_features(config)
    return float(np.mean([_tree_predict(nodes, x) for nodes in model.trees]))


def estimate_layer(model: LatencyModel, config: LayerConfig) -> float:
    """Latency estimate for a config: predict at its performance
    representative on the model's lattice."""
    return predict(model, map_to_pr(config, model.lattice))


def serialize(model: LatencyModel) -> bytes:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "encoding_version": model.encoding_version,
        "kind": model.kind.value,
        "widths": model.widths,
        "bounds": model.bounds.to_dict(),
        "hyperparams": model.hyperparams.to_dict(),
        "meta": {"n_samples": model.n_samples},
        "trees": [{"nodes": nodes} for nodes in model.trees],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _check_nodes(nodes: List[dict]) -> None:
    if not nodes:
        raise CorruptModel("tree with no nodes")
    for node in nodes:
        if "value" in node:
            continue
        for key in ("feature", "threshold", "left", "right"):
            if key not in node:
                raise CorruptModel(f"internal node missing {key!r}")
        if not (0 <= node["left"] < len(nodes) and 0 <= node["right"] < len(nodes)):
            raise CorruptModel("child index out of range")


def deserialize(blob: bytes) -> LatencyModel:
    try:
        doc = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModel(f"not a model file: {exc}") from exc
    if not isinstance(doc, dict):
        raise CorruptModel("model document must be an object")
    version = str(doc.get("format_version", ""))
    if version.split(".")[0] != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"model format {version!r} not readable by format {MODEL_FORMAT_VERSION}"
        )
    try:
        kind = parse_kind(doc["kind"])
        trees = [tree["nodes"] for tree in doc["trees"]]
        for nodes in trees:
            _check_nodes(nodes)
        model = LatencyModel(
            kind=kind,
            widths={k: int(v) for k, v in doc["widths"].items()},
            bounds=ParamBounds.from_dict(doc["bounds"]),
            hyperparams=ForestHyperparams.from_dict(doc["hyperparams"]),
            trees=trees,
            n_samples=int(doc["meta"]["n_samples"]),
            encoding_version=str(doc["encoding_version"]),
        )
    except VersionMismatch:
        raise
    except CorruptModel:
        raise
    except Exception as exc:
        raise CorruptModel(f"malformed model document: {exc}") from exc
    return model

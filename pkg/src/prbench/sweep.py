"""Single-parameter benchmark sweeps feeding step-width detection."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .domain import CANONICAL_PARAMS, LayerConfig, OpKind, ParamBounds, parse_kind
from .errors import BackendFailure, EmptyRange, InvalidParam

MIN_SWEEP_POINTS = 8


@dataclass(frozen=True)
class SweepPlan:
    """One swept parameter over explicit values, all others held fixed."""

    kind: OpKind
    swept_param: str
    values: Tuple[int, ...]
    fixed: Mapping[str, int]

    def __post_init__(self) -> None:
        canonical = CANONICAL_PARAMS[self.kind]
        if self.swept_param not in canonical:
            raise InvalidParam(self.swept_param, None, f"not a parameter of {self.kind}")
        values = tuple(int(v) for v in self.values)
        if len(values) < MIN_SWEEP_POINTS:
            raise EmptyRange(
                f"sweep over {self.swept_param!r} has {len(values)} points, "
                f"need at least {MIN_SWEEP_POINTS}"
            )
        if any(b <= a for a, b in zip(values, values[1:])):
            raise InvalidParam(self.swept_param, values, "values must strictly increase")
        object.__setattr__(self, "values", values)
        fixed = {name: int(v) for name, v in self.fixed.items()}
        if self.swept_param in fixed:
            raise InvalidParam(self.swept_param, None, "cannot be swept and fixed")
        expected = set(canonical) - {self.swept_param}
        if set(fixed) != expected:
            missing = sorted(expected - set(fixed))
            extra = sorted(set(fixed) - expected)
            raise InvalidParam(
                "fixed", None, f"missing {missing}, unexpected {extra}"
            )
        object.__setattr__(self, "fixed", fixed)
        # every point must be a valid config
        self.config_at(values[0])

    def config_at(self, value: int) -> LayerConfig:
        params = dict(self.fixed)
        params[self.swept_param] = int(value)
        return LayerConfig(self.kind, params)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "swept_param": self.swept_param,
            "values": list(self.values),
            "fixed": dict(self.fixed),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SweepPlan":
        return cls(
            parse_kind(doc["kind"]),
            doc["swept_param"],
            tuple(doc["values"]),
            dict(doc["fixed"]),
        )


@dataclass(frozen=True)
class SweepResult:
    """Measured latencies over a sweep: ys[i] belongs to xs[i]."""

    plan: SweepPlan
    xs: Tuple[int, ...]
    ys: Tuple[float, ...]

    def __post_init__(self) -> None:
        xs = tuple(int(x) for x in self.xs)
        ys = tuple(float(y) for y in self.ys)
        if len(xs) != len(ys):
            raise InvalidParam("ys", len(ys), f"expected {len(xs)} values")
        if xs != self.plan.values:
            raise InvalidParam("xs", xs, "must equal the plan's values")
        if any(y <= 0 for y in ys):
            raise InvalidParam("ys", min(ys), "latencies must be positive")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "xs": list(self.xs), "ys": list(self.ys)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SweepResult":
        return cls(
            SweepPlan.from_dict(doc["plan"]), tuple(doc["xs"]), tuple(doc["ys"])
        )


def plan_sweeps(
    kind: OpKind,
    bounds: ParamBounds,
    swept_params: Sequence[str],
    stride: int = 1,
) -> List[SweepPlan]:
    """One plan per swept parameter; values span its bounds at the stride,
    the remaining parameters sit at their bound defaults."""
    if stride < 1:
        raise InvalidParam("stride", stride, "must be >= 1")
    canonical = CANONICAL_PARAMS[kind]
    for name in swept_params:
        if name not in canonical:
            raise InvalidParam(name, None, f"not a parameter of {kind}")
    defaults = bounds.defaults()
    plans = []
    for name in canonical:  # deterministic order
        if name not in swept_params:
            continue
        b = bounds.ranges[name]
        values = tuple(range(b.min, b.max + 1, stride))
        fixed = {k: v for k, v in defaults.items() if k != name}
        plans.append(SweepPlan(kind, name, values, fixed))
    return plans


def run_sweep(
    plan: SweepPlan,
    backend,
    repeats: int = 1,
    max_workers: Optional[int] = None,
) -> SweepResult:
    """Measure every point of the plan, in order.

    Points run concurrently only when the backend declares parallel_ok and
    max_workers allows it; results keep sweep order either way.  A backend
    failure is re-raised with the failing swept value attached.
    """
    configs = [plan.config_at(v) for v in plan.values]

    def one(i: int) -> float:
        try:
            return backend.measure(configs[i], repeats=repeats).latency
        except BackendFailure as exc:
            raise BackendFailure(
                f"{plan.swept_param}={plan.values[i]} (point {i}): {exc}"
            ) from exc

    if max_workers and max_workers > 1 and getattr(backend, "parallel_ok", False):
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            ys = list(pool.map(one, range(len(configs))))
    else:
        ys = [one(i) for i in range(len(configs))]
    return SweepResult(plan=plan, xs=plan.values, ys=tuple(ys))

"""Performance representatives: mapping configs onto the benchmark lattice.

A parameter with step width w only changes latency at multiples of w, so
one benchmarked point represents every config on the same step.  The
representative of a config rounds each stepped parameter up to the next
multiple of its width (the last, fully utilized point on the step).  The
lattice of all representatives is what gets sampled for training data.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import CANONICAL_PARAMS, HardwareDescription, LayerConfig, OpKind, ParamBounds
from .errors import EmptyRange, InvalidParam, KindMismatch, LatticeTooSmall

log = logging.getLogger(__name__)

# Materializing the whole lattice is fine up to this many members; beyond it
# sampling falls back to rejection, which only needs the member count.
_MATERIALIZE_CAP = 200_000


@dataclass(frozen=True)
class Constraint:
    """A named predicate over a declared subset of parameters.

    Declaring the touched parameters keeps counting exact without
    enumerating the full lattice: untouched parameters factor out.
    """

    name: str
    params: Tuple[str, ...]
    fn: Callable[[Mapping[str, int]], bool]

    def __call__(self, params: Mapping[str, int]) -> bool:
        return self.fn(params)


CONSTRAINT_REGISTRY: Dict[str, Constraint] = {
    "square_kernel": Constraint(
        "square_kernel", ("F_h", "F_w"), lambda p: p["F_h"] == p["F_w"]
    ),
    "kernel_min_3": Constraint(
        "kernel_min_3",
        ("F_h",),
        lambda p: p["F_h"] >= 3,
    ),
}


def constraint_by_name(name: str) -> Constraint:
    if name not in CONSTRAINT_REGISTRY:
        raise InvalidParam("constraint", name, "not a registered constraint")
    return CONSTRAINT_REGISTRY[name]


def _lattice_values(bound, width: int, name: str) -> range:
    """Admissible values of one parameter: multiples of width inside bounds."""
    if width == 1:
        lo, hi = bound.min, bound.max
        if lo > hi:
            raise EmptyRange(f"{name}: empty range [{lo}, {hi}]")
        return range(lo, hi + 1)
    first = -(-bound.min // width) * width
    last = (bound.max // width) * width
    if first > last or first < 1:
        raise EmptyRange(
            f"{name}: no multiple of {width} inside [{bound.min}, {bound.max}]"
        )
    return range(first, last + 1, width)


@dataclass(frozen=True)
class PrLattice:
    """All performance representatives of one kind inside given bounds."""

    kind: OpKind
    widths: Mapping[str, int]
    bounds: ParamBounds
    constraints: Tuple[Constraint, ...] = ()

    def __post_init__(self) -> None:
        if self.bounds.kind is not self.kind:
            raise KindMismatch(f"bounds are for {self.bounds.kind}, lattice for {self.kind}")
        canonical = CANONICAL_PARAMS[self.kind]
        widths = {}
        for name, w in self.widths.items():
            if name not in canonical:
                raise InvalidParam(name, w, f"not a parameter of {self.kind}")
            if int(w) < 1:
                raise InvalidParam(name, w, "step width must be >= 1")
            widths[name] = int(w)
        for name in canonical:
            widths.setdefault(name, 1)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for c in self.constraints:
            for name in c.params:
                if name not in canonical:
                    raise InvalidParam(name, None, f"constraint {c.name} touches unknown parameter")
        # fail early on parameters whose bounds admit no lattice point
        for name in canonical:
            _lattice_values(self.bounds.ranges[name], self.widths[name], name)

    def param_values(self, name: str) -> range:
        return _lattice_values(self.bounds.ranges[name], self.widths[name], name)

    def member(self, config) -> bool:
        """Whether a config (or raw parameter mapping) lies on this lattice."""
        if isinstance(config, LayerConfig):
            if config.kind is not self.kind:
                return False
            params = config.params
        else:
            params = config
        for name in CANONICAL_PARAMS[self.kind]:
            value = params[name]
            b = self.bounds.ranges[name]
            if not (b.min <= value <= b.max):
                return False
            if value % self.widths[name] != 0 and self.widths[name] > 1:
                return False
        return all(c(params) for c in self.constraints)


def derive_from_description(
    desc: HardwareDescription, bounds: ParamBounds
) -> PrLattice:
    """Lattice for a white-box accelerator: mapped dims become step widths."""
    if bounds.kind is not desc.operation:
        raise KindMismatch(f"bounds are for {bounds.kind}, description for {desc.operation}")
    widths = {name: 1 for name in CANONICAL_PARAMS[desc.operation]}
    for dim, name in zip(desc.dims, desc.mapping):
        widths[name] = int(dim)
    return PrLattice(desc.operation, widths, bounds)


def map_to_pr(config: LayerConfig, lattice: PrLattice) -> LayerConfig:
    """The representative of a config: stepped params round up to the next
    multiple of their width; width-1 params pass through.  A value above the
    top of the lattice clamps to the largest lattice point (logged)."""
    if config.kind is not lattice.kind:
        raise KindMismatch(f"config is {config.kind}, lattice is {lattice.kind}")
    mapped = {}
    for name, value in config.params.items():
        w = lattice.widths[name]
        if w == 1:
            mapped[name] = value
            continue
        target = -(-value // w) * w
        top = (lattice.bounds.ranges[name].max // w) * w
        if target > top:
            log.warning(
                "%s=%d exceeds the lattice top %d, clamping", name, value, top
            )
            target = top
        mapped[name] = target
    return LayerConfig(config.kind, mapped)


def enumerate_count(lattice: PrLattice) -> int:
    """Number of lattice members, constraints included.

    Unconstrained parameters contribute a plain product; parameters touched
    by constraints are enumerated jointly and filtered.
    """
    touched: FrozenSet[str] = frozenset(
        name for c in lattice.constraints for name in c.params
    )
    count = 1
    for name in CANONICAL_PARAMS[lattice.kind]:
        if name not in touched:
            count *= len(lattice.param_values(name))
    if not touched:
        return count
    names = sorted(touched)
    sub = 0
    for combo in itertools.product(*(lattice.param_values(n) for n in names)):
        assignment = dict(zip(names, combo))
        if all(c(assignment) for c in lattice.constraints if set(c.params) <= touched):
            sub += 1
    return count * sub


def _config_from_values(kind: OpKind, names: Sequence[str], values: Sequence[int]) -> LayerConfig:
    return LayerConfig(kind, dict(zip(names, values)))


def _sample_space(
    kind: OpKind,
    value_ranges: Sequence[range],
    total: int,
    n: int,
    seed: int,
    constraints: Sequence[Constraint],
    exclude: FrozenSet[LayerConfig],
) -> List[LayerConfig]:
    """n distinct uniform draws from a product space, minus exclusions."""
    names = CANONICAL_PARAMS[kind]
    if n < 1:
        raise InvalidParam("n", n, "must be >= 1")

    def _in_space(config: LayerConfig) -> bool:
        if config.kind is not kind:
            return False
        values = [config.params[name] for name in names]
        if any(v not in r for v, r in zip(values, value_ranges)):
            return False
        return all(c(config.params) for c in constraints)

    usable = total - sum(1 for c in exclude if _in_space(c))
    if n > usable:
        raise LatticeTooSmall(f"asked for {n} distinct configs, space holds {usable}")
    rng = np.random.default_rng(seed)
    if total <= _MATERIALIZE_CAP:
        members = [
            _config_from_values(kind, names, combo)
            for combo in itertools.product(*value_ranges)
            if all(c(dict(zip(names, combo))) for c in constraints)
        ]
        members = [m for m in members if m not in exclude]
        if n > len(members):
            raise LatticeTooSmall(
                f"asked for {n} distinct configs, space holds {len(members)}"
            )
        idx = rng.choice(len(members), size=n, replace=False)
        return [members[i] for i in idx]
    sizes = [len(r) for r in value_ranges]
    seen = set()
    out: List[LayerConfig] = []
    while len(out) < n:
        draws = rng.integers(0, sizes)  # one index per parameter
        combo = tuple(r[i] for r, i in zip(value_ranges, draws))
        if combo in seen:
            continue
        assignment = dict(zip(names, combo))
        if not all(c(assignment) for c in constraints):
            seen.add(combo)
            continue
        config = _config_from_values(kind, names, combo)
        seen.add(combo)
        if config in exclude:
            continue
        out.append(config)
    return out


def sample(
    lattice: PrLattice,
    n: int,
    seed: int,
    exclude: Iterable[LayerConfig] = (),
) -> List[LayerConfig]:
    """n distinct lattice members, uniformly at random, reproducible by seed.

    Configs in `exclude` are never returned (used to keep training samples
    disjoint from held-out test layers).
    """
    ranges = [lattice.param_values(name) for name in CANONICAL_PARAMS[lattice.kind]]
    total = enumerate_count(lattice)
    return _sample_space(
        lattice.kind, ranges, total, n, seed, lattice.constraints, frozenset(exclude)
    )


def sample_random_full_space(
    kind: OpKind,
    bounds: ParamBounds,
    n: int,
    seed: int,
    exclude: Iterable[LayerConfig] = (),
) -> List[LayerConfig]:
    """n distinct configs uniform over every bounded config (the uninformed
    baseline a step-aware sampler is compared against)."""
    if bounds.kind is not kind:
        raise KindMismatch(f"bounds are for {bounds.kind}, not {kind}")
    ranges = []
    total = 1
    for name in CANONICAL_PARAMS[kind]:
        b = bounds.ranges[name]
        r = range(b.min, b.max + 1)
        if len(r) == 0:
            raise EmptyRange(f"{name}: empty range [{b.min}, {b.max}]")
        ranges.append(r)
        total *= len(r)
    return _sample_space(kind, ranges, total, n, seed, (), frozenset(exclude))

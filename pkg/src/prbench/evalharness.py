"""Evaluation harness: accuracy metrics and the sampling-strategy comparison.

run_comparison trains one latency model per (training size, strategy,
seed) cell and scores it on a held-out layer set, reporting the median
over seeds.  The two strategies share the measurement budget: sampling
performance representatives from the step lattice versus sampling the
full parameter space uniformly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import LayerConfig, OpKind, ParamBounds
from .errors import (
    InvalidParam,
    LengthMismatch,
    NonPositiveMeasured,
    TestTrainOverlap,
)
from .forest import ForestHyperparams, estimate_layer, fit
from .prset import Constraint, PrLattice, sample, sample_random_full_space

REPORT_FORMAT_VERSION = "1"
STRATEGIES = ("pr", "random_full")


def _paired(measured: Sequence[float], estimated: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    m = np.asarray(measured, dtype=float)
    e = np.asarray(estimated, dtype=float)
    if m.shape != e.shape:
        raise LengthMismatch(f"{m.size} measured values vs {e.size} estimates")
    if m.size == 0:
        raise LengthMismatch("need at least one pair")
    if np.any(m <= 0):
        raise NonPositiveMeasured("measured reference values must be positive")
    return m, e


def mape(measured: Sequence[float], estimated: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent of the measured values."""
    m, e = _paired(measured, estimated)
    return float(100.0 * np.mean(np.abs(m - e) / m))


def rmspe(measured: Sequence[float], estimated: Sequence[float]) -> float:
    """Root mean square percentage error, in percent."""
    m, e = _paired(measured, estimated)
    return float(100.0 * np.sqrt(np.mean(((m - e) / m) ** 2)))


@dataclass(frozen=True)
class EvalCell:
    """One (training size, strategy) result: seed-median errors plus detail."""

    size: int
    strategy: str
    train_size: int
    mape_percent: float
    rmspe_percent: float
    per_seed: Tuple[dict, ...]
    per_layer: Tuple[dict, ...]  # from the median seed


@dataclass(frozen=True)
class EvalReport:
    kind: OpKind
    sizes: Tuple[int, ...]
    n_seeds: int
    seed: int
    test_set_size: int
    cells: Tuple[EvalCell, ...]

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "kind": self.kind.value,
            "sizes": list(self.sizes),
            "n_seeds": self.n_seeds,
            "seed": self.seed,
            "test_set_size": self.test_set_size,
            "cells": [
                {
                    "size": c.size,
                    "strategy": c.strategy,
                    "train_size": c.train_size,
                    "mape_percent": c.mape_percent,
                    "rmspe_percent": c.rmspe_percent,
                    "per_seed": list(c.per_seed),
                    "per_layer": list(c.per_layer),
                }
                for c in self.cells
            ],
        }


def _cell_seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(key))
    return int(ss.generate_state(1)[0])


def run_comparison(
    backend,
    kind: OpKind,
    bounds: ParamBounds,
    widths: Mapping[str, int],
    sizes: Sequence[int],
    test_set: Sequence[LayerConfig],
    seed: int,
    n_seeds: int = 5,
    hyperparams: Optional[ForestHyperparams] = None,
    repeats: int = 1,
    constraints: Sequence[Constraint] = (),
) -> EvalReport:
    """Score PR sampling against uniform full-space sampling.

    For every training size, strategy, and replication seed: draw that many
    distinct training configs (never equal to a test layer), measure them
    on the backend, fit a forest, and score the test set.  PR-strategy
    models carry the step widths so estimates snap to representatives;
    the uninformed baseline predicts configs as-is.  Reported errors are
    the medians over the replication seeds.
    """
    if not sizes:
        raise InvalidParam("sizes", sizes, "need at least one training size")
    if n_seeds < 1:
        raise InvalidParam("n_seeds", n_seeds, "must be >= 1")
    test_set = list(test_set)
    if not test_set:
        raise InvalidParam("test_set", 0, "need at least one test layer")
    for config in test_set:
        if config.kind is not kind:
            raise InvalidParam("test_set", config.kind.value, f"expected {kind}")
    if len(set(test_set)) != len(test_set):
        raise TestTrainOverlap("test set contains duplicate configs")
    test_exclude = frozenset(test_set)
    measured = [backend.measure(c, repeats=repeats).latency for c in test_set]
    lattice = PrLattice(kind, widths, bounds, tuple(constraints))
    base_hp = hyperparams or ForestHyperparams()
    cells: List[EvalCell] = []
    for size_index, size in enumerate(sizes):
        for strategy_index, strategy in enumerate(STRATEGIES):
            per_seed: List[dict] = []
            per_layer_by_seed: List[Tuple[dict, ...]] = []
            for rep in range(n_seeds):
                sample_seed = _cell_seed(seed, size_index, strategy_index, rep, 0)
                fit_seed = _cell_seed(seed, size_index, strategy_index, rep, 1)
                if strategy == "pr":
                    train = sample(lattice, size, sample_seed, exclude=test_exclude)
                    model_widths: Optional[Mapping[str, int]] = lattice.widths
                else:
                    train = sample_random_full_space(
                        kind, bounds, size, sample_seed, exclude=test_exclude
                    )
                    # the uninformed baseline estimates configs as-is
                    model_widths = None
                overlap = test_exclude.intersection(train)
                if overlap:
                    raise TestTrainOverlap(
                        f"{len(overlap)} training configs equal test layers"
                    )
                samples = [
                    (c, backend.measure(c, repeats=repeats).latency) for c in train
                ]
                hp = ForestHyperparams(**{**base_hp.to_dict(), "seed": fit_seed})
                model = fit(samples, hp, widths=model_widths, bounds=bounds)
                estimates = [estimate_layer(model, c) for c in test_set]
                per_seed.append(
                    {
                        "replication": rep,
                        "mape_percent": mape(measured, estimates),
                        "rmspe_percent": rmspe(measured, estimates),
                    }
                )
                per_layer_by_seed.append(
                    tuple(
                        {
                            "config": c.to_dict(),
                            "measured_s": m,
                            "estimated_s": e,
                            "abs_error_s": abs(m - e),
                            "pct_error": 100.0 * abs(m - e) / m,
                        }
                        for c, m, e in zip(test_set, measured, estimates)
                    )
                )
            mapes = [entry["mape_percent"] for entry in per_seed]
            med_mape = float(np.median(mapes))
            median_rep = int(np.argmin([abs(v - med_mape) for v in mapes]))
            cells.append(
                EvalCell(
                    size=size,
                    strategy=strategy,
                    train_size=size,
                    mape_percent=med_mape,
                    rmspe_percent=float(
                        np.median([entry["rmspe_percent"] for entry in per_seed])
                    ),
                    per_seed=tuple(per_seed),
                    per_layer=per_layer_by_seed[median_rep],
                )
            )
    return EvalReport(
        kind=kind,
        sizes=tuple(sizes),
        n_seeds=n_seeds,
        seed=seed,
        test_set_size=len(test_set),
        cells=tuple(cells),
    )


CSV_HEADER = "size,strategy,mape,rmspe"


def emit_report(report: EvalReport, format: str = "json") -> str:
    """Render a report as a JSON document or a plot-ready CSV.

    The CSV has the fixed header ``size,strategy,mape,rmspe`` and one row
    per (size, strategy) cell.
    """
    if format == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if format == "csv":
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for cell in report.cells:
            out.write(
                f"{cell.size},{cell.strategy},{cell.mape_percent!r},{cell.rmspe_percent!r}\n"
            )
        return out.getvalue()
    raise InvalidParam("format", format, "expected 'json' or 'csv'")

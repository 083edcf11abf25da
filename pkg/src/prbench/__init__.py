"""prbench: step-aware benchmarking and latency estimation for accelerators.

The pipeline: sweep single parameters on a measurement backend, detect the
step widths of the latency staircase, benchmark one performance
representative per step, train a random-forest latency model on those
representatives, and compose per-layer estimates into block and network
estimates.
"""

from .domain import (
    Bound,
    HardwareDescription,
    LayerConfig,
    MeasurementRecord,
    OpKind,
    ParamBounds,
    mac_count,
    parse_kind,
    validate,
)
from .backends import (
    DualFuOracle,
    ExternalCommandBackend,
    MeasurementStore,
    SyntheticOracle,
    build_backend,
)
from .errors import PrbenchError
from .forest import ForestHyperparams, LatencyModel, estimate_layer, fit, predict
from .fusion import (
    BlockInstance,
    BlockKind,
    FusingFactorModel,
    PlatformProfile,
    block_ops,
    estimate_block,
    fit_fusing_factor,
)
from .netgraph import NetworkGraph, estimate_network, load_network, match_blocks
from .prdetect import DetectorConfig, determine_step_widths, find_step_width
from .prset import PrLattice, derive_from_description, enumerate_count, map_to_pr, sample
from .sweep import SweepPlan, SweepResult, plan_sweeps, run_sweep
from .evalharness import EvalReport, emit_report, mape, rmspe, run_comparison

__version__ = "0.1.0"

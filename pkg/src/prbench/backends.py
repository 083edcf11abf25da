"""Measurement backends and the on-disk measurement store.

Synthetic oracles model accelerators whose execution time is a staircase
function of some parameters (the hardware processes whole tiles, so time
jumps once a tile boundary is crossed and is flat in between).  They give
tests and experiments a ground truth that is cheap and exactly known.
ExternalCommandBackend adapts any executable that benchmarks one layer.
"""

from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import (
    CANONICAL_PARAMS,
    LayerConfig,
    MeasurementRecord,
    OpKind,
    parse_kind,
)
from .errors import (
    BackendFailure,
    CorruptStore,
    InvalidParam,
    IoFailure,
    UnsupportedSubject,
)
from .fusion import BlockInstance, BlockKind

StepWidthMap = Dict[str, int]


def _median(values: Sequence[float]) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


class SyntheticOracle:
    """Deterministic staircase latency model, optionally noisy.

    Cycles for a layer are ``base_cycles + cycle_cost_per_tile * product``
    where the product runs over the parameters listed in the kind's width
    map: a parameter with width w > 1 contributes its tile count
    ceil(p / w), a parameter with width 1 contributes its raw value, and
    unlisted parameters (typically stride and padding) do not influence
    the time at all.  Latency is cycles / clock_hz, times a log-normal
    factor with relative standard deviation ``noise_rel_sd`` when noise
    is enabled.  With ``noise_rel_sd = 0`` the oracle is a pure function.
    """

    def __init__(
        self,
        widths: Mapping[OpKind, Mapping[str, int]],
        cycle_cost_per_tile: float = 1.0,
        base_cycles: float = 0.0,
        clock_hz: float = 1.0,
        noise_rel_sd: float = 0.0,
        rng_seed: int = 0,
        backend_id: str = "synthetic",
    ) -> None:
        self.widths: Dict[OpKind, Dict[str, int]] = {}
        for kind, wmap in widths.items():
            kind = parse_kind(kind) if not isinstance(kind, OpKind) else kind
            canonical = CANONICAL_PARAMS[kind]
            for name, w in wmap.items():
                if name not in canonical:
                    raise InvalidParam(name, w, f"not a parameter of {kind}")
                if int(w) < 1:
                    raise InvalidParam(name, w, "step width must be >= 1")
            self.widths[kind] = {name: int(w) for name, w in wmap.items()}
        if cycle_cost_per_tile <= 0:
            raise InvalidParam("cycle_cost_per_tile", cycle_cost_per_tile, "must be > 0")
        if clock_hz <= 0:
            raise InvalidParam("clock_hz", clock_hz, "must be > 0")
        if base_cycles < 0:
            raise InvalidParam("base_cycles", base_cycles, "must be >= 0")
        if noise_rel_sd < 0:
            raise InvalidParam("noise_rel_sd", noise_rel_sd, "must be >= 0")
        self.cycle_cost_per_tile = float(cycle_cost_per_tile)
        self.base_cycles = float(base_cycles)
        self.clock_hz = float(clock_hz)
        self.noise_rel_sd = float(noise_rel_sd)
        self.rng_seed = int(rng_seed)
        self.backend_id = backend_id
        self._rng = np.random.default_rng(self.rng_seed)
        self._rng_lock = threading.Lock()
        # exp(sigma Z) has median 1 and coefficient of variation noise_rel_sd
        self._sigma = math.sqrt(math.log1p(self.noise_rel_sd**2))

    @classmethod
    def for_kind(cls, kind: OpKind, widths: Mapping[str, int], **kwargs) -> "SyntheticOracle":
        return cls({kind: widths}, **kwargs)

    @property
    def parallel_ok(self) -> bool:
        return self.noise_rel_sd == 0.0

    def supports(self, kind: OpKind) -> bool:
        return kind in self.widths

    def latency_seconds(self, config: LayerConfig) -> float:
        """Noise-free latency of one layer.

        Cycles = base + cost * product over parameters: stepped parameters
        contribute ceil(p/w) tiles, all others contribute p directly.  Stride
        and padding are latency-neutral.
        """
        if config.kind not in self.widths:
            raise UnsupportedSubject(f"oracle has no width table for {config.kind}")
        table = self.widths[config.kind]
        product = 1
        for name, value in config.params.items():
            if name in ("s", "pad"):
                continue
            w = table.get(name, 1)
            product *= -(-value // w) if w > 1 else value
        cycles = self.base_cycles + self.cycle_cost_per_tile * product
        return cycles / self.clock_hz

    def _noise_factors(self, n: int) -> np.ndarray:
        if self.noise_rel_sd == 0.0:
            return np.ones(n)
        with self._rng_lock:
            z = self._rng.standard_normal(n)
        return np.exp(self._sigma * z)

    def _subject_seconds(self, subject) -> float:
        if isinstance(subject, LayerConfig):
            return self.latency_seconds(subject)
        if isinstance(subject, BlockInstance):
            # single functional unit: layers execute back to back
            return sum(self.latency_seconds(layer) for layer in subject.layers)
        raise UnsupportedSubject(f"cannot measure {type(subject).__name__}")

    def measure(self, subject, repeats: int = 1) -> MeasurementRecord:
        if repeats < 1:
            raise InvalidParam("repeats", repeats, "must be >= 1")
        base = self._subject_seconds(subject)
        raw = list(base * self._noise_factors(repeats))
        return MeasurementRecord(
            subject=subject,
            repeats=repeats,
            raw_times=[float(t) for t in raw],
            latency=_median(raw),
            backend_id=self.backend_id,
        )


# Which functional unit of a dual-FU accelerator runs each kind: the big
# convolution/GEMM unit or the auxiliary unit (pooling, element-wise ops,
# lightweight convolutions).
DEFAULT_FU_ASSIGNMENT: Dict[OpKind, str] = {
    OpKind.Conv1D: "conv",
    OpKind.Conv2D: "conv",
    OpKind.PointwiseConv2D: "conv",
    OpKind.FullyConnected: "conv",
    OpKind.DepthwiseConv2D: "aux",
    OpKind.AvgPool2D: "aux",
    OpKind.MaxPool2D: "aux",
    OpKind.ReLU: "aux",
    OpKind.Add: "aux",
}


class DualFuOracle:
    """Two synthetic functional units that can overlap on known block shapes.

    Layers route to one FU by kind.  For a block whose kind is in
    ``parallel_pairs`` the two FUs run concurrently, so the block takes the
    maximum of the per-FU sums; otherwise the FUs serialize and the block
    takes the total.  ReLU layers cost nothing inside blocks when
    ``relu_fused`` is set (the hardware folds them into the producer).
    """

    def __init__(
        self,
        conv_fu: SyntheticOracle,
        aux_fu: SyntheticOracle,
        parallel_pairs: Iterable[BlockKind] = (BlockKind.DwSep, BlockKind.PoolFc),
        relu_fused: bool = True,
        fu_assignment: Optional[Mapping[OpKind, str]] = None,
        backend_id: str = "dual-fu",
    ) -> None:
        self.conv_fu = conv_fu
        self.aux_fu = aux_fu
        self.parallel_pairs = frozenset(
            BlockKind(p) if not isinstance(p, BlockKind) else p for p in parallel_pairs
        )
        self.relu_fused = bool(relu_fused)
        self.fu_assignment = dict(fu_assignment or DEFAULT_FU_ASSIGNMENT)
        self.backend_id = backend_id

    @property
    def parallel_ok(self) -> bool:
        return self.conv_fu.parallel_ok and self.aux_fu.parallel_ok

    def _fu_for(self, kind: OpKind) -> SyntheticOracle:
        side = self.fu_assignment.get(kind)
        if side == "conv":
            return self.conv_fu
        if side == "aux":
            return self.aux_fu
        raise UnsupportedSubject(f"no functional unit assigned for {kind}")

    def layer_seconds(self, config: LayerConfig) -> float:
        return self._fu_for(config.kind).latency_seconds(config)

    def block_seconds(self, block: BlockInstance) -> float:
        sums = {"conv": 0.0, "aux": 0.0}
        for layer in block.layers:
            if self.relu_fused and layer.kind is OpKind.ReLU:
                continue
            sums[self.fu_assignment.get(layer.kind, "?")] = (
                sums.get(self.fu_assignment.get(layer.kind, "?"), 0.0)
                + self._fu_for(layer.kind).latency_seconds(layer)
            )
        if block.kind in self.parallel_pairs:
            return max(sums["conv"], sums["aux"])
        return sums["conv"] + sums["aux"]

    def measure(self, subject, repeats: int = 1) -> MeasurementRecord:
        if repeats < 1:
            raise InvalidParam("repeats", repeats, "must be >= 1")
        if isinstance(subject, LayerConfig):
            base = self.layer_seconds(subject)
            noise_src = self._fu_for(subject.kind)
        elif isinstance(subject, BlockInstance):
            base = self.block_seconds(subject)
            noise_src = self.conv_fu
        else:
            raise UnsupportedSubject(f"cannot measure {type(subject).__name__}")
        raw = list(base * noise_src._noise_factors(repeats))
        return MeasurementRecord(
            subject=subject,
            repeats=repeats,
            raw_times=[float(t) for t in raw],
            latency=_median(raw),
            backend_id=self.backend_id,
        )


class ExternalCommandBackend:
    """Adapter around an external benchmark executable.

    The argv template may contain ``{config_path}`` (replaced by the path of
    a temporary JSON file holding the layer) and ``{repeats}``.  The same
    JSON is piped to the child's stdin.  The child must exit 0 and print one
    positive latency in seconds per repeat, one per line.
    """

    def __init__(
        self,
        argv: Sequence[str],
        timeout_s: float = 60.0,
        parallel_ok: bool = False,
        backend_id: Optional[str] = None,
    ) -> None:
        if not argv:
            raise InvalidParam("argv", argv, "must name an executable")
        self.argv = list(argv)
        self.timeout_s = float(timeout_s)
        self.parallel_ok = bool(parallel_ok)
        self.backend_id = backend_id or f"external:{os.path.basename(self.argv[0])}"

    def measure(self, subject, repeats: int = 1) -> MeasurementRecord:
        if repeats < 1:
            raise InvalidParam("repeats", repeats, "must be >= 1")
        if not isinstance(subject, LayerConfig):
            raise UnsupportedSubject("external commands measure single layers only")
        payload = json.dumps(subject.to_dict(), sort_keys=True)
        tmp = tempfile.NamedTemporaryFile(
            "w", suffix=".json", prefix="prbench-layer-", delete=False
        )
        try:
            tmp.write(payload)
            tmp.close()
            argv = [
                a.replace("{config_path}", tmp.name).replace("{repeats}", str(repeats))
                for a in self.argv
            ]
            try:
                proc = subprocess.run(
                    argv,
                    input=payload,
                    capture_output=True,
                    text=True,
                    timeout=self.timeout_s,
                )
            except subprocess.TimeoutExpired as exc:
                raise BackendFailure(f"{argv[0]} timed out after {self.timeout_s}s") from exc
            except OSError as exc:
                raise BackendFailure(f"cannot run {argv[0]}: {exc}") from exc
            if proc.returncode != 0:
                raise BackendFailure(
                    f"{argv[0]} exited {proc.returncode}: {proc.stderr.strip()[:200]}"
                )
            lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
            if len(lines) != repeats:
                raise BackendFailure(
                    f"{argv[0]} printed {len(lines)} values, expected {repeats}"
                )
            try:
                raw = [float(ln) for ln in lines]
            except ValueError as exc:
                raise BackendFailure(f"{argv[0]} printed a non-numeric value") from exc
            if any(t <= 0 for t in raw):
                raise BackendFailure(f"{argv[0]} reported a non-positive latency")
        finally:
            try:
                os.unlink(tmp.name)
            except OSError:
                pass
        return MeasurementRecord(
            subject=subject,
            repeats=repeats,
            raw_times=raw,
            latency=_median(raw),
            backend_id=self.backend_id,
        )


# Union of canonical parameter names across kinds, in a fixed column order.
STORE_PARAM_COLUMNS: Tuple[str, ...] = (
    "C", "C_h", "C_w", "K", "F", "F_h", "F_w", "s", "pad", "batch", "in", "out",
)
STORE_COLUMNS: Tuple[str, ...] = (
    ("kind",) + STORE_PARAM_COLUMNS + ("repeats", "latency_s", "backend_id")
)


class MeasurementStore:
    """Append-only CSV of layer measurements.

    One row per record: the kind, one column per canonical parameter (blank
    where the kind has no such parameter), the repeat count, the aggregated
    latency in seconds, and the backend id.  Raw per-repeat times are not
    persisted.  Appends are serialized within the process.
    """

    def __init__(self, path: str) -> None:
        self.path = str(path)
        self._lock = threading.Lock()

    def append(self, record: MeasurementRecord) -> None:
        if not isinstance(record.subject, LayerConfig):
            raise UnsupportedSubject("the store persists layer measurements only")
        config = record.subject
        row = [config.kind.value]
        for name in STORE_PARAM_COLUMNS:
            row.append(str(config.params[name]) if name in config.params else "")
        row += [str(record.repeats), repr(float(record.latency)), record.backend_id]
        line = ",".join(row) + "\n"
        with self._lock:
            try:
                new = not os.path.exists(self.path)
                with open(self.path, "a", encoding="utf-8", newline="") as fh:
                    if new:
                        fh.write(",".join(STORE_COLUMNS) + "\n")
                    fh.write(line)
                    fh.flush()
            except OSError as exc:
                raise IoFailure(f"cannot append to {self.path}: {exc}") from exc

    def query(
        self,
        kind: Optional[OpKind] = None,
        where: Optional[Mapping[str, Tuple[int, int]]] = None,
    ) -> List[MeasurementRecord]:
        """Records matching the kind and inclusive per-parameter ranges."""
        try:
            with open(self.path, "r", encoding="utf-8", newline="") as fh:
                reader = csv.reader(fh)
                rows = list(reader)
        except FileNotFoundError:
            return []
        except OSError as exc:
            raise IoFailure(f"cannot read {self.path}: {exc}") from exc
        if not rows:
            return []
        if tuple(rows[0]) != STORE_COLUMNS:
            raise CorruptStore(f"{self.path}: unexpected header {rows[0]!r}")
        out: List[MeasurementRecord] = []
        for lineno, row in enumerate(rows[1:], start=2):
            record = self._parse_row(row, lineno)
            config = record.subject
            if kind is not None and config.kind is not kind:
                continue
            if where:
                skip = False
                for name, (lo, hi) in where.items():
                    value = config.params.get(name)
                    if value is None or not (lo <= value <= hi):
                        skip = True
                        break
                if skip:
                    continue
            out.append(record)
        return out

    def _parse_row(self, row: Sequence[str], lineno: int) -> MeasurementRecord:
        if len(row) != len(STORE_COLUMNS):
            raise CorruptStore(f"{self.path}:{lineno}: {len(row)} fields")
        try:
            kind = parse_kind(row[0])
            params = {}
            for name, cell in zip(STORE_PARAM_COLUMNS, row[1:]):
                if cell != "":
                    params[name] = int(cell)
            config = LayerConfig(kind, params)
            repeats = int(row[-3])
            latency = float(row[-2])
            # Raw repeat times are not persisted; stand in with the aggregate.
            record = MeasurementRecord(
                subject=config,
                repeats=repeats,
                raw_times=[latency] * repeats,
                latency=latency,
                backend_id=row[-1],
            )
        except CorruptStore:
            raise
        except Exception as exc:
            raise CorruptStore(f"{self.path}:{lineno}: {exc}") from exc
        return record


def build_backend(doc: Mapping) -> object:
    """Construct a backend from its JSON description."""
    if "type" not in doc:
        raise InvalidParam("backend", dict(doc), "missing key 'type'")
    btype = doc["type"]
    if btype == "synthetic":
        return _synthetic_from(doc)
    if btype == "dual_fu":
        return DualFuOracle(
            conv_fu=_synthetic_from(doc["conv_fu"]),
            aux_fu=_synthetic_from(doc["aux_fu"]),
            parallel_pairs=tuple(
                BlockKind(p) for p in doc.get("parallel_pairs", ["DwSep", "PoolFc"])
            ),
            relu_fused=bool(doc.get("relu_fused", True)),
            fu_assignment={
                parse_kind(k): v for k, v in doc.get("fu_assignment", {}).items()
            }
            or None,
        )
    if btype == "external":
        return ExternalCommandBackend(
            argv=list(doc["argv"]),
            timeout_s=float(doc.get("timeout_s", 60.0)),
            parallel_ok=bool(doc.get("parallel_ok", False)),
        )
    raise InvalidParam("type", btype, "unknown backend type")


def _synthetic_from(doc: Mapping) -> SyntheticOracle:
    if "widths_by_kind" in doc:
        widths = {parse_kind(k): dict(v) for k, v in doc["widths_by_kind"].items()}
    elif "kind" in doc and "widths" in doc:
        widths = {parse_kind(doc["kind"]): dict(doc["widths"])}
    else:
        raise InvalidParam(
            "backend", dict(doc), "need 'widths_by_kind' or 'kind' plus 'widths'"
        )
    return SyntheticOracle(
        widths,
        cycle_cost_per_tile=float(doc.get("cycle_cost_per_tile", 1.0)),
        base_cycles=float(doc.get("base_cycles", 0.0)),
        clock_hz=float(doc.get("clock_hz", 1.0)),
        noise_rel_sd=float(doc.get("noise_rel_sd", 0.0)),
        rng_seed=int(doc.get("rng_seed", 0)),
    )

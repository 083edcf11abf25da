"""prbench command line: sweep, detect, derive, sample, measure, train,
estimate-layer, estimate-net, fit-fusing, compare.

Exit codes: 0 on success, 1 on a domain error (the error class name is
printed verbatim), 2 on usage errors.  All outputs are written atomically
and all randomness is seeded through explicit --seed flags, so re-running
a stage with the same inputs reproduces its output files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from typing import Dict, List, Optional

from . import fileio
from .backends import MeasurementStore, build_backend
from .domain import (
    LayerConfig,
    OpKind,
    ParamBounds,
    HardwareDescription,
    default_bounds,
    parse_kind,
)
from .errors import InvalidParam, ParseError, PrbenchError
from .evalharness import emit_report, run_comparison
from .forest import (
    ForestHyperparams,
    deserialize,
    estimate_layer,
    fit,
    serialize,
)
from .fusion import BlockKind, PlatformProfile, fit_fusing_factor_rows
from .netgraph import estimate_network, load_network
from .prdetect import DetectorConfig, determine_step_widths
from .prset import (
    constraint_by_name,
    derive_from_description,
    PrLattice,
    sample,
    sample_random_full_space,
)
from .sweep import SweepPlan, SweepResult, run_sweep

log = logging.getLogger("prbench")


def _load_backend(path: str):
    doc = fileio.load_json(path)
    fileio.check_format_version(doc, path)
    return build_backend(doc)


def _parse_fixed(pairs: Optional[List[str]]) -> Dict[str, int]:
    fixed = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise InvalidParam("fixed", pair, "expected NAME=VALUE")
        name, _, value = pair.partition("=")
        try:
            fixed[name.strip()] = int(value)
        except ValueError as exc:
            raise InvalidParam("fixed", pair, "value must be an integer") from exc
    return fixed


def _bounds_for(kind: OpKind, path: Optional[str]) -> ParamBounds:
    if path is None:
        return default_bounds(kind)
    bounds = fileio.load_bounds(path)
    if bounds.kind is not kind:
        raise InvalidParam("bounds", bounds.kind.value, f"bounds file is for {bounds.kind}, not {kind}")
    return bounds


def _hyperparams(args, seed: int) -> ForestHyperparams:
    return ForestHyperparams(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf,
        feature_subsample=args.feature_subsample,
        bootstrap=not args.no_bootstrap,
        seed=seed,
    )


def _add_forest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-samples-leaf", type=int, default=1)
    p.add_argument("--feature-subsample", type=float, default=1.0 / 3.0)
    p.add_argument("--no-bootstrap", action="store_true")


# -- subcommands ----------------------------------------------------------------


def cmd_sweep(args) -> int:
    kind = parse_kind(args.kind)
    backend = _load_backend(args.backend)
    bounds = _bounds_for(kind, args.bounds)
    if args.max < args.min:
        raise InvalidParam(args.param, (args.min, args.max), "max must be >= min")
    fixed = bounds.defaults()
    fixed.update(_parse_fixed(args.fixed))
    fixed.pop(args.param, None)
    values = tuple(range(args.min, args.max + 1, args.stride))
    plan = SweepPlan(kind, args.param, values, fixed)
    result = run_sweep(plan, backend, repeats=args.repeats)
    fileio.write_json(args.out, fileio.stamp(result.to_dict()))
    log.info("wrote %s (%d points)", args.out, len(result.xs))
    if args.plot:
        from . import plots

        fig = plots.sweep_figure(result.xs, result.ys, args.param, kind.value)
        plots.save_figure(fig, args.plot)
    return 0


def cmd_detect(args) -> int:
    cfg = DetectorConfig(
        threshold_linear=args.threshold,
        min_peak_prominence=args.prominence,
        uniformity_tolerance=args.uniformity_tolerance,
    )
    sweeps: Dict[str, SweepResult] = {}
    kinds = set()
    for path in args.sweeps:
        doc = fileio.load_json(path)
        fileio.check_format_version(doc, path)
        result = SweepResult.from_dict(doc)
        param = result.plan.swept_param
        if param in sweeps:
            raise ParseError(f"{path}: duplicate sweep for parameter {param!r}")
        sweeps[param] = result
        kinds.add(result.plan.kind)
    if len(kinds) != 1:
        raise ParseError(f"sweeps mix kinds: {sorted(k.value for k in kinds)}")
    widths = determine_step_widths(sweeps, cfg)
    fileio.write_widths(args.out, kinds.pop(), widths)
    log.info("wrote %s: %s", args.out, widths)
    return 0


def cmd_derive(args) -> int:
    doc = fileio.load_json(args.hw)
    fileio.check_format_version(doc, args.hw)
    desc = HardwareDescription.from_dict(doc)
    bounds = _bounds_for(desc.operation, args.bounds)
    lattice = derive_from_description(desc, bounds)
    fileio.write_widths(args.out, lattice.kind, lattice.widths)
    log.info("wrote %s: %s", args.out, lattice.widths)
    return 0


def cmd_sample(args) -> int:
    bounds = fileio.load_bounds(args.bounds)
    kind = bounds.kind
    constraints = tuple(constraint_by_name(n) for n in args.constraint or [])
    if args.random_baseline:
        configs = sample_random_full_space(kind, bounds, args.n, args.seed)
    else:
        if not args.widths:
            raise InvalidParam("widths", None, "required unless --random-baseline")
        widths_kind, widths = fileio.load_widths(args.widths)
        if widths_kind is not kind:
            raise InvalidParam("widths", widths_kind.value, f"widths are for {widths_kind}, bounds for {kind}")
        lattice = PrLattice(kind, widths, bounds, constraints)
        configs = sample(lattice, args.n, args.seed)
    fileio.write_configs(args.out, configs)
    log.info("wrote %s (%d configs)", args.out, len(configs))
    return 0


def cmd_measure(args) -> int:
    backend = _load_backend(args.backend)
    configs = fileio.load_configs(args.configs)
    if args.append:
        store = MeasurementStore(args.out)
        for config in configs:
            store.append(backend.measure(config, repeats=args.repeats))
        return 0
    directory = os.path.dirname(os.path.abspath(args.out)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".prbench-store-")
    os.close(fd)
    os.unlink(tmp)
    try:
        store = MeasurementStore(tmp)
        for config in configs:
            store.append(backend.measure(config, repeats=args.repeats))
        os.replace(tmp, args.out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info("wrote %s (%d records)", args.out, len(configs))
    return 0


def cmd_train(args) -> int:
    kind = parse_kind(args.kind)
    store = MeasurementStore(args.data)
    records = store.query(kind=kind)
    samples = [(r.subject, r.latency) for r in records]
    widths = None
    if args.widths:
        widths_kind, widths = fileio.load_widths(args.widths)
        if widths_kind is not kind:
            raise InvalidParam("widths", widths_kind.value, f"widths are for {widths_kind}, not {kind}")
    bounds = fileio.load_bounds(args.bounds) if args.bounds else None
    model = fit(samples, _hyperparams(args, args.seed), widths=widths, bounds=bounds)
    fileio.atomic_write_bytes(args.out, serialize(model))
    log.info("wrote %s (%d samples, %d trees)", args.out, model.n_samples, args.n_trees)
    return 0


def _load_model(path: str):
    try:
        with open(path, "rb") as fh:
            return deserialize(fh.read())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def cmd_estimate_layer(args) -> int:
    model = _load_model(args.model)
    config = fileio.load_layer(args.config)
    seconds = estimate_layer(model, config)
    print(seconds)
    if args.out:
        fileio.write_json(args.out, fileio.stamp({"estimate_s": seconds}))
    return 0


def cmd_estimate_net(args) -> int:
    graph = load_network(fileio.load_json(args.network))
    profile = PlatformProfile.from_dict(fileio.load_json(args.profile))
    models = {}
    names = sorted(os.listdir(args.models))
    for name in names:
        if not name.endswith(".json"):
            continue
        model = _load_model(os.path.join(args.models, name))
        if model.kind in models:
            raise InvalidParam("models", model.kind.value, "two models for one kind")
        models[model.kind] = model
    estimate = estimate_network(graph, models, profile)
    fileio.write_json(args.out, fileio.stamp(estimate.to_dict()))
    print(estimate.total_seconds)
    return 0


def _read_csv(path: str, required: tuple) -> List[dict]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            header = reader.fieldnames or []
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    for column in required:
        if column not in header:
            raise ParseError(f"{path}: missing column {column!r}")
    return rows


def cmd_fit_fusing(args) -> int:
    blocks = _read_csv(args.blocks, ("block_id", "block_kind", "ops", "measured_s"))
    estimates = _read_csv(args.estimates, ("block_id", "est_sum_s"))
    est_by_id = {row["block_id"]: float(row["est_sum_s"]) for row in estimates}
    rows: Dict[BlockKind, List[tuple]] = {}
    for row in blocks:
        block_id = row["block_id"]
        if block_id not in est_by_id:
            raise ParseError(f"{args.estimates}: no estimate for block {block_id!r}")
        try:
            kind = BlockKind(row["block_kind"])
        except ValueError as exc:
            raise ParseError(f"{args.blocks}: unknown block kind {row['block_kind']!r}") from exc
        gap = est_by_id[block_id] - float(row["measured_s"])
        rows.setdefault(kind, []).append((int(row["ops"]), gap))
    model = fit_fusing_factor_rows(rows)
    profile = PlatformProfile(
        mode="fusing_factor", relu_fused=not args.no_relu_fused, fusing=model
    )
    fileio.write_json(args.out, fileio.stamp(profile.to_dict()))
    log.info("wrote %s", args.out)
    return 0


def cmd_compare(args) -> int:
    kind = parse_kind(args.kind)
    backend = _load_backend(args.backend)
    bounds = _bounds_for(kind, args.bounds)
    widths_kind, widths = fileio.load_widths(args.widths)
    if widths_kind is not kind:
        raise InvalidParam("widths", widths_kind.value, f"widths are for {widths_kind}, not {kind}")
    test_set = [c for c in fileio.load_configs(args.test_set) if c.kind is kind]
    sizes = [int(s) for s in args.sizes.split(",") if s]
    report = run_comparison(
        backend,
        kind,
        bounds,
        widths,
        sizes,
        test_set,
        seed=args.seed,
        n_seeds=args.seeds,
        hyperparams=_hyperparams(args, args.seed),
        repeats=args.repeats,
    )
    fileio.atomic_write_text(args.out, emit_report(report, "json"))
    stem = args.out[:-5] if args.out.endswith(".json") else args.out
    fileio.atomic_write_text(stem + ".csv", emit_report(report, "csv"))
    if not args.no_figure:
        from . import plots

        fig = plots.comparison_figure(report.to_dict())
        plots.save_figure(fig, stem + ".png")
    for cell in report.cells:
        print(f"{cell.size},{cell.strategy},{cell.mape_percent!r},{cell.rmspe_percent!r}")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prbench",
        description="Step-aware accelerator benchmarking and latency estimation.",
        epilog=(
            "Typical flow: sweep each parameter, detect step widths, sample "
            "representatives, measure them, train a model, estimate layers or "
            "whole networks."
        ),
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument(
        "--json-errors", action="store_true", help="print errors as JSON on stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("sweep", help="measure a single-parameter sweep")
    p.add_argument("--kind", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--min", type=int, required=True)
    p.add_argument("--max", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--backend", required=True)
    p.add_argument("--bounds", default=None, help="bounds file for fixed-param defaults")
    p.add_argument("--fixed", action="append", metavar="NAME=VALUE")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None, help="also render the staircase as PNG")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("detect", help="detect step widths from sweep files")
    p.add_argument("--sweeps", nargs="+", required=True)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--prominence", type=float, default=0.5)
    p.add_argument("--uniformity-tolerance", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("derive", help="step widths from a hardware description")
    p.add_argument("--hw", required=True)
    p.add_argument("--bounds", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("sample", help="sample training configs")
    p.add_argument("--widths", default=None)
    p.add_argument("--bounds", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--random-baseline",
        action="store_true",
        help="sample the full space instead of the representative lattice",
    )
    p.add_argument("--constraint", action="append", metavar="NAME")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("measure", help="measure configs into a store CSV")
    p.add_argument("--backend", required=True)
    p.add_argument("--configs", required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--append", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("train", help="train a forest latency model")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", required=True)
    p.add_argument("--widths", default=None)
    p.add_argument("--bounds", default=None)
    _add_forest_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate-layer", help="estimate one layer's latency")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_estimate_layer)

    p = sub.add_parser("estimate-net", help="estimate a whole network")
    p.add_argument("--network", required=True)
    p.add_argument("--models", required=True, help="directory of model JSON files")
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_net)

    p = sub.add_parser("fit-fusing", help="fit block fusing factors")
    p.add_argument("--blocks", required=True)
    p.add_argument("--estimates", required=True)
    p.add_argument("--no-relu-fused", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_fusing)

    p = sub.add_parser("compare", help="PR sampling vs random sampling accuracy")
    p.add_argument("--backend", required=True)
    p.add_argument("--kind", required=True)
    p.add_argument("--widths", required=True)
    p.add_argument("--bounds", default=None)
    p.add_argument("--sizes", required=True, help="comma-separated training sizes")
    p.add_argument("--test-set", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--repeats", type=int, default=1)
    _add_forest_flags(p)
    p.add_argument("--no-figure", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PrbenchError as exc:
        if args.json_errors:
            doc = {"error": type(exc).__name__, "message": str(exc)}
            print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        else:
            print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

"""End-to-end acceptance checks, one per shipped guarantee.

Each test prints an ``ACCEPTANCE <n> <name>: PASS`` line on success (visible
with ``pytest -s``); ``pytest -v`` shows one pass/fail line per criterion
either way.  Everything is seeded, noiseless unless a criterion says
otherwise, and scaled to finish well inside a ten-minute budget.
"""

import json
import math

import numpy as np
import pytest

import _topologies as topo
from _blocks import dual_fu, dwsep, oracle_estimators, poolfc, resnet_down, resnet_plain
from prbench import fileio
from prbench.backends import SyntheticOracle
from prbench.cli import main
from prbench.domain import Bound, LayerConfig, OpKind, ParamBounds
from prbench.evalharness import mape, rmspe, run_comparison
from prbench.forest import ForestHyperparams, deserialize, fit, predict, serialize
from prbench.fusion import (
    BlockKind,
    PlatformProfile,
    block_ops,
    estimate_block,
    fit_fusing_factor,
    fit_fusing_factor_rows,
)
from prbench.netgraph import estimate_network, match_blocks
from prbench.prdetect import determine_step_widths
from prbench.prset import PrLattice, map_to_pr, sample, sample_random_full_space
from prbench.sweep import SweepPlan, run_sweep


def report(number, name):
    print(f"ACCEPTANCE {number} {name}: PASS")


# -- criteria 1 and 2: step-width recovery ---------------------------------------

STEPPABLE = ("C", "C_h", "C_w", "K", "F_h", "F_w")
WIDTH_CHOICES = (2, 4, 8, 16, 32)


def random_staircase_oracles(n, seed):
    """n (width table, tile cost) pairs: 1 to 5 stepped params, rest linear."""
    rng = np.random.default_rng(seed)
    oracles = []
    for _ in range(n):
        stepped = rng.choice(len(STEPPABLE), size=int(rng.integers(1, 6)),
                             replace=False)
        table = {p: 1 for p in STEPPABLE}
        for i in stepped:
            table[STEPPABLE[i]] = int(rng.choice(WIDTH_CHOICES))
        oracles.append((table, float(10.0 ** rng.uniform(-1.0, 1.0))))
    return oracles


def sweep_all_params(oracle, repeats=1):
    """One sweep per influential Conv2D parameter, six steps for stepped ones."""
    table = oracle.widths[OpKind.Conv2D]
    sweeps = {}
    for param in STEPPABLE:
        span = 6 * table[param] if table[param] > 1 else 48
        fixed = {p: 2 for p in STEPPABLE if p != param}
        fixed.update({"s": 1, "pad": 1})
        plan = SweepPlan(OpKind.Conv2D, param, tuple(range(1, span + 1)), fixed)
        sweeps[param] = run_sweep(plan, oracle, repeats=repeats)
    return sweeps


def test_criterion_01_step_width_recovery_noiseless():
    errors = []
    for index, (table, cost) in enumerate(random_staircase_oracles(50, seed=101)):
        oracle = SyntheticOracle({OpKind.Conv2D: table}, clock_hz=1e6,
                                 cycle_cost_per_tile=cost)
        found = determine_step_widths(sweep_all_params(oracle))
        if found != table:
            errors.append((index, table, found))
    assert errors == []
    report(1, "step-width recovery, 50 noiseless staircase oracles")


def test_criterion_02_step_width_recovery_under_noise():
    exact = 0
    for index, (table, cost) in enumerate(random_staircase_oracles(50, seed=101)):
        oracle = SyntheticOracle({OpKind.Conv2D: table}, clock_hz=1e6,
                                 cycle_cost_per_tile=cost, noise_rel_sd=0.03,
                                 rng_seed=900 + index)
        found = determine_step_widths(sweep_all_params(oracle, repeats=11))
        exact += found == table
    assert exact >= 48  # 95% of 50
    report(2, f"step-width recovery, 3% noise, median of 11 ({exact}/50 exact)")


# -- criterion 3: representative mapping is latency-preserving -------------------

def test_criterion_03_pr_mapping_preserves_latency():
    widths = {"C": 8, "C_h": 8, "C_w": 16, "K": 32}
    oracle = SyntheticOracle({OpKind.Conv2D: widths}, clock_hz=1e9)
    bounds = ParamBounds(OpKind.Conv2D, {
        "C": Bound(1, 64, 16), "C_h": Bound(1, 224, 56), "C_w": Bound(1, 224, 56),
        "K": Bound(1, 64, 32), "F_h": Bound(1, 7, 3), "F_w": Bound(1, 7, 3),
        "s": Bound(1, 1, 1), "pad": Bound(0, 3, 1),
    })
    lattice = PrLattice(OpKind.Conv2D, widths, bounds)
    configs = sample_random_full_space(OpKind.Conv2D, bounds, 1000, seed=33)
    for config in configs:
        pr = map_to_pr(config, lattice)
        assert abs(oracle.latency_seconds(pr) - oracle.latency_seconds(config)) == 0.0
    report(3, "map_to_pr exact latency equivalence on 1000 random configs")


# -- criterion 4: PR sampling beats random full-space sampling -------------------

def test_criterion_04_pr_beats_random_sampling():
    oracle = SyntheticOracle({OpKind.Conv1D: {"C": 8, "K": 8}}, clock_hz=1e9)
    bounds = ParamBounds(OpKind.Conv1D, {
        "C": Bound(1, 64, 8), "C_w": Bound(1, 16, 8), "K": Bound(1, 64, 8),
        "F": Bound(3, 3, 3), "s": Bound(1, 1, 1), "pad": Bound(1, 1, 1),
    })
    rng = np.random.default_rng(404)
    test_set = set()
    while len(test_set) < 200:
        test_set.add(LayerConfig(OpKind.Conv1D, {
            "C": int(rng.integers(1, 65)), "C_w": int(rng.integers(1, 17)),
            "K": int(rng.integers(1, 65)), "F": 3, "s": 1, "pad": 1}))
    report_obj = run_comparison(
        oracle, OpKind.Conv1D, bounds, {"C": 8, "K": 8}, [1000],
        sorted(test_set, key=lambda c: sorted(c.params.items())),
        seed=42, n_seeds=5,
        hyperparams=ForestHyperparams(n_trees=8, bootstrap=False,
                                      feature_subsample=1.0, seed=0),
    )
    cells = {c.strategy: c.mape_percent for c in report_obj.cells}
    assert cells["pr"] < 1.0
    assert cells["pr"] < cells["random_full"] / 5.0
    report(4, "PR sampling MAPE {:.3f}% vs random {:.3f}% at size 1000".format(
        cells["pr"], cells["random_full"]))


# -- criterion 5: forest memorization and lossless serialization -----------------

def test_criterion_05_forest_memorization_and_round_trip():
    oracle = SyntheticOracle({OpKind.Conv1D: {"C": 8, "K": 8}}, clock_hz=1e9)
    bounds = ParamBounds(OpKind.Conv1D, {
        "C": Bound(1, 64, 8), "C_w": Bound(1, 16, 8), "K": Bound(1, 64, 8),
        "F": Bound(3, 3, 3), "s": Bound(1, 1, 1), "pad": Bound(1, 1, 1),
    })
    lattice = PrLattice(OpKind.Conv1D, {"C": 8, "K": 8}, bounds)
    configs = sample(lattice, 500, seed=55)
    samples = [(c, oracle.latency_seconds(c)) for c in configs]
    hp = ForestHyperparams(n_trees=8, bootstrap=False, min_samples_leaf=1,
                           max_depth=None, feature_subsample=1.0, seed=5)
    model = fit(samples, hp, widths={"C": 8, "K": 8}, bounds=bounds)
    for config, target in samples:
        assert predict(model, config) == target
    blob = serialize(model)
    again = deserialize(blob)
    assert serialize(again) == blob
    for config, _ in samples:
        assert predict(again, config) == predict(model, config)
    report(5, "zero training error on 500 samples; bit-exact round trip")


# -- criterion 6: block composition equals the dual-FU oracle --------------------

def test_criterion_06_parallel_fu_matches_oracle():
    oracle = dual_fu()
    estimators = oracle_estimators(oracle)
    profile = PlatformProfile("parallel_fu",
                              parallel_pairs={BlockKind.DwSep, BlockKind.PoolFc})
    rng = np.random.default_rng(606)
    parallel_blocks = []
    for _ in range(50):
        parallel_blocks.append(dwsep(C=int(rng.integers(1, 65)),
                                     size=int(rng.integers(3, 17)),
                                     K=int(rng.integers(1, 65))))
    for _ in range(50):
        size = int(rng.choice([2, 4, 6, 8]))
        parallel_blocks.append(poolfc(C=int(rng.integers(1, 65)), size=size,
                                      F=size, out=int(rng.integers(1, 33))))
    serial_blocks = []
    for _ in range(50):
        serial_blocks.append(resnet_plain(C=int(rng.integers(1, 33)),
                                          size=int(rng.integers(2, 17))))
    for _ in range(50):
        serial_blocks.append(resnet_down(C=int(rng.integers(1, 33)),
                                         size=int(rng.choice([4, 8, 16])),
                                         K=int(rng.integers(1, 65))))
    for block in parallel_blocks + serial_blocks:
        assert estimate_block(block, estimators, profile) == oracle.block_seconds(block)
    report(6, "estimate_block equals DualFuOracle on 200 random blocks")


# -- criterion 7: fusing-factor recovery ------------------------------------------

def test_criterion_07_fusing_factor_recovery():
    w, c = 2e-9, 1e-3
    rng = np.random.default_rng(707)
    measurements = []
    for _ in range(500):
        block = dwsep(C=int(rng.integers(4, 64)), size=int(rng.integers(4, 16)),
                      K=int(rng.integers(4, 64)))
        est_sum = 10e-3
        gap = w * block_ops(block) + c
        measured = est_sum - gap * float(rng.normal(1.0, 0.03))
        measurements.append((block, measured, est_sum))
    fitted = fit_fusing_factor(measurements)
    got_w, got_c = fitted.weights[BlockKind.DwSep]
    assert abs(got_w - w) / w < 0.05
    assert abs(got_c - c) / c < 0.05

    # dyadic constants and power-of-two op counts make the two-point
    # arithmetic exact in binary floating point
    w2, c2 = 2.0 ** -30, 2.0 ** -20
    pairs = [(2 ** 10, w2 * 2 ** 10 + c2), (2 ** 14, w2 * 2 ** 14 + c2)]
    exact = fit_fusing_factor_rows({BlockKind.DwSep: pairs})
    assert exact.weights[BlockKind.DwSep] == (w2, c2)
    report(7, "planted fusing factors recovered (noisy within 5%, two-point exact)")


# -- criterion 8: whole-network composition ---------------------------------------

def test_criterion_08_network_estimate_matches_oracle():
    oracle = dual_fu()
    graph = topo.mobilenet_style(groups=13)  # 28 weight layers plus ReLUs
    models = topo.exact_models(oracle, graph)
    profile = PlatformProfile("parallel_fu",
                              parallel_pairs={BlockKind.DwSep, BlockKind.PoolFc})
    estimate = estimate_network(graph, models, profile)
    deco = match_blocks(graph)
    assert len(deco.blocks) == 13
    oracle_total = sum(oracle.block_seconds(b.instance(graph)) for b in deco.blocks)
    oracle_total += sum(oracle.layer_seconds(graph.nodes[n])
                        for n in deco.residual_layers
                        if graph.nodes[n].kind is not OpKind.ReLU)
    assert abs(estimate.total_seconds - oracle_total) / oracle_total < 1e-3
    report(8, "estimate_network within 0.1% of oracle on 28-layer network")


# -- criterion 9: metric reference values ------------------------------------------

def test_criterion_09_metric_reference_values():
    assert mape([100, 200], [110, 180]) == pytest.approx(10.0, rel=1e-9)
    assert mape([50], [75]) == pytest.approx(50.0, rel=1e-9)
    assert mape([3.0, 4.0], [3.0, 4.0]) == 0.0
    assert rmspe([100, 200], [110, 180]) == pytest.approx(10.0, rel=1e-9)
    assert rmspe([100, 100], [100, 130]) == pytest.approx(
        100.0 * math.sqrt(0.045), rel=1e-9)
    assert rmspe([3.0, 4.0], [3.0, 4.0]) == 0.0
    report(9, "mape/rmspe reproduce reference values to 1e-9")


# -- criterion 10: byte-identical pipeline reruns ----------------------------------

def run_pipeline(base):
    """Every CLI stage once, fixed seeds; returns {artifact name: bytes}."""
    base.mkdir()
    backend = base / "backend.json"
    backend.write_text(json.dumps({
        "format_version": "1", "type": "synthetic", "kind": "Conv1D",
        "widths": {"C": 8, "K": 8}, "clock_hz": 1e9,
    }))
    bounds = base / "bounds.json"
    fileio.write_bounds(str(bounds), ParamBounds(OpKind.Conv1D, {
        "C": Bound(1, 64, 8), "C_w": Bound(1, 16, 8), "K": Bound(1, 64, 8),
        "F": Bound(3, 3, 3), "s": Bound(1, 1, 1), "pad": Bound(1, 1, 1),
    }))
    hw = base / "hw.json"
    hw.write_text(json.dumps({
        "format_version": "1", "operation": "Conv1D",
        "operation_params": ["C", "C_w", "K", "F", "s", "pad"],
        "dims": [8, 8], "mapping": ["C", "K"],
    }))
    layer = base / "layer.json"
    fileio.write_layer(str(layer), LayerConfig(
        OpKind.Conv1D, {"C": 13, "C_w": 9, "K": 21, "F": 3, "s": 1, "pad": 1}))
    net = base / "net.json"
    net.write_text(json.dumps(topo.conv_chain(2).to_dict()))
    backend2d = base / "backend2d.json"
    backend2d.write_text(json.dumps({
        "format_version": "1", "type": "synthetic",
        "widths_by_kind": {"Conv2D": {"C": 8, "K": 8}}, "clock_hz": 1e9,
    }))
    bounds2d = base / "bounds2d.json"
    fileio.write_bounds(str(bounds2d), ParamBounds(OpKind.Conv2D, {
        "C": Bound(1, 16, 8), "C_h": Bound(8, 8, 8), "C_w": Bound(8, 8, 8),
        "K": Bound(1, 16, 8), "F_h": Bound(3, 3, 3), "F_w": Bound(3, 3, 3),
        "s": Bound(1, 1, 1), "pad": Bound(1, 1, 1),
    }))
    widths2d = base / "widths2d.json"
    fileio.write_widths(str(widths2d), OpKind.Conv2D, {"C": 8, "K": 8})
    blocks_csv = base / "blocks.csv"
    blocks_csv.write_text("block_id,block_kind,ops,measured_s\n"
                          "b1,DwSep,100,0.007\nb2,DwSep,200,0.005\n")
    est_csv = base / "est.csv"
    est_csv.write_text("block_id,est_sum_s\nb1,0.010\nb2,0.010\n")
    test_set = base / "test_set.json"
    fileio.write_configs(str(test_set), [
        LayerConfig(OpKind.Conv1D,
                    {"C": c, "C_w": 5, "K": 11, "F": 3, "s": 1, "pad": 1})
        for c in (3, 9, 20, 33, 41, 60)])

    stages = [
        ["sweep", "--kind", "conv1d", "--param", "C", "--min", "1", "--max", "48",
         "--backend", str(backend), "--out", str(base / "sweep_C.json"),
         "--plot", str(base / "sweep_C.png")],
        ["detect", "--sweeps", str(base / "sweep_C.json"),
         "--out", str(base / "detected.json")],
        ["derive", "--hw", str(hw), "--out", str(base / "derived.json")],
        ["sample", "--widths", str(base / "derived.json"), "--bounds", str(bounds),
         "--n", "40", "--seed", "3", "--out", str(base / "configs.json")],
        ["measure", "--backend", str(backend), "--configs", str(base / "configs.json"),
         "--out", str(base / "store.csv")],
        ["train", "--data", str(base / "store.csv"), "--kind", "conv1d",
         "--widths", str(base / "derived.json"), "--bounds", str(bounds),
         "--n-trees", "6", "--no-bootstrap", "--feature-subsample", "1.0",
         "--seed", "5", "--out", str(base / "model.json")],
        ["estimate-layer", "--model", str(base / "model.json"),
         "--config", str(layer), "--out", str(base / "estimate.json")],
        ["fit-fusing", "--blocks", str(blocks_csv), "--estimates", str(est_csv),
         "--out", str(base / "profile.json")],
        ["compare", "--backend", str(backend), "--kind", "conv1d",
         "--widths", str(base / "derived.json"), "--bounds", str(bounds),
         "--sizes", "30", "--test-set", str(test_set), "--seeds", "2",
         "--seed", "7", "--n-trees", "4", "--no-bootstrap",
         "--feature-subsample", "1.0", "--out", str(base / "report.json")],
    ]
    # the network stage needs a models directory holding the 2-D model
    models_dir = base / "models"
    models_dir.mkdir()
    stages_2d = [
        ["sample", "--widths", str(widths2d), "--bounds", str(bounds2d),
         "--n", "4", "--seed", "0", "--out", str(base / "configs2d.json")],
        ["measure", "--backend", str(backend2d),
         "--configs", str(base / "configs2d.json"), "--out", str(base / "store2d.csv")],
        ["train", "--data", str(base / "store2d.csv"), "--kind", "conv2d",
         "--widths", str(widths2d), "--bounds", str(bounds2d), "--n-trees", "4",
         "--no-bootstrap", "--feature-subsample", "1.0",
         "--out", str(models_dir / "conv2d.json")],
        ["estimate-net", "--network", str(net), "--models", str(models_dir),
         "--profile", str(base / "net_profile.json"),
         "--out", str(base / "net_report.json")],
    ]
    (base / "net_profile.json").write_text(json.dumps({"mode": "plain_sum"}))
    for argv in stages + stages_2d:
        assert main(argv) == 0, argv
    artifacts = [
        "sweep_C.json", "sweep_C.png", "detected.json", "derived.json",
        "configs.json", "store.csv", "model.json", "estimate.json",
        "profile.json", "report.json", "report.csv", "report.png",
        "configs2d.json", "store2d.csv", "models/conv2d.json", "net_report.json",
    ]
    return {name: (base / name).read_bytes() for name in artifacts}


def test_criterion_10_pipeline_reruns_byte_identical(tmp_path):
    first = run_pipeline(tmp_path / "run_a")
    second = run_pipeline(tmp_path / "run_b")
    assert sorted(first) == sorted(second)
    differing = [name for name in first if first[name] != second[name]]
    assert differing == []
    report(10, f"all {len(first)} pipeline artifacts byte-identical across reruns")

"""Step-width detection: linearity test, delta peaks, width extraction."""

import numpy as np
import pytest

from prbench.backends import SyntheticOracle
from prbench.domain import Bound, OpKind, ParamBounds
from prbench.errors import DegenerateInput, InvalidParam, NoPeaks, NonUniformSteps
from prbench.prdetect import (
    DetectorConfig,
    determine_step_widths,
    execution_time_deltas,
    find_step_width,
)
from prbench.prdetect import test_linear_behavior as is_linear
from prbench.sweep import plan_sweeps, run_sweep

CFG = DetectorConfig()


def staircase(xs, width, height=1.0, base=0.0):
    """Ideal step function: jumps by `height` after every `width` points."""
    return [base + height * (-(-x // width)) for x in xs]


class TestLinearBehavior:
    def test_exactly_linear_is_linear(self):
        xs = list(range(1, 33))
        assert is_linear(xs, [2.0 * x for x in xs], CFG)

    def test_constant_is_linear(self):
        xs = list(range(1, 33))
        assert is_linear(xs, [5.0] * 32, CFG)

    def test_affine_with_offset_is_linear(self):
        xs = list(range(1, 33))
        assert is_linear(xs, [3.0 + 0.5 * x for x in xs], CFG)

    def test_steep_staircase_is_not_linear(self):
        xs = list(range(1, 33))
        ys = staircase(xs, 8)
        # Brute-force the relative RMSE against the endpoint line to confirm
        # the example actually exceeds the threshold.
        slope = (ys[-1] - ys[0]) / (xs[-1] - xs[0])
        fit = [slope * (x - xs[0]) + ys[0] for x in xs]
        rmse = np.sqrt(np.mean([(y - f) ** 2 for y, f in zip(ys, fit)]))
        rel = rmse / np.mean(ys)
        assert rel >= CFG.threshold_linear
        assert not is_linear(xs, ys, CFG)

    def test_scale_invariance(self):
        rng = np.random.default_rng(123)
        xs = list(range(1, 41))
        for _ in range(25):
            width = int(rng.choice([1, 4, 8]))
            ys = staircase(xs, width) if width > 1 else [0.5 * x for x in xs]
            scale = float(rng.uniform(1e-9, 1e6))
            a = is_linear(xs, ys, CFG)
            b = is_linear(xs, [y * scale for y in ys], CFG)
            assert a == b

    def test_too_few_points_rejected(self):
        with pytest.raises(DegenerateInput):
            is_linear([1], [1.0], CFG)

    def test_equal_xs_rejected(self):
        with pytest.raises(DegenerateInput):
            is_linear([3, 3], [1.0, 2.0], CFG)


class TestDeltas:
    def test_example(self):
        assert execution_time_deltas([1, 1, 3, 3]) == [0.0, 2.0, 0.0]

    def test_constant(self):
        assert execution_time_deltas([2.0, 2.0, 2.0]) == [0.0, 0.0]

    def test_linear_gives_constant_deltas(self):
        ys = [0.5 * x for x in range(10)]
        deltas = execution_time_deltas(ys)
        assert np.allclose(deltas, 0.5)

    def test_cumsum_inverts_deltas(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            ys = rng.uniform(1.0, 5.0, size=rng.integers(2, 40))
            deltas = execution_time_deltas(list(ys))
            rebuilt = ys[0] + np.concatenate([[0.0], np.cumsum(deltas)])
            assert np.allclose(rebuilt, ys)

    def test_single_point_rejected(self):
        with pytest.raises(DegenerateInput):
            execution_time_deltas([1.0])


class TestFindStepWidth:
    def test_staircase_width_four(self):
        xs = list(range(1, 25))
        deltas = execution_time_deltas(staircase(xs, 4))
        assert find_step_width(deltas, xs, CFG) == 4

    def test_uniform_peaks_every_eight(self):
        xs = list(range(1, 33))
        ys = staircase(xs, 8)
        deltas = execution_time_deltas(ys)
        assert find_step_width(deltas, xs, CFG) == 8

    def test_translation_invariance_in_y(self):
        xs = list(range(1, 33))
        for base in (0.0, 5.0, 123.456):
            deltas = execution_time_deltas(staircase(xs, 8, base=base))
            assert find_step_width(deltas, xs, CFG) == 8

    def test_single_jump_has_no_period(self):
        xs = list(range(1, 17))
        ys = [1.0] * 8 + [2.0] * 8
        with pytest.raises(NoPeaks):
            find_step_width(execution_time_deltas(ys), xs, CFG)

    def test_flat_signal_has_no_peaks(self):
        xs = list(range(1, 17))
        with pytest.raises(NoPeaks):
            find_step_width([0.0] * 15, xs, CFG)

    def test_irregular_spacing_rejected(self):
        xs = list(range(1, 25))
        ys = []
        level = 0.0
        for x in xs:
            if x in (5, 8, 18):  # spacings 3 and 10: no dominant period
                level += 1.0
            ys.append(level + 1.0)
        with pytest.raises(NonUniformSteps):
            find_step_width(execution_time_deltas(ys), xs, CFG)


class TestDetectorConfig:
    def test_threshold_must_be_positive(self):
        with pytest.raises(InvalidParam):
            DetectorConfig(threshold_linear=0.0)

    def test_prominence_must_be_a_fraction(self):
        with pytest.raises(InvalidParam):
            DetectorConfig(min_peak_prominence=1.5)


def sweep_results(widths, spans, kind=OpKind.Conv2D, noise=0.0, seed=0, repeats=1):
    """Sweeps of every param in `spans` against an oracle with `widths`."""
    oracle = SyntheticOracle({kind: widths}, clock_hz=1e9,
                             noise_rel_sd=noise, rng_seed=seed)
    f = 1 if kind is OpKind.PointwiseConv2D else 3
    pad = 0 if kind is OpKind.PointwiseConv2D else 1
    ranges = {
        "C": Bound(1, spans.get("C", 48), 8),
        "C_h": Bound(1, spans.get("C_h", 48), 8),
        "C_w": Bound(1, spans.get("C_w", 48), 8),
        "K": Bound(1, spans.get("K", 48), 8),
        "F_h": Bound(f, f, f),
        "F_w": Bound(f, f, f),
        "s": Bound(1, 1, 1),
        "pad": Bound(pad, pad, pad),
    }
    bounds = ParamBounds(kind, ranges)
    plans = plan_sweeps(kind, bounds, sorted(spans))
    return {p.swept_param: run_sweep(p, oracle, repeats=repeats) for p in plans}


class TestDetermineStepWidths:
    def test_stepped_and_linear_mix(self):
        sweeps = sweep_results({"C": 8, "K": 8}, {"C": 48, "K": 48, "C_w": 48})
        assert determine_step_widths(sweeps, CFG) == {"C": 8, "K": 8, "C_w": 1}

    def test_mixed_width_conv2d_table_recovered(self):
        # 2D convolution stepping at C:8, C_h:8, C_w:16, K:32 on the target
        # accelerator; sweeps span six steps of each parameter.
        widths = {"C": 8, "C_h": 8, "C_w": 16, "K": 32}
        spans = {"C": 48, "C_h": 48, "C_w": 96, "K": 192}
        sweeps = sweep_results(widths, spans)
        assert determine_step_widths(sweeps, CFG) == widths

    def test_pointwise_width_table_recovered(self):
        widths = {"C": 8, "C_h": 4, "C_w": 4, "K": 32}
        spans = {"C": 48, "C_h": 24, "C_w": 24, "K": 192}
        sweeps = sweep_results(widths, spans, kind=OpKind.PointwiseConv2D)
        assert determine_step_widths(sweeps, CFG) == widths

    def test_all_linear_oracle_gives_all_ones(self):
        sweeps = sweep_results({}, {"C": 48, "K": 48})
        assert determine_step_widths(sweeps, CFG) == {"C": 1, "K": 1}

    def test_error_is_annotated_with_param_name(self):
        # A single jump is not linear, yet gives only one delta peak.
        sweeps = sweep_results({"C": 8}, {"C": 48})
        xs = sweeps["C"].xs
        ys = tuple(1.0 if x <= 24 else 2.0 for x in xs)
        one_jump = type(sweeps["C"])(sweeps["C"].plan, xs, ys)
        with pytest.raises(NoPeaks) as exc:
            determine_step_widths({"C": one_jump}, CFG)
        assert "'C'" in str(exc.value)

    def test_oracle_round_trip_over_random_width_draws(self):
        rng = np.random.default_rng(2718)
        choices = [2, 4, 8, 16, 32]
        for trial in range(10):
            widths = {}
            spans = {}
            for name in ("C", "C_h", "C_w", "K"):
                if rng.random() < 0.5:
                    w = int(rng.choice(choices))
                    widths[name] = w
                    spans[name] = 6 * w
                else:
                    spans[name] = 48
            sweeps = sweep_results(widths, spans, seed=trial)
            expected = {n: widths.get(n, 1) for n in spans}
            assert determine_step_widths(sweeps, CFG) == expected, (trial, widths)

    def test_median_repeats_absorb_noise(self):
        widths = {"C": 8, "K": 8}
        spans = {"C": 48, "K": 48}
        sweeps = sweep_results(widths, spans, noise=0.03, seed=7, repeats=11)
        assert determine_step_widths(sweeps, CFG) == widths

import math
from dataclasses import replace

import numpy as np
import pytest

from errors import ConfigError, WeightDesignError
from metrics import (DB_FLOOR, DEFAULT_DEPTHS, Beampattern, MonteCarloConfig, NullResult,
                     _average_widths, compute_beampattern, dipole_nd_analytic, find_nulls,
                     monte_carlo_metrics, null_metrics, null_width, predicted_nd,
                     refine_null_angle, save_beampattern_csv, save_null_metrics_json)
from array_model import SamplingSpec
from quantization import QuantizerSpec
from weights import null_angles

from conftest import FREQUENCY, make_scenario, reference_geometry

PATTERNS = ['dipole', 'cardioid', 'hypercardioid', 'supercardioid']


def _width(scenario, depth, resolution=0.1):
    bp = compute_beampattern(scenario, resolution)
    metrics = null_metrics(bp, scenario, [depth])
    return [n.widths[depth] for n in metrics.nulls]


def test_dipole_oracle_16_bit(dipole_geometry):
    assert dipole_nd_analytic(QuantizerSpec(16), dipole_geometry, FREQUENCY) == pytest.approx(-83.1, abs=0.1)


@pytest.mark.parametrize("bits, expected", [(12, -58.9), (16, -83.1), (20, -107.1), (24, -131.2)])
def test_dipole_oracle_row(dipole_geometry, bits, expected):
    assert dipole_nd_analytic(QuantizerSpec(bits), dipole_geometry, FREQUENCY) == pytest.approx(expected, abs=0.15)


def test_dipole_oracle_edges(dipole_geometry):
    assert dipole_nd_analytic(None, dipole_geometry, FREQUENCY) == -math.inf
    with pytest.raises(WeightDesignError):
        dipole_nd_analytic(QuantizerSpec(16), reference_geometry(3), FREQUENCY)


def test_noise_model_matches_dipole_oracle(dipole_geometry):
    scenario = make_scenario('dipole', 1)
    assert predicted_nd(scenario.weights, QuantizerSpec(16)) == pytest.approx(
        dipole_nd_analytic(QuantizerSpec(16), dipole_geometry, FREQUENCY), abs=1e-6)


def test_unquantized_cardioid_beampattern():
    bp = compute_beampattern(make_scenario('cardioid', 1, num_samples=1024), 0.1)
    assert bp.angles_deg.size == 3600
    assert bp.power_db[0] == 0.0
    assert np.max(bp.power_db) == 0.0
    assert bp.power_db[1800] <= -190.0
    assert np.min(bp.power_db) >= DB_FLOOR


def test_beampattern_is_symmetric():
    bp = compute_beampattern(make_scenario('hypercardioid', 2, bits=16, num_samples=512), 1.0)
    np.testing.assert_array_equal(bp.power_db[1:180], bp.power_db[359:180:-1])


@pytest.mark.parametrize("pattern, order, expected", [
    ('dipole', 1, [90.0]),
    ('cardioid', 1, [180.0]),
    ('hypercardioid', 1, [120.0]),
    ('supercardioid', 1, [135.0]),
    ('hypercardioid', 2, [72.0, 144.0]),
])
def test_nulls_found_at_design_angles(pattern, order, expected):
    scenario = make_scenario(pattern, order, bits=16, num_samples=2048)
    bp = compute_beampattern(scenario, 0.5)
    nulls = find_nulls(bp, scenario)
    assert [n.angle_deg for n in nulls] == pytest.approx(expected, abs=0.5)
    assert all(n.depth_db < -40.0 for n in nulls)


def test_unquantized_nulls_are_floored():
    for pattern in PATTERNS:
        scenario = make_scenario(pattern, 1, num_samples=1024)
        bp = compute_beampattern(scenario, 1.0)
        nulls = find_nulls(bp, scenario)
        assert nulls and all(n.depth_db <= -190.0 for n in nulls)


@pytest.mark.parametrize("pattern, expected", [
    ('dipole', 37.7),
    ('cardioid', 136.1),
    ('hypercardioid', 74.8),
    ('supercardioid', None),
])
def test_first_order_width_at_minus_10(pattern, expected):
    widths = _width(make_scenario(pattern, 1, num_samples=1024), -10.0)
    if expected is None:
        assert widths == [None]
    else:
        assert widths[0] == pytest.approx(expected, abs=1.0)


@pytest.mark.parametrize("pattern, expected", [
    ('dipole', 3.62),
    ('cardioid', 41.0),
    ('hypercardioid', 6.28),
    ('supercardioid', 8.79),
])
def test_first_order_width_at_minus_30(pattern, expected):
    widths = _width(make_scenario(pattern, 1, num_samples=1024), -30.0)
    assert widths[0] == pytest.approx(expected, abs=0.3)


def test_dipole_widths_broaden_with_order():
    widths = [_width(make_scenario('dipole', order, num_samples=1024), -10.0)[0]
              for order in (1, 2, 3)]
    assert widths[0] < widths[1] < widths[2]
    assert widths[2] == pytest.approx(86.1, abs=1.0)


def test_second_order_dipole_width_at_minus_20():
    assert _width(make_scenario('dipole', 2, num_samples=1024), -20.0)[0] == pytest.approx(36.4, abs=1.0)


def test_width_beyond_depth_is_not_available():
    bp = Beampattern.from_powers(np.arange(360.0), 1.0 + np.cos(np.radians(np.arange(360.0))))
    null = find_nulls(bp, threshold_db=-10.0)[0]
    assert null_width(bp, NullResult(null.angle_deg, -40.0), -50.0) is None
    with pytest.raises(ConfigError):
        null_width(bp, null, 0.0)


def test_width_without_bounding_lobe_is_not_available():
    angles = np.arange(360.0)
    # Nulls at 90 and 270 separated by lobes at 0 (0 dB) and 180 (-20 dB)
    linear = np.abs(np.cos(np.radians(angles))) ** 2 * np.where(np.cos(np.radians(angles)) > 0, 1.0, 0.01)
    bp = Beampattern.from_powers(angles, linear)
    null = NullResult(90.0, DB_FLOOR)
    assert null_width(bp, null, -10.0) is None
    assert null_width(bp, null, -30.0) is not None


def _config(runs, **kwargs):
    return MonteCarloConfig(runs=runs, seed=3, sampling=SamplingSpec(44100.0, 8192),
                            depths_db=(), width_runs=0, **kwargs)


@pytest.mark.parametrize("bits", [12, 16, 20, 24])
def test_monte_carlo_dipole_matches_oracle(dipole_geometry, bits):
    metrics = monte_carlo_metrics(_config(40), make_scenario('dipole', 1, bits=bits))
    analytic = dipole_nd_analytic(QuantizerSpec(bits), dipole_geometry, FREQUENCY)
    assert metrics.nulls[0].depth_db == pytest.approx(analytic, abs=0.5)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_monte_carlo_first_order_matches_noise_model(pattern):
    scenario = make_scenario(pattern, 1, bits=16)
    metrics = monte_carlo_metrics(_config(40), scenario)
    assert metrics.nulls[0].depth_db == pytest.approx(
        predicted_nd(scenario.weights, QuantizerSpec(16)), abs=1.0)


@pytest.mark.parametrize("pattern", PATTERNS)
@pytest.mark.parametrize("low, high", [(12, 16), (16, 20), (20, 24)])
def test_bit_slope(pattern, low, high):
    coarse = monte_carlo_metrics(_config(20), make_scenario(pattern, 1, bits=low)).nulls[0].depth_db
    fine = monte_carlo_metrics(_config(20), make_scenario(pattern, 1, bits=high)).nulls[0].depth_db
    assert fine - coarse == pytest.approx(-24.1, abs=1.0)


def test_hypercardioid_16_bit_depth_follows_noise_model():
    scenario = make_scenario('hypercardioid', 1, bits=16)
    predicted = predicted_nd(scenario.weights, QuantizerSpec(16))
    # 1 / (2*sin(3*kappa/4)) per weight, unit peak at endfire
    assert predicted == pytest.approx(-86.56, abs=0.05)
    assert monte_carlo_metrics(_config(40), scenario).nulls[0].depth_db == pytest.approx(predicted, abs=1.0)


@pytest.mark.parametrize("pattern, expected", [
    ('dipole', 90.0),
    ('cardioid', 180.0),
    ('hypercardioid', 120.0),
    ('supercardioid', 135.0),
])
def test_monte_carlo_null_location(pattern, expected):
    metrics = monte_carlo_metrics(_config(8), make_scenario(pattern, 1, bits=16))
    assert metrics.nulls[0].angle_deg == pytest.approx(expected, abs=0.5)


@pytest.mark.parametrize("spec_args", [('dipole', 1), ('cardioid', 3), ('hypercardioid', 2),
                                       ('supercardioid', 3)])
def test_designed_nulls_refine_to_themselves(spec_args):
    scenario = make_scenario(*spec_args)
    for angle in null_angles(scenario.weights.spec).angles:
        assert refine_null_angle(scenario.weights, angle) == angle


def test_monte_carlo_locates_displaced_null():
    scenario = make_scenario('dipole', 1, bits=16)
    weights = scenario.weights
    shifted = replace(weights, phases=(weights.phases[0], weights.phases[1] + 0.01))
    kappa = 2.0 * math.pi * 0.04
    expected = math.degrees(math.acos(0.01 / kappa))
    metrics = monte_carlo_metrics(_config(6), replace(scenario, weights=shifted))
    assert metrics.nulls[0].angle_deg == pytest.approx(expected, abs=0.01)
    assert abs(metrics.nulls[0].angle_deg - 90.0) > 2.0
    # Read at the designed 90 deg the residual would sit near -28 dB
    assert metrics.nulls[0].depth_db < -75.0
    assert monte_carlo_metrics(_config(6), scenario).nulls[0].angle_deg == 90.0


@pytest.mark.parametrize("per_run, expected", [
    ([4.0, 6.0], 5.0),
    ([4.0, None], 4.0),
    ([4.0, None, None], None),
    ([None, None], None),
])
def test_width_average_needs_half_the_runs(per_run, expected):
    assert _average_widths(per_run) == expected


@pytest.mark.parametrize("pattern, expected", [
    ('dipole', 3.6),
    ('cardioid', 40.0),
    ('hypercardioid', 6.0),
    ('supercardioid', 8.0),
])
def test_monte_carlo_16_bit_width_at_minus_30(pattern, expected):
    cfg = MonteCarloConfig(runs=4, seed=3, sampling=SamplingSpec(44100.0, 8192),
                           depths_db=(-30.0,), width_runs=4)
    metrics = monte_carlo_metrics(cfg, make_scenario(pattern, 1, bits=16))
    assert metrics.nulls[0].widths[-30.0] == pytest.approx(expected, abs=1.0)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_16_bit_widths_stay_near_unquantized(pattern):
    depths = (-10.0, -20.0, -30.0)
    cfg = MonteCarloConfig(runs=4, seed=3, sampling=SamplingSpec(44100.0, 8192),
                           depths_db=depths, width_runs=4)
    quantized = monte_carlo_metrics(cfg, make_scenario(pattern, 1, bits=16)).nulls[0].widths
    for depth in depths:
        ideal = _width(make_scenario(pattern, 1, num_samples=1024), depth)[0]
        if ideal is not None and quantized[depth] is not None:
            assert quantized[depth] <= ideal + 1.0


@pytest.mark.parametrize("pattern, order", [(p, o) for p in PATTERNS for o in (1, 2)])
def test_widths_shrink_with_depth(pattern, order):
    scenario = make_scenario(pattern, order, num_samples=1024)
    bp = compute_beampattern(scenario, 0.1)
    for null in null_metrics(bp, scenario, DEFAULT_DEPTHS).nulls:
        finite = [null.widths[d] for d in sorted(DEFAULT_DEPTHS, reverse=True)
                  if null.widths[d] is not None]
        assert finite
        assert all(deeper <= shallower for shallower, deeper in zip(finite, finite[1:]))


def test_monte_carlo_is_deterministic_across_workers():
    scenario = make_scenario('hypercardioid', 2, bits=16, num_samples=1024)
    cfg = MonteCarloConfig(runs=6, seed=9, sampling=SamplingSpec(44100.0, 1024),
                           resolution_deg=1.0, depths_db=(-30.0,), width_runs=2)
    serial = monte_carlo_metrics(cfg, scenario).to_dict()
    parallel = monte_carlo_metrics(MonteCarloConfig(**{**cfg.__dict__, 'workers': 3}), scenario).to_dict()
    assert serial == parallel
    assert monte_carlo_metrics(cfg, scenario).to_dict() == serial


def test_invalid_monte_carlo_config():
    with pytest.raises(ConfigError):
        MonteCarloConfig(runs=0)
    with pytest.raises(ConfigError):
        MonteCarloConfig(resolution_deg=0.0)


def test_exports_are_byte_identical(tmp_path):
    scenario = make_scenario('dipole', 1, bits=16, num_samples=512)
    paths = []
    for name in ('a', 'b'):
        bp = compute_beampattern(scenario, 1.0)
        metrics = null_metrics(bp, scenario, [-30.0])
        paths.append((save_beampattern_csv(bp, tmp_path / f"{name}.csv", {'seed': 0}),
                      save_null_metrics_json(metrics, tmp_path / f"{name}.json", {'seed': 0})))
    for first, second in zip(*paths):
        assert first.read_bytes() == second.read_bytes()
    lines = paths[0][0].read_text().splitlines()
    assert lines[0].startswith("# config: ")
    assert lines[1] == "theta_deg,power_db"
    assert len(lines) == 2 + 360


@pytest.mark.slow
@pytest.mark.parametrize("bits, expected", [(12, -58.9), (16, -83.1), (20, -107.1), (24, -131.2)])
def test_dipole_row_full_scale(bits, expected):
    metrics = monte_carlo_metrics(MonteCarloConfig(runs=5000, depths_db=(), width_runs=0),
                                  make_scenario('dipole', 1, bits=bits))
    assert metrics.nulls[0].depth_db == pytest.approx(expected, abs=1.0)


@pytest.mark.slow
@pytest.mark.parametrize("pattern, bits, expected", [
    ('cardioid', 16, -88.5),
    ('supercardioid', 12, -63.5),
])
def test_first_order_spot_checks_full_scale(pattern, bits, expected):
    metrics = monte_carlo_metrics(MonteCarloConfig(runs=5000, depths_db=(), width_runs=0),
                                  make_scenario(pattern, 1, bits=bits))
    assert metrics.nulls[0].depth_db == pytest.approx(expected, abs=1.0)


@pytest.mark.slow
@pytest.mark.parametrize("pattern", PATTERNS)
def test_third_order_widths_at_minus_60_not_available(pattern):
    cfg = MonteCarloConfig(runs=4, depths_db=(-60.0,), width_runs=4)
    metrics = monte_carlo_metrics(cfg, make_scenario(pattern, 3, bits=16))
    assert all(n.widths[-60.0] is None for n in metrics.nulls)

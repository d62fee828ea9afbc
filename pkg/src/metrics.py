"""
Metrics Module
Beampattern sweeps, null search and the null-related measures:
null depth (ND) and null width as a function of depth (NW(d)).

Patterns are normalized to their maximum (0 dB). Depths and widths are read off
that normalized curve; Monte Carlo aggregation averages null powers in the linear
domain before converting to dB.
"""

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, signal

from array_model import (ArrayGeometry, SamplingSpec, SourceSpec, fold_angle_deg,
                         random_channels, synth_array, wavelength)
from beamformer import combine, output_power, quantization_noise_model
from errors import ChannelMismatchError, ConfigError, SignalError, WeightDesignError
from quantization import QuantizerSpec, quantize_sequence
from weights import BeamWeights, array_response, null_angles

DB_FLOOR = -300.0
POWER_FLOOR = 10.0 ** (DB_FLOOR / 10.0)
NOT_AVAILABLE = "N.A."
DEFAULT_DEPTHS = (-10.0, -20.0, -30.0, -40.0, -50.0, -60.0)

# Half-width of the window searched around each designed null per Monte Carlo run
NULL_SEARCH_SPAN_DEG = 5.0
# Upper bound on samples synthesized at once (angles x mics x samples)
_CHUNK_ELEMENTS = 2_000_000


def to_db(ratio):
    """Power ratio in dB, clamped at DB_FLOOR"""
    result = 10.0 * np.log10(np.maximum(ratio, POWER_FLOOR))
    return float(result) if np.ndim(result) == 0 else result


@dataclass(frozen=True)
class Scenario:
    """Everything needed to evaluate the beamformer at one incidence angle"""

    source: SourceSpec
    geometry: ArrayGeometry
    weights: BeamWeights
    sampling: SamplingSpec = SamplingSpec()
    quantizer: Optional[QuantizerSpec] = None

    def __post_init__(self):
        if self.geometry.num_mics != self.weights.num_mics:
            raise ChannelMismatchError(
                f"geometry has {self.geometry.num_mics} mics, weights {self.weights.num_mics}")
        self.sampling.check_tone(self.source.frequency)
        if self.quantizer is not None and self.source.amplitude > self.quantizer.full_scale:
            raise SignalError(f"amplitude {self.source.amplitude} exceeds full scale "
                              f"{self.quantizer.full_scale}")

    @property
    def channels(self):
        return self.weights.channels

    def unquantized(self) -> 'Scenario':
        return replace(self, quantizer=None)

    def with_draw(self, initial_phase: float, channels) -> 'Scenario':
        return replace(self, source=self.source.with_phase(initial_phase),
                       weights=self.weights.with_channels(channels))


@dataclass(frozen=True)
class Beampattern:
    """Normalized power (dB) against angle; the maximum sits at exactly 0 dB"""

    angles_deg: np.ndarray
    power_db: np.ndarray
    reference_power: float
    max_angle_deg: float

    @classmethod
    def from_powers(cls, angles_deg, powers) -> 'Beampattern':
        angles_deg = np.asarray(angles_deg, dtype=float)
        powers = np.asarray(powers, dtype=float)
        peak = int(np.argmax(powers))
        reference = float(powers[peak])
        if not reference > 0.0:
            raise SignalError("beampattern has no power at any angle")
        power_db = to_db(powers / reference)
        power_db[peak] = 0.0
        return cls(angles_deg, power_db, reference, float(angles_deg[peak]))

    def rows(self) -> List[Tuple[float, float]]:
        return [(float(a), float(p)) for a, p in zip(self.angles_deg, self.power_db)]


@dataclass
class NullResult:
    angle_deg: float
    depth_db: float
    widths: Dict[float, Optional[float]] = field(default_factory=dict)
    floor_limited: bool = False

    def to_dict(self) -> dict:
        return {
            'angle_deg': round(self.angle_deg, 4),
            'depth_db': round(self.depth_db, 4),
            'floor_limited': self.floor_limited,
            'widths_deg': {format_depth(d): (NOT_AVAILABLE if w is None else round(w, 4))
                           for d, w in sorted(self.widths.items(), reverse=True)},
        }


@dataclass
class NullMetrics:
    nulls: List[NullResult]
    runs: int = 1
    reference_angle_deg: float = 0.0

    def to_dict(self) -> dict:
        return {
            'runs': self.runs,
            'reference_angle_deg': self.reference_angle_deg,
            'nulls': [n.to_dict() for n in self.nulls],
        }


@dataclass(frozen=True)
class MonteCarloConfig:
    runs: int = 5000
    seed: int = 0
    sampling: SamplingSpec = SamplingSpec()
    resolution_deg: float = 0.1
    refine_tolerance_deg: float = 0.001
    depths_db: Tuple[float, ...] = DEFAULT_DEPTHS
    width_runs: int = 4
    workers: int = 1
    null_threshold_db: float = -10.0
    prominence_db: float = 3.0

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError('runs', f"must be at least 1, got {self.runs}")
        if not self.resolution_deg > 0.0:
            raise ConfigError('resolution_deg', f"must be positive, got {self.resolution_deg}")
        if self.workers < 1:
            raise ConfigError('workers', f"must be at least 1, got {self.workers}")


def format_depth(depth_db: float) -> str:
    return f"{depth_db:g}"


def evaluate_power(scenario: Scenario, angles_deg) -> np.ndarray:
    """Mean-square power of the (optionally quantized) beamformed output at each angle"""
    folded = np.atleast_1d(fold_angle_deg(angles_deg)).ravel()
    per_angle = scenario.weights.num_mics * int(scenario.sampling.num_samples)
    chunk = max(1, _CHUNK_ELEMENTS // per_angle)
    compensated = scenario.weights.compensated
    powers = np.empty(folded.size)
    for start in range(0, folded.size, chunk):
        block = folded[start:start + chunk]
        in_phase, quadrature = synth_array(scenario.source, scenario.geometry, scenario.channels,
                                           np.radians(block), scenario.sampling)
        if scenario.quantizer is not None:
            in_phase = quantize_sequence(in_phase, scenario.quantizer)
            quadrature = quantize_sequence(quadrature, scenario.quantizer)
        powers[start:start + block.size] = output_power(combine(in_phase, quadrature, compensated))
    return powers


def angle_grid(resolution_deg: float) -> np.ndarray:
    count = int(round(360.0 / resolution_deg))
    return np.arange(count) * (360.0 / count)


def compute_beampattern(scenario: Scenario, resolution_deg: float = 0.1) -> Beampattern:
    """Sweep [0, 360) and normalize to the maximum"""
    grid = angle_grid(resolution_deg)
    folded = np.round(fold_angle_deg(grid), 9)
    unique, inverse = np.unique(folded, return_inverse=True)
    powers = evaluate_power(scenario, unique)[inverse]
    return Beampattern.from_powers(grid, powers)


def _circular_peaks(values: np.ndarray, prominence: float) -> np.ndarray:
    """Indices of local maxima of a circular sequence with at least the given prominence"""
    n = values.size
    pad = n // 2
    extended = np.concatenate([values[n - pad:], values, values[:pad]])
    peaks, _ = signal.find_peaks(extended, prominence=prominence)
    idx = peaks - pad
    return np.unique(idx[(idx >= 0) & (idx < n)])


def find_nulls(bp: Beampattern, scenario: Optional[Scenario] = None,
               threshold_db: float = -10.0, tolerance_deg: float = 0.001,
               prominence_db: float = 3.0, half_plane: bool = True) -> List[NullResult]:
    """Local minima below threshold_db, refined by bounded search when a scenario is given.

    Noise-floor ripple is ignored through the prominence requirement. With
    half_plane only minima in [0, 180] are kept, since a simulated linear array
    mirrors them onto (180, 360).
    """
    minima = _circular_peaks(-bp.power_db, prominence_db)
    nulls = []
    for idx in minima:
        angle = float(bp.angles_deg[idx])
        depth = float(bp.power_db[idx])
        if depth >= threshold_db or (half_plane and angle > 180.0):
            continue
        if scenario is not None:
            angle, depth = _refine_null(bp, scenario, idx, tolerance_deg)
        nulls.append(NullResult(angle, depth))
    return nulls


def _refine_null(bp: Beampattern, scenario: Scenario, idx: int,
                 tolerance_deg: float) -> Tuple[float, float]:
    n = bp.angles_deg.size
    angle = float(bp.angles_deg[idx])
    depth = float(bp.power_db[idx])
    left = (angle - bp.angles_deg[(idx - 1) % n]) % 360.0
    right = (bp.angles_deg[(idx + 1) % n] - angle) % 360.0

    def depth_at(theta: float) -> float:
        return to_db(evaluate_power(scenario, [theta])[0] / bp.reference_power)

    result = optimize.minimize_scalar(depth_at, bounds=(angle - left, angle + right),
                                      method='bounded', options={'xatol': tolerance_deg})
    if result.fun < depth:
        return float(result.x) % 360.0, float(result.fun)
    return angle, depth


def null_width(bp: Beampattern, null: NullResult, depth_db: float,
               prominence_db: float = 3.0) -> Optional[float]:
    """Width of the region around the null lying at or below depth_db.

    Crossings are interpolated linearly in dB. Returns None (N.A.) when the
    null never reaches depth_db, or when one side runs into a lobe maximum
    that stays below depth_db, i.e. no bounding lobe exists at that depth.
    """
    if depth_db >= 0.0:
        raise ConfigError('depth_db', f"must be negative, got {depth_db}")
    if null.depth_db > depth_db:
        return None
    peaks = set(int(i) for i in _circular_peaks(bp.power_db, prominence_db))
    right = _walk(bp, null, depth_db, peaks, +1)
    if right is None:
        return None
    left = _walk(bp, null, depth_db, peaks, -1)
    if left is None:
        return None
    return right - left


def _walk(bp: Beampattern, null: NullResult, depth_db: float, peaks: set,
          direction: int) -> Optional[float]:
    angles, values = bp.angles_deg, bp.power_db
    n = angles.size
    origin = null.angle_deg % 360.0
    if direction > 0:
        i = int(np.searchsorted(angles, origin, side='right')) % n
    else:
        i = (int(np.searchsorted(angles, origin, side='left')) - 1) % n
    prev_angle, prev_value = null.angle_deg, null.depth_db
    for _ in range(n):
        if direction > 0:
            angle = prev_angle + (angles[i] - prev_angle) % 360.0
        else:
            angle = prev_angle - (prev_angle - angles[i]) % 360.0
        value = values[i]
        if value > depth_db:
            frac = (depth_db - prev_value) / (value - prev_value)
            return prev_angle + frac * (angle - prev_angle)
        if i in peaks:
            return None
        prev_angle, prev_value = angle, value
        i = (i + direction) % n
    return None


def null_metrics(bp: Beampattern, scenario: Optional[Scenario],
                 depths_db: Iterable[float] = DEFAULT_DEPTHS, threshold_db: float = -10.0,
                 tolerance_deg: float = 0.001, prominence_db: float = 3.0,
                 half_plane: bool = True) -> NullMetrics:
    """find_nulls followed by null_width at every requested depth"""
    nulls = find_nulls(bp, scenario, threshold_db, tolerance_deg, prominence_db, half_plane)
    for null in nulls:
        null.widths = {float(d): null_width(bp, null, d, prominence_db) for d in depths_db}
    return NullMetrics(nulls, runs=1, reference_angle_deg=bp.max_angle_deg)


def reference_angle(weights: BeamWeights, resolution_deg: float = 0.1) -> float:
    """Angle in [0, 180] of the unquantized response maximum"""
    grid = np.arange(int(round(180.0 / resolution_deg)) + 1) * resolution_deg
    response = np.abs(array_response(weights, np.radians(grid)))
    return float(grid[int(np.argmax(response))])


def draw_scenario(scenario: Scenario, seed: int, run: int) -> Scenario:
    """Per-run draw of phi_s and phi_i ~ U[0, 2*pi) from the stream (seed, run)"""
    rng = np.random.default_rng([seed, run])
    initial_phase = rng.uniform(0.0, 2.0 * math.pi)
    channels = random_channels(scenario.weights.num_mics, rng)
    return scenario.with_draw(initial_phase, channels)


def _ordered_map(func: Callable, items: Sequence, workers: int) -> List:
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _average_widths(per_run: List[Optional[float]]) -> Optional[float]:
    finite = [w for w in per_run if w is not None]
    if not finite or len(finite) * 2 < len(per_run):  # more than half N.A.
        return None
    return float(np.mean(finite))


def refine_null_angle(weights: BeamWeights, design_deg: float, resolution_deg: float = 0.1,
                      tolerance_deg: float = 0.001) -> float:
    """Angle in [0, 180] of the unquantized response minimum near a designed null.

    A grid at resolution_deg over +/- NULL_SEARCH_SPAN_DEG is followed by a bounded
    search of +/- resolution_deg around its best point. The refined point replaces
    the grid point only when it is deeper, so an exact design null stays exact.
    """
    def power_at(theta_deg) -> np.ndarray:
        return np.abs(array_response(weights, np.radians(theta_deg), through_channels=True)) ** 2

    steps = int(math.ceil(NULL_SEARCH_SPAN_DEG / resolution_deg))
    grid = design_deg + np.arange(-steps, steps + 1) * resolution_deg
    powers = power_at(grid)
    best = int(np.argmin(powers))
    angle, power = float(grid[best]), float(powers[best])
    result = optimize.minimize_scalar(lambda t: float(power_at(t)[0]),
                                      bounds=(angle - resolution_deg, angle + resolution_deg),
                                      method='bounded', options={'xatol': tolerance_deg})
    if result.fun < power:
        angle = float(result.x)
    return float(fold_angle_deg(angle))


def monte_carlo_metrics(cfg: MonteCarloConfig, scenario: Scenario) -> NullMetrics:
    """ND and NW(d) near the designed nulls, averaged over randomly drawn phases.

    Each run locates every null on its own unquantized response (refine_null_angle)
    and reads the possibly quantized power there. ND: each run's null power is
    normalized by its power at the pattern maximum, the ratios are averaged linearly
    and then converted to dB; the reported angle is the mean located angle. NW: the
    first width_runs runs are swept in full and their widths averaged in degrees; a
    width is N.A. when more than half the runs report N.A. Results depend only on
    (seed, runs).
    """
    scenario = replace(scenario, sampling=cfg.sampling)
    design = null_angles(scenario.weights.spec).angles
    ref_angle = reference_angle(scenario.weights)

    def null_ratios(run: int) -> Tuple[np.ndarray, np.ndarray]:
        drawn = draw_scenario(scenario, cfg.seed, run)
        located = np.array([refine_null_angle(drawn.weights, a, cfg.resolution_deg,
                                              cfg.refine_tolerance_deg) for a in design])
        powers = evaluate_power(drawn, np.concatenate([[ref_angle], located]))
        return located, powers[1:] / powers[0]

    per_run = _ordered_map(null_ratios, range(cfg.runs), cfg.workers)
    located = np.array([angles for angles, _ in per_run])
    ratios = np.array([r for _, r in per_run])
    depths = np.atleast_1d(to_db(np.mean(ratios, axis=0)))
    mean_angles = np.mean(located, axis=0)

    width_runs = min(cfg.width_runs, cfg.runs)
    per_run_widths: List[List[Dict[float, Optional[float]]]] = []
    if width_runs > 0 and cfg.depths_db:
        def run_widths(run: int) -> List[Dict[float, Optional[float]]]:
            drawn = draw_scenario(scenario, cfg.seed, run)
            bp = compute_beampattern(drawn, cfg.resolution_deg)
            result = []
            for k, angle in enumerate(design):
                null = NullResult(float(located[run, k]), to_db(ratios[run, k]))
                result.append({float(d): null_width(bp, null, d, cfg.prominence_db)
                               for d in cfg.depths_db})
            return result

        per_run_widths = _ordered_map(run_widths, range(width_runs), cfg.workers)

    nulls = []
    for k in range(len(design)):
        widths = {float(d): _average_widths([run[k][float(d)] for run in per_run_widths])
                  for d in cfg.depths_db} if per_run_widths else {}
        nulls.append(NullResult(float(mean_angles[k]), float(depths[k]), widths))
    logging.info(f"Monte Carlo {scenario.weights.spec.label} "
                 f"{'unquantized' if scenario.quantizer is None else f'{scenario.quantizer.bits}-bit'}"
                 f" over {cfg.runs} runs: ND = {[round(n.depth_db, 2) for n in nulls]} dB")
    return NullMetrics(nulls, runs=cfg.runs, reference_angle_deg=ref_angle)


def dipole_nd_analytic(spec: Optional[QuantizerSpec], geom: ArrayGeometry, frequency: float,
                       amplitude: float = 1.0) -> float:
    """Closed-form ND of the first-order dipole: 10*log10(step^2 / (12*A^2*sin^2(pi*delta/lambda)))"""
    if geom.num_mics != 2:
        raise WeightDesignError(f"dipole oracle needs a two-microphone array, got {geom.num_mics}")
    if spec is None or spec.step == 0.0:
        return -math.inf
    s = math.sin(math.pi * geom.spacing / wavelength(geom, frequency))
    return 10.0 * math.log10(spec.step ** 2 / (12.0 * amplitude ** 2 * s ** 2))


def predicted_nd(weights: BeamWeights, spec: QuantizerSpec, amplitude: float = 1.0) -> float:
    """Quantization error-term model normalized by the maximum signal power, for any order"""
    grid = np.radians(np.arange(1801) * 0.1)
    peak = float(np.max(np.abs(array_response(weights, grid))) ** 2)
    noise = quantization_noise_model(weights, spec)
    return 10.0 * math.log10(noise / (amplitude ** 2 * peak / 2.0))


def _write_header(f, header: Optional[dict]) -> None:
    if header:
        f.write(f"# config: {json.dumps(header, sort_keys=True)}\n")


def save_beampattern_csv(bp: Beampattern, path, header: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        _write_header(f, header)
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['theta_deg', 'power_db'])
        for angle, power in bp.rows():
            writer.writerow([f"{angle:.3f}", f"{power:.4f}"])
    logging.info(f"Beampattern ({bp.angles_deg.size} rows) written to {path}")
    return path


def save_null_metrics_json(metrics: NullMetrics, path, header: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'config': header or {}, **metrics.to_dict()}
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write('\n')
    logging.info(f"Null metrics written to {path}")
    return path

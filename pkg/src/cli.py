"""
Command Line Module
Reproduction harness for the quantized DMA experiments: null-depth and null-width
tables, beampattern dumps, synthetic measurement fixtures, the measurement
pipeline, the analytic dipole oracle and a sample-rate sensitivity report.

Every file written embeds the resolved configuration. Parallelism settings are
left out of that header so that output does not depend on the worker count.
"""

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from array_model import ArrayGeometry, SamplingSpec, SourceSpec, synth_array
from errors import ConfigError, SimulationError
from measurement import (SweepEntry, SweepManifest, calibrate_from_reference, load_recording,
                         measured_beampattern, measured_null_metrics, save_report, write_recording)
from metrics import (NOT_AVAILABLE, MonteCarloConfig, NullMetrics, Scenario, compute_beampattern,
                     dipole_nd_analytic, draw_scenario, format_depth, monte_carlo_metrics,
                     null_metrics, predicted_nd, save_beampattern_csv, save_null_metrics_json)
from quantization import QuantizerSpec, count_saturated, quantize_sequence, snr_db
from settings_manager import UNQUANTIZED, ExperimentConfig, load_config
from weights import BeamPattern, PatternSpec, design_weights, load_weights, null_angles, save_weights

# Entries at or below this level stand for an ideal (infinitely deep) null
STAR_THRESHOLD_DB = -190.0
HEADER_EXCLUDED = ('workers', 'output_dir')
DEFAULT_SECOND_RATE = 96000.0
REFERENCE_FILE = "reference.wav"
BROADSIDE_DEG = 90.0
# Single-bin tone power leaves out the broadband quantization noise the simulation adds
MEASURED_ND_NOTE = ("measured nulls read deeper than simulated ones: the tone-bin power "
                    "excludes broadband quantization noise")


class CellFailures:
    """Collects table cells that could not be computed"""

    def __init__(self):
        self.cells: List[Tuple[str, str]] = []

    def record(self, cell: str, error: Exception) -> None:
        logging.error(f"Cell {cell} failed: {error}")
        self.cells.append((cell, str(error)))

    def report(self) -> int:
        if not self.cells:
            return 0
        print(f"{len(self.cells)} cell(s) failed:", file=sys.stderr)
        for cell, message in self.cells:
            print(f"  {cell}: {message}", file=sys.stderr)
        return 1


def column_name(bits: Optional[int]) -> str:
    return UNQUANTIZED if bits is None else f"{bits}-bit"


def format_nd(depth_db: float) -> str:
    text = f"{depth_db:.2f}"
    return text + "*" if depth_db <= STAR_THRESHOLD_DB else text


def format_width(width: Optional[float]) -> str:
    return NOT_AVAILABLE if width is None else f"{width:.2f}"


def config_header(cfg: ExperimentConfig, **extra) -> Dict[str, Any]:
    header = {k: v for k, v in cfg.to_dict().items() if k not in HEADER_EXCLUDED}
    header.update(extra)
    return header


def build_scenario(cfg: ExperimentConfig, spec: PatternSpec, bits: Optional[int],
                   sample_rate: Optional[float] = None) -> Scenario:
    geometry = ArrayGeometry(spec.num_mics, cfg.spacing, cfg.sound_speed)
    weights = design_weights(spec, geometry, cfg.frequency)
    quantizer = None if bits is None else QuantizerSpec(bits, cfg.full_scale)
    sampling = SamplingSpec(sample_rate or cfg.sample_rate, cfg.num_samples)
    return Scenario(SourceSpec(cfg.amplitude, cfg.frequency), geometry, weights, sampling, quantizer)


def monte_carlo_config(cfg: ExperimentConfig, bits: Optional[int], widths: bool,
                       sample_rate: Optional[float] = None) -> MonteCarloConfig:
    """Unquantized cells are independent of the drawn phases and need a single run"""
    if bits is None:
        runs = 1
    elif widths:
        runs = max(cfg.width_runs, 1)
    else:
        runs = cfg.runs
    return MonteCarloConfig(
        runs=runs,
        seed=cfg.seed,
        sampling=SamplingSpec(sample_rate or cfg.sample_rate, cfg.num_samples),
        resolution_deg=cfg.resolution_deg,
        refine_tolerance_deg=cfg.refine_tolerance_deg,
        depths_db=tuple(cfg.depths_db) if widths else (),
        width_runs=min(max(cfg.width_runs, 1), runs) if widths else 0,
        workers=cfg.workers,
        null_threshold_db=cfg.null_threshold_db,
        prominence_db=cfg.lobe_prominence_db,
    )


def run_cell(cfg: ExperimentConfig, spec: PatternSpec, bits: Optional[int], widths: bool,
             sample_rate: Optional[float] = None) -> NullMetrics:
    scenario = build_scenario(cfg, spec, bits, sample_rate)
    return monte_carlo_metrics(monte_carlo_config(cfg, bits, widths, sample_rate), scenario)


def _write_csv(path: Path, header: Dict[str, Any], rows: List[List[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.StringIO()
    buffer.write(f"# config: {json.dumps(header, sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerows(rows)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(buffer.getvalue())
    logging.info(f"Wrote {path}")
    return path


def run_table_nd(cfg: ExperimentConfig, output: Optional[Path] = None) -> int:
    """One row per (pattern, order, null) with an ND column per quantizer"""
    failures = CellFailures()
    columns = cfg.bit_columns()
    rows = [['pattern', 'order', 'null_deg'] + [column_name(b) for b in columns]]
    for spec in cfg.pattern_specs():
        angles = null_angles(spec).angles
        cells = [[''] * len(columns) for _ in angles]
        for c, bits in enumerate(columns):
            try:
                metrics = run_cell(cfg, spec, bits, widths=False)
            except SimulationError as e:
                failures.record(f"{spec.label}/{column_name(bits)}", e)
                continue
            for k, null in enumerate(metrics.nulls):
                cells[k][c] = format_nd(null.depth_db)
        for angle, row in zip(angles, cells):
            rows.append([spec.pattern.value, str(spec.order), f"{angle:g}"] + row)
    path = output or Path(cfg.output_dir) / 'table_nd.csv'
    _write_csv(path, config_header(cfg, table='null_depth_db'), rows)
    return failures.report()


def run_table_nw(cfg: ExperimentConfig, output: Optional[Path] = None) -> int:
    """One row per (quantizer, depth) with a width cell per (order, pattern, null)"""
    failures = CellFailures()
    specs = cfg.pattern_specs()
    heads = [(spec, k, angle) for spec in specs for k, angle in enumerate(null_angles(spec).angles)]
    rows = [['quantizer', 'depth_db'] + [f"{spec.label}@{angle:g}" for spec, _, angle in heads]]
    for bits in cfg.bit_columns():
        widths: Dict[Tuple[str, int], Dict[float, Optional[float]]] = {}
        for spec in specs:
            try:
                metrics = run_cell(cfg, spec, bits, widths=True)
            except SimulationError as e:
                failures.record(f"{spec.label}/{column_name(bits)}", e)
                continue
            for k, null in enumerate(metrics.nulls):
                widths[(spec.label, k)] = null.widths
        for depth in cfg.depths_db:
            row = [column_name(bits), format_depth(depth)]
            for spec, k, _ in heads:
                cell = widths.get((spec.label, k))
                row.append('' if cell is None else format_width(cell.get(float(depth))))
            rows.append(row)
    path = output or Path(cfg.output_dir) / 'table_nw.csv'
    _write_csv(path, config_header(cfg, table='null_width_deg'), rows)
    return failures.report()


def emit_pattern(cfg: ExperimentConfig, spec: PatternSpec, bits: Optional[int],
                 output: Optional[Path] = None) -> Tuple[Path, Path]:
    """Full-circle beampattern of one Monte Carlo draw, plus its null metrics"""
    scenario = draw_scenario(build_scenario(cfg, spec, bits), cfg.seed, 0)
    bp = compute_beampattern(scenario, cfg.resolution_deg)
    metrics = null_metrics(bp, scenario, cfg.depths_db, cfg.null_threshold_db,
                           cfg.refine_tolerance_deg, cfg.lobe_prominence_db)
    header = config_header(cfg, pattern=spec.pattern.value, order=spec.order,
                           quantizer=column_name(bits), run=0)
    if scenario.quantizer is not None:
        header['quantizer_snr_db'] = round(snr_db(scenario.quantizer, cfg.amplitude), 2)
    csv_path = output or Path(cfg.output_dir) / f"pattern_{spec.label}_{column_name(bits)}.csv"
    save_beampattern_csv(bp, csv_path, header)
    json_path = save_null_metrics_json(metrics, csv_path.with_suffix('.json'), header)
    return csv_path, json_path


def sweep_angles(step_deg: float, fine_centres: Sequence[float], fine_span_deg: float,
                 fine_step_deg: float) -> List[float]:
    """Coarse full-circle sweep refined around the given centres; always includes 0 deg"""
    if not step_deg > 0.0 or not fine_step_deg > 0.0:
        raise ConfigError('step_deg', "sweep steps must be positive")
    angles = set(np.round(np.arange(0.0, 360.0, step_deg), 6))
    for centre in fine_centres:
        offsets = np.arange(-fine_span_deg, fine_span_deg + fine_step_deg / 2.0, fine_step_deg)
        angles.update(np.round(np.mod(centre + offsets, 360.0), 6))
    angles.add(0.0)
    return sorted(float(a) for a in angles if 0.0 <= a < 360.0)


def container_bits(bits: int) -> int:
    """Narrowest PCM width that holds a b-bit quantizer's codes exactly"""
    for width in (16, 24, 32):
        if bits <= width:
            return width
    raise ConfigError('bits', f"{bits}-bit samples do not fit a PCM container")


def synth_fixture(cfg: ExperimentConfig, spec: PatternSpec, bits: int, out_dir: Path,
                  angles: Sequence[float], num_samples: int, noise_rms: float = 0.0) -> Path:
    """Quantized in-phase recordings per angle, a silence file, a broadside calibration
    reference, the weights and a manifest"""
    scenario = draw_scenario(build_scenario(cfg, spec, bits), cfg.seed, 0)
    quantizer = scenario.quantizer
    sampling = SamplingSpec(cfg.sample_rate, num_samples)
    width = container_bits(bits)
    rng = np.random.default_rng([cfg.seed, 1])
    out_dir = Path(out_dir)
    saturated = 0

    def record(in_phase: np.ndarray) -> np.ndarray:
        nonlocal saturated
        if noise_rms > 0.0:
            in_phase = in_phase + rng.normal(0.0, noise_rms, in_phase.shape)
        saturated += count_saturated(in_phase, quantizer)
        return quantize_sequence(in_phase, quantizer)

    def capture(angle: float) -> np.ndarray:
        in_phase, _ = synth_array(scenario.source, scenario.geometry, scenario.channels,
                                  [math.radians(angle)], sampling)
        return record(in_phase[0])

    entries = []
    for angle in angles:
        path = write_recording(out_dir / f"angle_{angle:07.3f}.wav", capture(angle),
                               cfg.sample_rate, width)
        entries.append(SweepEntry(float(angle), path))
    silence = write_recording(out_dir / 'silence.wav',
                              record(np.zeros((spec.num_mics, num_samples))), cfg.sample_rate, width)
    write_recording(out_dir / REFERENCE_FILE, capture(BROADSIDE_DEG), cfg.sample_rate, width)
    if saturated:
        logging.warning(f"{saturated} fixture samples saturated at {bits} bits")
    weights_path = save_weights(scenario.weights, out_dir / 'weights.json')
    manifest = SweepManifest(
        frequency=cfg.frequency,
        sample_rate=cfg.sample_rate,
        num_mics=spec.num_mics,
        entries=entries,
        silence=silence,
        weights_path=weights_path,
        config=config_header(cfg, pattern=spec.pattern.value, order=spec.order,
                             quantizer=column_name(bits), noise_rms=noise_rms,
                             fixture_samples=num_samples, saturated_samples=saturated,
                             calibration_reference=REFERENCE_FILE),
    )
    path = manifest.save(out_dir / 'manifest.json')
    logging.info(f"Fixture with {len(entries)} angles written to {out_dir}")
    return path


def run_measure(cfg: ExperimentConfig, manifest_path: Path, weights_path: Optional[Path],
                output: Optional[Path] = None,
                calibration: Optional[Path] = None) -> Tuple[Path, Path]:
    """Measured beampattern and null metrics of a sweep.

    With a calibration recording (every microphone in the same field) the weights'
    channel gains and phases are re-estimated from it before beamforming.
    """
    manifest = SweepManifest.load(manifest_path)
    source = weights_path or manifest.weights_path
    if source is None:
        raise ConfigError('weights', "manifest names no weights and none were given")
    weights = load_weights(source)
    if calibration is not None:
        reference = load_recording(calibration, manifest.sample_rate, manifest.num_mics)
        weights = weights.with_channels(calibrate_from_reference(reference, manifest.frequency))
        logging.info(f"Channels calibrated from {calibration}")
    measured = measured_beampattern(manifest, weights, cfg.bandpass_half_width_hz,
                                    cfg.hilbert_taps, cfg.bandpass_ripple_db)
    metrics = measured_null_metrics(measured, cfg.depths_db, cfg.null_threshold_db,
                                    cfg.lobe_prominence_db)
    header = config_header(cfg, manifest=str(manifest_path), weights=str(source),
                           calibration=None if calibration is None else str(calibration),
                           filter_settings_are_defaults=True,
                           null_depth_note=MEASURED_ND_NOTE)
    csv_path = output or Path(cfg.output_dir) / 'measured_beampattern.csv'
    return save_report(measured, metrics, csv_path, csv_path.with_suffix('.json'), header)


def run_oracle(cfg: ExperimentConfig) -> List[List[str]]:
    """Closed-form dipole ND per bit depth, with the noise-model prediction for every pattern"""
    geometry = ArrayGeometry(2, cfg.spacing, cfg.sound_speed)
    rows = [['pattern', 'order', 'quantizer', 'predicted_nd_db']]
    for bits in cfg.bit_columns():
        spec = None if bits is None else QuantizerSpec(bits, cfg.full_scale)
        nd = dipole_nd_analytic(spec, geometry, cfg.frequency, cfg.amplitude)
        rows.append(['dipole', '1', column_name(bits), '-inf' if math.isinf(nd) else f"{nd:.2f}"])
    for pattern_spec in cfg.pattern_specs():
        if pattern_spec.pattern is BeamPattern.DIPOLE and pattern_spec.order == 1:
            continue
        geom = ArrayGeometry(pattern_spec.num_mics, cfg.spacing, cfg.sound_speed)
        weights = design_weights(pattern_spec, geom, cfg.frequency)
        for bits in cfg.bits:
            nd = predicted_nd(weights, QuantizerSpec(bits, cfg.full_scale), cfg.amplitude)
            rows.append([pattern_spec.pattern.value, str(pattern_spec.order), f"{bits}-bit",
                         f"{nd:.2f}"])
    return rows


def run_rate_check(cfg: ExperimentConfig, second_rate: float,
                   output: Optional[Path] = None) -> int:
    """First-order dipole ND at two sample rates; informational only"""
    failures = CellFailures()
    spec = PatternSpec(BeamPattern.DIPOLE, 1)
    rows = [['quantizer', f"nd_{cfg.sample_rate:g}_hz", f"nd_{second_rate:g}_hz", 'difference_db']]
    for bits in cfg.bits:
        try:
            base = run_cell(cfg, spec, bits, widths=False).nulls[0].depth_db
            other = run_cell(cfg, spec, bits, widths=False, sample_rate=second_rate).nulls[0].depth_db
        except SimulationError as e:
            failures.record(f"{spec.label}/{bits}-bit", e)
            continue
        rows.append([f"{bits}-bit", f"{base:.2f}", f"{other:.2f}", f"{other - base:+.2f}"])
        logging.info(f"{bits}-bit dipole ND {base:.2f} dB at {cfg.sample_rate:g} Hz, "
                     f"{other:.2f} dB at {second_rate:g} Hz")
    path = output or Path(cfg.output_dir) / 'rate_check.csv'
    _write_csv(path, config_header(cfg, second_sample_rate=second_rate), rows)
    return failures.report()


def _parse_bits(values: Optional[List[str]]) -> Tuple[Optional[List[int]], Optional[bool]]:
    """'--bits 12 16 unquantized' -> ([12, 16], True)"""
    if values is None:
        return None, None
    bits, unquantized = [], False
    for value in values:
        if value.lower() == UNQUANTIZED:
            unquantized = True
            continue
        try:
            bits.append(int(value))
        except ValueError:
            raise ConfigError('bits', f"expected an integer or '{UNQUANTIZED}', got {value!r}") from None
    return bits, unquantized


def _single_bits(value: str) -> Optional[int]:
    bits, unquantized = _parse_bits([value])
    return None if unquantized else bits[0]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='dma-quantization',
        description='Null depth and null width of quantized differential microphone arrays')

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON settings file (default: none)')
    common.add_argument('--patterns', nargs='+', help='beampatterns to evaluate')
    common.add_argument('--orders', nargs='+', type=int, help='DMA orders to evaluate')
    common.add_argument('--bits', nargs='+', help="bit depths, optionally 'unquantized'")
    common.add_argument('--frequency', type=float, help='tone frequency f0 in Hz')
    common.add_argument('--sample-rate', type=float, help='sampling rate Fs in Hz')
    common.add_argument('--spacing', type=float, help='microphone spacing')
    units = common.add_mutually_exclusive_group()
    units.add_argument('--spacing-in-wavelengths', dest='spacing_in_wavelengths',
                       action='store_true', default=None, help='spacing is a fraction of lambda')
    units.add_argument('--spacing-in-metres', dest='spacing_in_wavelengths',
                       action='store_false', help='spacing is in metres')
    common.add_argument('--sound-speed', type=float, help='speed of sound c in m/s')
    common.add_argument('--amplitude', type=float, help='source amplitude A')
    common.add_argument('--runs', type=int, help='Monte Carlo runs R')
    common.add_argument('--seed', type=int, help='base seed')
    common.add_argument('--num-samples', type=int, help='samples per sequence L')
    common.add_argument('--resolution', dest='resolution_deg', type=float,
                        help='angular grid resolution in degrees')
    common.add_argument('--depths', dest='depths_db', nargs='+', type=float,
                        help='null-width depths in dB')
    common.add_argument('--width-runs', type=int, help='runs swept in full for null widths')
    common.add_argument('--workers', type=int, help='worker threads for Monte Carlo runs')
    common.add_argument('--output-dir', help='directory for generated files')

    sub = parser.add_subparsers(dest='command', required=True)
    nd = sub.add_parser('table-nd', parents=[common], help='null depth table')
    nd.add_argument('--output', type=Path, help='CSV path')
    nw = sub.add_parser('table-nw', parents=[common], help='null width table')
    nw.add_argument('--output', type=Path, help='CSV path')

    pattern = sub.add_parser('pattern', parents=[common], help='beampattern polar data')
    pattern.add_argument('--pattern', dest='pattern_name', required=True)
    pattern.add_argument('--order', type=int, required=True)
    pattern.add_argument('--quantizer', default=UNQUANTIZED,
                         help="bit depth or 'unquantized' (default)")
    pattern.add_argument('--output', type=Path, help='CSV path; the JSON summary sits beside it')

    fixture = sub.add_parser('synth-fixture', parents=[common], help='synthetic measurement sweep')
    fixture.add_argument('--pattern', dest='pattern_name', required=True)
    fixture.add_argument('--order', type=int, required=True)
    fixture.add_argument('--quantizer', type=int, default=16, help='bit depth (default 16)')
    fixture.add_argument('--out', type=Path, required=True, help='fixture directory')
    fixture.add_argument('--step', type=float, default=10.0, help='coarse step in degrees')
    fixture.add_argument('--fine-around', nargs='*', type=float, default=[],
                         help='angles refined with --fine-step')
    fixture.add_argument('--fine-span', type=float, default=10.0)
    fixture.add_argument('--fine-step', type=float, default=1.0)
    fixture.add_argument('--fixture-samples', type=int, default=44100,
                         help='samples per recording (default 1 s at 44.1 kHz)')
    fixture.add_argument('--noise-rms', type=float, default=0.0, help='additive noise level')

    measure = sub.add_parser('measure', parents=[common], help='run the measurement pipeline')
    measure.add_argument('--manifest', type=Path, required=True)
    measure.add_argument('--weights', type=Path, help='weights JSON (default: from manifest)')
    measure.add_argument('--calibration', type=Path,
                         help='recording with every mic in the same field; re-estimates G and phi')
    measure.add_argument('--output', type=Path, help='CSV path; the JSON summary sits beside it')

    sub.add_parser('oracle', parents=[common], help='analytic dipole null depth')

    rate = sub.add_parser('rate-check', parents=[common], help='dipole ND at a second sample rate')
    rate.add_argument('--second-rate', type=float, default=DEFAULT_SECOND_RATE)
    rate.add_argument('--output', type=Path, help='CSV path')
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    bits, unquantized = _parse_bits(args.bits)
    overrides = {
        'patterns': args.patterns,
        'orders': args.orders,
        'bits': bits,
        'include_unquantized': unquantized,
        'frequency': args.frequency,
        'sample_rate': args.sample_rate,
        'spacing': args.spacing,
        'spacing_in_wavelengths': args.spacing_in_wavelengths,
        'sound_speed': args.sound_speed,
        'amplitude': args.amplitude,
        'runs': args.runs,
        'seed': args.seed,
        'num_samples': args.num_samples,
        'resolution_deg': args.resolution_deg,
        'depths_db': args.depths_db,
        'width_runs': args.width_runs,
        'workers': args.workers,
        'output_dir': args.output_dir,
    }
    return {k: v for k, v in overrides.items() if v is not None}


def dispatch(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    if args.command == 'table-nd':
        return run_table_nd(cfg, args.output)
    if args.command == 'table-nw':
        return run_table_nw(cfg, args.output)
    if args.command == 'pattern':
        spec = PatternSpec(args.pattern_name, args.order, cfg.cardioid3_double_null_deg)
        csv_path, json_path = emit_pattern(cfg, spec, _single_bits(args.quantizer), args.output)
        print(csv_path)
        print(json_path)
        return 0
    if args.command == 'synth-fixture':
        spec = PatternSpec(args.pattern_name, args.order, cfg.cardioid3_double_null_deg)
        angles = sweep_angles(args.step, args.fine_around, args.fine_span, args.fine_step)
        print(synth_fixture(cfg, spec, args.quantizer, args.out, angles,
                            args.fixture_samples, args.noise_rms))
        return 0
    if args.command == 'measure':
        for path in run_measure(cfg, args.manifest, args.weights, args.output,
                                 args.calibration):
            print(path)
        return 0
    if args.command == 'oracle':
        csv.writer(sys.stdout, lineterminator='\n').writerows(run_oracle(cfg))
        return 0
    if args.command == 'rate-check':
        return run_rate_check(cfg, args.second_rate, args.output)
    raise ConfigError('command', f"unknown command {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, resolve settings and run one subcommand; returns the exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _, cfg = load_config(args.config, overrides_from_args(args))
        return dispatch(args, cfg)
    except SimulationError as e:
        logging.error(f"{args.command} failed: {e}")
        print(f"ERROR: {e}", file=sys.stderr)
        return 2


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    sys.exit(main())

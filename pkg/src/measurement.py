"""
Measurement Module
Offline processing of per-angle multichannel recordings into a measured beampattern:
bandpass around the tone, FIR Hilbert quadrature, compensated beamforming, power at
the tone's DFT bin, normalization to endfire and a silence-recording noise floor
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import soundfile as sf
from scipy import signal

from array_model import MicChannel, wrap_phase
from beamformer import combine
from errors import MeasurementError, RecordingFormatError
from metrics import (DEFAULT_DEPTHS, Beampattern, NullMetrics, format_depth,
                     null_width, find_nulls, to_db)
from weights import BeamWeights

SIGNAL = "signal"
SILENCE = "silence"

PCM_BITS = {'PCM_16': 16, 'PCM_24': 24, 'PCM_32': 32}
FLOAT_SUBTYPES = ('FLOAT', 'DOUBLE')
WRITE_SUBTYPES = {16: 'PCM_16', 24: 'PCM_24', 32: 'PCM_32'}

# Default filter settings; the source measurements never state theirs
DEFAULT_HALF_BANDWIDTH = 50.0
DEFAULT_RIPPLE_DB = 80.0
DEFAULT_HILBERT_TAPS = 1001
DEFAULT_HILBERT_BETA = 8.0
LEAKAGE_WARNING_DB = -40.0


@dataclass(frozen=True)
class MeasurementRecording:
    """M channels of samples in [-1, 1) recorded with the source at one angle"""

    channels: np.ndarray
    sample_rate: float
    bit_depth: Optional[int] = None
    source_angle: Optional[float] = None
    label: str = SIGNAL
    # Samples at each end still carrying filter start-up transients
    edge_samples: int = 0

    @property
    def num_mics(self) -> int:
        return self.channels.shape[0]

    @property
    def num_samples(self) -> int:
        return self.channels.shape[1]

    def trimmed(self) -> np.ndarray:
        if 2 * self.edge_samples >= self.num_samples:
            raise MeasurementError(
                f"recording of {self.num_samples} samples is shorter than its "
                f"{2 * self.edge_samples} transient samples")
        return self.channels[:, self.edge_samples:self.num_samples - self.edge_samples]


@dataclass(frozen=True)
class SweepEntry:
    angle_deg: float
    path: Path


@dataclass
class SweepManifest:
    """Ordered angle sweep with one silence recording, as described by manifest.json"""

    frequency: float
    sample_rate: float
    num_mics: int
    entries: List[SweepEntry]
    silence: Path
    weights_path: Optional[Path] = None
    config: Dict = field(default_factory=dict)

    def __post_init__(self):
        angles = [e.angle_deg for e in self.entries]
        if any(not 0.0 <= a < 360.0 for a in angles):
            raise MeasurementError(f"sweep angles must lie in [0, 360): {angles}")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise MeasurementError("sweep angles must be strictly increasing")

    @classmethod
    def load(cls, path) -> 'SweepManifest':
        path = Path(path)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise MeasurementError(f"manifest {path} not found") from None
        except json.JSONDecodeError as e:
            raise MeasurementError(f"invalid JSON in manifest {path}: {e}") from e
        base = path.parent
        entries, silence = [], []
        for item in data.get('recordings', []):
            target = base / item['path']
            if item.get('label', SIGNAL) == SILENCE:
                silence.append(target)
            else:
                entries.append(SweepEntry(float(item['angle_deg']), target))
        if len(silence) != 1:
            raise MeasurementError(f"manifest must hold exactly one silence entry, found {len(silence)}")
        weights_path = data.get('weights')
        return cls(
            frequency=float(data['frequency_hz']),
            sample_rate=float(data['sample_rate_hz']),
            num_mics=int(data['num_mics']),
            entries=entries,
            silence=silence[0],
            weights_path=base / weights_path if weights_path else None,
            config=data.get('config', {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        base = path.parent

        def rel(p: Path) -> str:
            try:
                return str(Path(p).relative_to(base))
            except ValueError:
                return str(p)

        recordings = [{'angle_deg': e.angle_deg, 'path': rel(e.path), 'label': SIGNAL}
                      for e in self.entries]
        recordings.append({'angle_deg': None, 'path': rel(self.silence), 'label': SILENCE})
        document = {
            'frequency_hz': self.frequency,
            'sample_rate_hz': self.sample_rate,
            'num_mics': self.num_mics,
            'weights': rel(self.weights_path) if self.weights_path else None,
            'recordings': recordings,
            'config': self.config,
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(document, f, indent=2, sort_keys=True)
            f.write('\n')
        return path


@dataclass
class MeasuredBeampattern:
    beampattern: Beampattern
    noise_floor_db: float
    endfire_power: float
    leakage_db: Dict[float, float] = field(default_factory=dict)


def load_recording(path, sample_rate: Optional[float] = None, num_mics: Optional[int] = None,
                   source_angle: Optional[float] = None, label: str = SIGNAL) -> MeasurementRecording:
    """Read a multichannel PCM file; integer samples are mapped to [-1, 1) by 2^(b-1)"""
    path = Path(path)
    if not path.exists():
        raise MeasurementError(f"recording {path} not found")
    info = sf.info(str(path))
    if info.subtype in PCM_BITS:
        bits = PCM_BITS[info.subtype]
        # soundfile left-justifies every PCM width into int32
        raw, rate = sf.read(str(path), dtype='int32', always_2d=True)
        data = raw.astype(float) / 2.0 ** 31
    elif info.subtype in FLOAT_SUBTYPES:
        bits = None
        data, rate = sf.read(str(path), dtype='float64', always_2d=True)
    else:
        raise RecordingFormatError(f"{path}: unsupported encoding {info.subtype}")
    if sample_rate is not None and not math.isclose(rate, sample_rate):
        raise RecordingFormatError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if num_mics is not None and data.shape[1] != num_mics:
        raise RecordingFormatError(f"{path}: {data.shape[1]} channels, expected {num_mics}")
    logging.debug(f"Loaded {path}: {data.shape[1]} ch x {data.shape[0]} samples, {info.subtype}")
    return MeasurementRecording(np.ascontiguousarray(data.T), float(rate), bits, source_angle, label)


def write_recording(path, channels: np.ndarray, sample_rate: float, bits: int = 16) -> Path:
    """Write channels (M, L) in [-1, 1) as integer PCM so that load_recording is exact"""
    if bits not in WRITE_SUBTYPES:
        raise RecordingFormatError(f"cannot write {bits}-bit PCM")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    codes = np.clip(np.round(np.asarray(channels, dtype=float) * 2.0 ** (bits - 1)),
                    -(2 ** (bits - 1)), 2 ** (bits - 1) - 1).astype(np.int64)
    if bits == 16:
        frames = codes.astype(np.int16)
    else:
        frames = (codes << (32 - bits)).astype(np.int32)
    try:
        sf.write(str(path), frames.T, int(round(sample_rate)), subtype=WRITE_SUBTYPES[bits])
    except (OSError, RuntimeError) as e:
        raise MeasurementError(f"failed to write {path}: {e}") from e
    return path


def bandpass_taps(sample_rate: float, frequency: float, half_bandwidth: float,
                  ripple_db: float = DEFAULT_RIPPLE_DB) -> np.ndarray:
    """Odd-length Kaiser-window bandpass, unit gain at the band centre"""
    if not 0.0 < half_bandwidth < frequency:
        raise MeasurementError(f"half bandwidth {half_bandwidth} Hz must lie in (0, {frequency})")
    if frequency + half_bandwidth >= sample_rate / 2.0:
        raise MeasurementError(f"upper band edge {frequency + half_bandwidth} Hz is not below Nyquist")
    transition = min(half_bandwidth, frequency - half_bandwidth)
    numtaps, beta = signal.kaiserord(ripple_db, transition / (0.5 * sample_rate))
    numtaps = 2 * (numtaps // 2) + 1
    return signal.firwin(numtaps, [frequency - half_bandwidth, frequency + half_bandwidth],
                         window=('kaiser', beta), pass_zero=False, fs=sample_rate)


def bandpass_filter(rec: MeasurementRecording, frequency: float,
                    half_bandwidth: float = DEFAULT_HALF_BANDWIDTH,
                    ripple_db: float = DEFAULT_RIPPLE_DB) -> MeasurementRecording:
    """Linear-phase FIR bandpass around the tone, identical for every channel.

    The filter is applied centred (odd length, 'same' alignment) so no group delay
    is left between channels; the first and last numtaps//2 samples are marked as
    transient.
    """
    taps = bandpass_taps(rec.sample_rate, frequency, half_bandwidth, ripple_db)
    filtered = signal.fftconvolve(rec.channels, taps[None, :], mode='same', axes=-1)
    return replace(rec, channels=filtered, edge_samples=rec.edge_samples + taps.size // 2)


def hilbert_taps(sample_rate: float, frequency: float, numtaps: int = DEFAULT_HILBERT_TAPS,
                 beta: float = DEFAULT_HILBERT_BETA) -> np.ndarray:
    """Kaiser-windowed ideal Hilbert transformer, gain normalized to 1 at the tone"""
    if numtaps % 2 == 0:
        numtaps += 1
    half = numtaps // 2
    n = np.arange(-half, half + 1)
    ideal = np.zeros(numtaps)
    odd = n % 2 != 0
    ideal[odd] = 2.0 / (np.pi * n[odd])
    taps = ideal * signal.windows.kaiser(numtaps, beta)
    _, response = signal.freqz(taps, worN=[frequency], fs=sample_rate)
    return taps / np.abs(response[0])


def hilbert_quadrature(rec: MeasurementRecording, frequency: float,
                       numtaps: int = DEFAULT_HILBERT_TAPS) -> MeasurementRecording:
    """Quadrature counterpart of every channel (cos -> sin), same alignment as the input"""
    taps = hilbert_taps(rec.sample_rate, frequency, numtaps)
    quad = signal.fftconvolve(rec.channels, taps[None, :], mode='same', axes=-1)
    return replace(rec, channels=quad, edge_samples=rec.edge_samples + taps.size // 2)


def analysis_length(num_samples: int, sample_rate: float, frequency: float) -> int:
    """Transform length in [num_samples/2, num_samples] holding the most nearly whole number of tone cycles"""
    lengths = np.arange(max(1, num_samples // 2), num_samples + 1)
    cycles = frequency * lengths / sample_rate
    misfit = np.abs(cycles - np.round(cycles))
    return int(lengths[int(np.argmin(misfit))])


def tone_bin_power(u: np.ndarray, sample_rate: float, frequency: float) -> Tuple[float, float]:
    """Mean-square power of the tone read from its DFT bin, and adjacent-bin leakage in dB"""
    length = analysis_length(u.size, sample_rate, frequency)
    spectrum = np.fft.rfft(u[:length])
    k = int(round(frequency * length / sample_rate))
    power = 2.0 * np.abs(spectrum[k]) ** 2 / length ** 2
    neighbours = [spectrum[j] for j in (k - 1, k + 1) if 0 <= j < spectrum.size]
    side = 2.0 * sum(np.abs(v) ** 2 for v in neighbours) / length ** 2
    leakage = to_db(side / power) if power > 0.0 else 0.0
    return float(power), leakage


def beamformed_tone_power(rec: MeasurementRecording, weights: BeamWeights, frequency: float,
                          half_bandwidth: float = DEFAULT_HALF_BANDWIDTH,
                          hilbert_numtaps: int = DEFAULT_HILBERT_TAPS,
                          ripple_db: float = DEFAULT_RIPPLE_DB) -> Tuple[float, float]:
    """Filter, derive quadrature, beamform and read the tone-bin power of one recording"""
    if rec.num_mics != weights.num_mics:
        raise MeasurementError(f"recording has {rec.num_mics} channels, weights {weights.num_mics}")
    filtered = bandpass_filter(rec, frequency, half_bandwidth, ripple_db)
    quadrature = hilbert_quadrature(filtered, frequency, hilbert_numtaps)
    edge = quadrature.edge_samples
    in_phase = replace(filtered, edge_samples=edge).trimmed()
    u = combine(in_phase, quadrature.trimmed(), weights.compensated)
    return tone_bin_power(u, rec.sample_rate, frequency)


def measured_beampattern(manifest: SweepManifest, weights: BeamWeights,
                         half_bandwidth: float = DEFAULT_HALF_BANDWIDTH,
                         hilbert_numtaps: int = DEFAULT_HILBERT_TAPS,
                         ripple_db: float = DEFAULT_RIPPLE_DB) -> MeasuredBeampattern:
    """Gain in every swept direction, normalized to the endfire (0 deg) power"""
    angles = [e.angle_deg for e in manifest.entries]
    if 0.0 not in angles:
        raise MeasurementError("sweep has no endfire (0 deg) recording")
    powers, leakage = [], {}
    for entry in manifest.entries:
        rec = load_recording(entry.path, manifest.sample_rate, manifest.num_mics, entry.angle_deg)
        power, leak = beamformed_tone_power(rec, weights, manifest.frequency,
                                            half_bandwidth, hilbert_numtaps, ripple_db)
        powers.append(power)
        leakage[entry.angle_deg] = leak
        if leak > LEAKAGE_WARNING_DB and power > 0.0:
            logging.warning(f"Adjacent-bin leakage {leak:.1f} dB at {entry.angle_deg} deg")
    endfire = powers[angles.index(0.0)]
    if not endfire > 0.0:
        raise MeasurementError("endfire recording carries no power at the tone frequency")

    silence = load_recording(manifest.silence, manifest.sample_rate, manifest.num_mics, label=SILENCE)
    floor_power, _ = beamformed_tone_power(silence, weights, manifest.frequency,
                                           half_bandwidth, hilbert_numtaps, ripple_db)
    power_db = to_db(np.asarray(powers) / endfire)
    power_db[angles.index(0.0)] = 0.0
    bp = Beampattern(np.asarray(angles, dtype=float), power_db, float(endfire),
                     float(angles[int(np.argmax(power_db))]))
    floor_db = to_db(floor_power / endfire)
    logging.info(f"Measured {len(angles)} angles; noise floor {floor_db:.1f} dB re endfire")
    return MeasuredBeampattern(bp, floor_db, float(endfire), leakage)


def measured_null_metrics(measured: MeasuredBeampattern, depths_db=DEFAULT_DEPTHS,
                          threshold_db: float = -10.0, prominence_db: float = 3.0) -> NullMetrics:
    """Nulls of a measured sweep; a null at or below the noise floor is clamped and flagged"""
    bp = measured.beampattern
    nulls = find_nulls(bp, None, threshold_db, prominence_db=prominence_db, half_plane=False)
    for null in nulls:
        if null.depth_db <= measured.noise_floor_db:
            logging.warning(f"Null at {null.angle_deg} deg ({null.depth_db:.1f} dB) is limited "
                            f"by the noise floor ({measured.noise_floor_db:.1f} dB)")
            null.depth_db = measured.noise_floor_db
            null.floor_limited = True
        null.widths = {float(d): null_width(bp, null, d, prominence_db) for d in depths_db}
    return NullMetrics(nulls, runs=1, reference_angle_deg=0.0)


def calibrate_from_reference(rec: MeasurementRecording, frequency: float) -> List[MicChannel]:
    """G_i and phi_i at the tone relative to microphone 1, from a recording in which
    every microphone sees the same field (e.g. a broadside source)"""
    data = rec.trimmed()
    length = analysis_length(data.shape[1], rec.sample_rate, frequency)
    n = np.arange(length)
    kernel = np.exp(-2j * np.pi * frequency * n / rec.sample_rate)
    bins = data[:, :length] @ kernel
    if np.abs(bins[0]) == 0.0:
        raise MeasurementError("reference microphone carries no tone")
    ratio = bins / bins[0]
    return [MicChannel(i + 1, float(np.abs(r)), wrap_phase(float(np.angle(r))))
            for i, r in enumerate(ratio)]


def save_report(measured: MeasuredBeampattern, metrics: NullMetrics, csv_path, json_path,
                header: Optional[dict] = None) -> Tuple[Path, Path]:
    """CSV of (angle_deg, power_db) plus a JSON summary laid out like the measured-results table"""
    csv_path, json_path = Path(csv_path), Path(json_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, 'w', encoding='utf-8', newline='') as f:
        if header:
            f.write(f"# config: {json.dumps(header, sort_keys=True)}\n")
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['angle_deg', 'power_db'])
        for angle, power in measured.beampattern.rows():
            writer.writerow([f"{angle:.3f}", f"{power:.4f}"])
    summary = {
        'config': header or {},
        'noise_floor_db': round(measured.noise_floor_db, 4),
        'endfire_power': measured.endfire_power,
        'nulls': [n.to_dict() for n in metrics.nulls],
        'depths_db': [format_depth(d) for d in sorted(
            {d for n in metrics.nulls for d in n.widths}, reverse=True)],
        'max_leakage_db': round(max(measured.leakage_db.values()), 4) if measured.leakage_db else None,
    }
    with open(json_path, 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write('\n')
    logging.info(f"Measurement report written to {csv_path} and {json_path}")
    return csv_path, json_path

"""
Array Model Module
Free-field plane-wave signal model for a uniform linear microphone array.

Generates the continuous-model (unquantized) in-phase and quadrature signals
seen by each sensor for a single tone arriving from angle theta. Angles are in
radians here; callers working in degrees convert at their boundary.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import GeometryError, SignalError

DEFAULT_SOUND_SPEED = 343.0
TWO_PI = 2.0 * math.pi

# Wrapped phases are held to this many decimals so that 2*pi-equivalent inputs
# synthesize identical samples.
_PHASE_DECIMALS = 12


def wrap_phase(phase: float) -> float:
    """Wrap a phase into [0, 2*pi)"""
    wrapped = round(math.fmod(phase, TWO_PI), _PHASE_DECIMALS)
    if wrapped < 0.0:
        wrapped = round(wrapped + TWO_PI, _PHASE_DECIMALS)
    return 0.0 if wrapped >= TWO_PI else wrapped


@dataclass(frozen=True)
class SourceSpec:
    """Incident tone A*cos(2*pi*f0*t + phi_s)"""

    amplitude: float = 1.0
    frequency: float = 997.0
    initial_phase: float = 0.0

    def __post_init__(self):
        if not self.amplitude > 0.0:
            raise SignalError(f"amplitude must be positive, got {self.amplitude}")
        if not self.frequency > 0.0:
            raise SignalError(f"frequency must be positive, got {self.frequency}")
        object.__setattr__(self, 'initial_phase', wrap_phase(self.initial_phase))

    def with_phase(self, initial_phase: float) -> 'SourceSpec':
        return replace(self, initial_phase=initial_phase)


@dataclass(frozen=True)
class SamplingSpec:
    sample_rate: float = 44100.0
    num_samples: int = 8192

    def __post_init__(self):
        if not self.sample_rate > 0.0:
            raise SignalError(f"sample_rate must be positive, got {self.sample_rate}")
        if int(self.num_samples) < 1:
            raise SignalError(f"num_samples must be at least 1, got {self.num_samples}")

    def check_tone(self, frequency: float) -> None:
        """Reject tones at or above Nyquist"""
        if frequency >= self.sample_rate / 2.0:
            raise SignalError(
                f"tone {frequency} Hz is not below Nyquist ({self.sample_rate / 2.0} Hz)")


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: M sensors spaced delta metres apart"""

    num_mics: int
    spacing: float
    sound_speed: float = DEFAULT_SOUND_SPEED

    def __post_init__(self):
        if self.num_mics < 2:
            raise GeometryError(f"an array needs at least 2 microphones, got {self.num_mics}")
        if not self.spacing > 0.0:
            raise GeometryError(f"spacing must be positive, got {self.spacing}")
        if not self.sound_speed > 0.0:
            raise GeometryError(f"sound_speed must be positive, got {self.sound_speed}")

    @classmethod
    def from_wavelengths(cls, num_mics: int, spacing_in_wavelengths: float, frequency: float,
                         sound_speed: float = DEFAULT_SOUND_SPEED) -> 'ArrayGeometry':
        """Build a geometry whose spacing is given as a fraction of the wavelength at frequency"""
        return cls(num_mics, spacing_in_wavelengths * sound_speed / frequency, sound_speed)

    def spacing_in_wavelengths(self, frequency: float) -> float:
        return self.spacing / wavelength(self, frequency)

    def check_spacing(self, frequency: float) -> bool:
        """Warn when the small-spacing assumption delta <= 0.1*lambda is violated"""
        ratio = self.spacing_in_wavelengths(frequency)
        if ratio > 0.1:
            logging.warning(f"Spacing {self.spacing * 1e3:.2f} mm is {ratio:.3f} wavelengths at "
                            f"{frequency} Hz; differential behaviour needs delta <= 0.1*lambda")
            return False
        return True


@dataclass(frozen=True)
class MicChannel:
    """Transfer function H_i(w0) = G_i * exp(j*phi_i) of microphone i (1-based)"""

    index: int
    gain: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.index < 1:
            raise GeometryError(f"channel index is 1-based, got {self.index}")
        if not self.gain > 0.0:
            raise GeometryError(f"channel {self.index} gain must be positive, got {self.gain}")
        if not 0.0 <= self.phase < TWO_PI:
            raise GeometryError(f"channel {self.index} phase must lie in [0, 2*pi), got {self.phase}")


def ideal_channels(num_mics: int) -> List[MicChannel]:
    """Matched microphones: unit gain, zero phase"""
    return [MicChannel(i + 1) for i in range(num_mics)]


def random_channels(num_mics: int, rng: np.random.Generator,
                    gain_spread: float = 0.0) -> List[MicChannel]:
    """Draw phi_i ~ U[0, 2*pi) and optionally G_i = 1 + U(-spread, spread)"""
    phases = rng.uniform(0.0, TWO_PI, num_mics)
    if gain_spread > 0.0:
        gains = 1.0 + rng.uniform(-gain_spread, gain_spread, num_mics)
    else:
        gains = np.ones(num_mics)
    return [MicChannel(i + 1, float(g), wrap_phase(float(p)))
            for i, (g, p) in enumerate(zip(gains, phases))]


def wavelength(geom: ArrayGeometry, frequency: float) -> float:
    return geom.sound_speed / frequency


def adjacent_delay(geom: ArrayGeometry, theta: float) -> float:
    """Delay tau_0 = delta*cos(theta)/c between adjacent sensors, in seconds"""
    return geom.spacing * math.cos(theta) / geom.sound_speed


def _tone_phase(src: SourceSpec, geom: ArrayGeometry, channels: Sequence[MicChannel],
                thetas: np.ndarray, samp: SamplingSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Phase argument of every sample, shape (angles, mics, samples), plus the gains"""
    samp.check_tone(src.frequency)
    n = np.arange(int(samp.num_samples), dtype=float)
    # Whole cycles of f0*n*Ts are dropped before scaling by 2*pi to keep the
    # argument small; deep nulls depend on the channels cancelling to ~1e-13.
    cycles = np.mod(src.frequency * n, samp.sample_rate) / samp.sample_rate
    mic_offsets = np.array([ch.index - 1 for ch in channels], dtype=float)
    tau0 = geom.spacing * np.cos(thetas) / geom.sound_speed
    # 2*pi*f0*N0*Ts with the fractional delay N0 = (i - 1) * tau0 / Ts
    delay_phase = TWO_PI * src.frequency * np.outer(tau0, mic_offsets)
    offsets = src.initial_phase + np.array([ch.phase for ch in channels])
    phase = (TWO_PI * cycles[None, None, :] - delay_phase[:, :, None]
             + offsets[None, :, None])
    gains = np.array([ch.gain for ch in channels])
    return phase, gains


def synth_array(src: SourceSpec, geom: ArrayGeometry, channels: Sequence[MicChannel],
                thetas: Sequence[float], samp: SamplingSpec) -> Tuple[np.ndarray, np.ndarray]:
    """In-phase and quadrature samples for every channel and angle.

    Returns two arrays of shape (len(thetas), len(channels), num_samples).
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    phase, gains = _tone_phase(src, geom, channels, thetas, samp)
    scale = (src.amplitude * gains)[None, :, None]
    return scale * np.cos(phase), scale * np.sin(phase)


def synth_channel(src: SourceSpec, geom: ArrayGeometry, chan: MicChannel, theta: float,
                  samp: SamplingSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Microphone signals before quantization: A*G_i*cos(...) and its sine counterpart"""
    in_phase, quadrature = synth_array(src, geom, [chan], [theta], samp)
    return in_phase[0, 0], quadrature[0, 0]


def fold_angle_deg(theta_deg):
    """Map degrees onto [0, 180]; the linear array cannot tell theta from 360 - theta"""
    folded = np.mod(np.asarray(theta_deg, dtype=float), 360.0)
    return np.where(folded > 180.0, 360.0 - folded, folded)


def resolve_spacing(spacing: float, in_wavelengths: bool, frequency: float,
                    sound_speed: Optional[float] = None) -> float:
    """Spacing in metres from either an absolute or a wavelength-relative value"""
    c = DEFAULT_SOUND_SPEED if sound_speed is None else sound_speed
    return spacing * c / frequency if in_wavelengths else spacing

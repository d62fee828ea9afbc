"""
Quantization Module
Uniform midtread fixed-point quantizer Q(.) as a DAQ applies it to each microphone
sequence, plus saturation counting and the SNR of the U(-step/2, step/2] noise model
"""

import math
from dataclasses import dataclass

import numpy as np

from errors import SignalError


@dataclass(frozen=True)
class QuantizerSpec:
    """Signed b-bit quantizer spanning [-full_scale, full_scale)"""

    bits: int
    full_scale: float = 1.0

    def __post_init__(self):
        if int(self.bits) < 1:
            raise SignalError(f"bits must be at least 1, got {self.bits}")
        if not self.full_scale > 0.0:
            raise SignalError(f"full_scale must be positive, got {self.full_scale}")

    @property
    def step(self) -> float:
        return step_size(self)

    @property
    def min_code(self) -> int:
        return -(2 ** (self.bits - 1))

    @property
    def max_code(self) -> int:
        return 2 ** (self.bits - 1) - 1


def step_size(spec: QuantizerSpec) -> float:
    """Step between adjacent output levels, 2*FS / 2^b"""
    return 2.0 * spec.full_scale / 2.0 ** spec.bits


def quantize_codes(x, spec: QuantizerSpec) -> np.ndarray:
    """Integer codes clamp(round(x/step)) with round-half-away-from-zero"""
    scaled = np.asarray(x, dtype=float) / spec.step
    codes = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(codes, spec.min_code, spec.max_code)


def quantize_sequence(x, spec: QuantizerSpec) -> np.ndarray:
    """Quantized values of x; out-of-range samples saturate silently"""
    return quantize_codes(x, spec) * spec.step


def count_saturated(x, spec: QuantizerSpec) -> int:
    """Number of samples that land beyond the code range before clamping"""
    scaled = np.asarray(x, dtype=float) / spec.step
    codes = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return int(np.count_nonzero((codes > spec.max_code) | (codes < spec.min_code)))


def snr_db(spec: QuantizerSpec, amplitude: float = 1.0) -> float:
    """Signal-to-quantization-noise ratio of a sinusoid: (A^2/2) / (step^2/12)"""
    return 10.0 * math.log10((amplitude ** 2 / 2.0) / (spec.step ** 2 / 12.0))

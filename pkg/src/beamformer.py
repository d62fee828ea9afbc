"""
Beamformer Module
Combines quantized in-phase/quadrature channels with the compensated weights and
measures the power of the real beamformed output
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from errors import ChannelMismatchError, SignalError
from quantization import QuantizerSpec, quantize_sequence
from weights import BeamWeights


@dataclass(frozen=True)
class ComplexChannel:
    """z_i[n] = in-phase[n] + j*quadrature[n]"""

    samples: np.ndarray

    @classmethod
    def from_components(cls, in_phase, quadrature,
                        spec: Optional[QuantizerSpec] = None) -> 'ComplexChannel':
        """Build a channel, quantizing both components with the same spec when given"""
        in_phase = np.asarray(in_phase, dtype=float)
        quadrature = np.asarray(quadrature, dtype=float)
        if in_phase.shape != quadrature.shape:
            raise ChannelMismatchError(
                f"in-phase has {in_phase.shape[-1]} samples, quadrature {quadrature.shape[-1]}")
        if spec is not None:
            in_phase = quantize_sequence(in_phase, spec)
            quadrature = quantize_sequence(quadrature, spec)
        return cls(in_phase + 1j * quadrature)

    def __len__(self) -> int:
        return self.samples.shape[-1]


@dataclass(frozen=True)
class BeamformedOutput:
    """u[n] = sum_i Re{C_i * z_i[n]}"""

    samples: np.ndarray

    def __len__(self) -> int:
        return self.samples.shape[-1]


def combine(in_phase: np.ndarray, quadrature: np.ndarray, compensated: np.ndarray) -> np.ndarray:
    """Real part of the weighted channel sum over the microphone axis.

    in_phase and quadrature have shape (..., M, L); the result has shape (..., L).
    Re{C*(x + jy)} = Re(C)*x - Im(C)*y, so the complex product is never formed.
    """
    if in_phase.shape[-2] != compensated.size:
        raise ChannelMismatchError(
            f"{in_phase.shape[-2]} channels but {compensated.size} weights")
    return (np.einsum('m,...ml->...l', compensated.real, in_phase)
            - np.einsum('m,...ml->...l', compensated.imag, quadrature))


def beamform(channels: Sequence[ComplexChannel], weights: BeamWeights) -> BeamformedOutput:
    """Apply C_i to each complex channel and keep the real part of the sum"""
    if len(channels) != weights.num_mics:
        raise ChannelMismatchError(f"{len(channels)} channels but {weights.num_mics} weights")
    lengths = {len(ch) for ch in channels}
    if len(lengths) != 1:
        raise ChannelMismatchError(f"channel lengths differ: {sorted(lengths)}")
    stacked = np.stack([ch.samples for ch in channels])
    return BeamformedOutput(combine(stacked.real, stacked.imag, weights.compensated))


def output_power(u: Union[BeamformedOutput, np.ndarray]) -> Union[float, np.ndarray]:
    """Mean of squared samples along the last axis"""
    samples = u.samples if isinstance(u, BeamformedOutput) else np.asarray(u, dtype=float)
    if samples.shape[-1] == 0:
        raise SignalError("cannot take the power of an empty sequence")
    power = np.mean(samples * samples, axis=-1)
    return float(power) if np.ndim(power) == 0 else power


def quantization_noise_model(weights: BeamWeights, spec: QuantizerSpec) -> float:
    """Predicted power of the quantization error terms: sum_i |C_i|^2 * step^2/12.

    Each channel contributes Re(C_i)*e_in - Im(C_i)*e_qp with independent errors,
    so its variance is |C_i|^2 = D_i^2/G_i^2 times step^2/12, whatever phi_i is.
    """
    return float(np.sum(np.abs(weights.compensated) ** 2) * spec.step ** 2 / 12.0)

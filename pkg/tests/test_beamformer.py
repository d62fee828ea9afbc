import math

import numpy as np
import pytest

from array_model import SamplingSpec, SourceSpec, random_channels, synth_array
from beamformer import (ComplexChannel, beamform, combine, output_power,
                        quantization_noise_model)
from errors import ChannelMismatchError, SignalError
from quantization import QuantizerSpec, quantize_sequence
from weights import PatternSpec, design_weights

from conftest import FREQUENCY, reference_geometry


def _channels(weights, theta, num_samples=8192, spec=None):
    in_phase, quadrature = synth_array(SourceSpec(), reference_geometry(weights.num_mics),
                                       weights.channels, [theta],
                                       SamplingSpec(44100.0, num_samples))
    return [ComplexChannel.from_components(i, q, spec) for i, q in zip(in_phase[0], quadrature[0])]


def test_endfire_dipole_power_is_half():
    weights = design_weights(PatternSpec('dipole', 1), reference_geometry(2), FREQUENCY)
    u = beamform(_channels(weights, 0.0), weights)
    assert len(u) == 8192
    assert output_power(u) == pytest.approx(0.5, abs=1.0 / 8192)


def test_broadside_dipole_cancels():
    weights = design_weights(PatternSpec('dipole', 1), reference_geometry(2), FREQUENCY)
    u = beamform(_channels(weights, math.pi / 2), weights)
    assert output_power(u) < 1e-20


def test_combine_matches_complex_product():
    rng = np.random.default_rng(3)
    in_phase = rng.normal(size=(3, 16))
    quadrature = rng.normal(size=(3, 16))
    weights = rng.normal(size=3) + 1j * rng.normal(size=3)
    expected = np.real(weights @ (in_phase + 1j * quadrature))
    np.testing.assert_allclose(combine(in_phase, quadrature, weights), expected, atol=1e-12)


def test_channel_count_mismatch():
    weights = design_weights(PatternSpec('cardioid', 2), reference_geometry(3), FREQUENCY)
    dipole = design_weights(PatternSpec('dipole', 1), reference_geometry(2), FREQUENCY)
    with pytest.raises(ChannelMismatchError):
        beamform(_channels(dipole, 0.0, 64), weights)


def test_channel_length_mismatch():
    weights = design_weights(PatternSpec('dipole', 1), reference_geometry(2), FREQUENCY)
    channels = [ComplexChannel(np.zeros(8, dtype=complex)), ComplexChannel(np.zeros(9, dtype=complex))]
    with pytest.raises(ChannelMismatchError):
        beamform(channels, weights)


def test_zero_channels_give_zero_power():
    weights = design_weights(PatternSpec('dipole', 1), reference_geometry(2), FREQUENCY)
    channels = [ComplexChannel(np.zeros(32, dtype=complex)) for _ in range(2)]
    assert output_power(beamform(channels, weights)) == 0.0


def test_empty_sequence_rejected():
    with pytest.raises(SignalError):
        output_power(np.zeros(0))


def test_quantized_broadside_power_matches_noise_model():
    weights = design_weights(PatternSpec('dipole', 1), reference_geometry(2), FREQUENCY)
    spec = QuantizerSpec(12)
    rng = np.random.default_rng(21)
    powers = []
    for phase in np.linspace(0.1, 6.0, 8):
        weights = weights.with_channels(random_channels(2, rng))
        in_phase, quadrature = synth_array(SourceSpec(1.0, FREQUENCY, phase), reference_geometry(2),
                                           weights.channels, [math.pi / 2],
                                           SamplingSpec(44100.0, 8192))
        channels = [ComplexChannel.from_components(i, q, spec)
                    for i, q in zip(in_phase[0], quadrature[0])]
        powers.append(output_power(beamform(channels, weights)))
    predicted = quantization_noise_model(weights, spec)
    assert 10 * math.log10(np.mean(powers) / predicted) == pytest.approx(0.0, abs=1.0)


@pytest.mark.parametrize("pattern, order", [('dipole', 1), ('cardioid', 2), ('hypercardioid', 3)])
def test_beamforming_is_linear(pattern, order):
    weights = design_weights(PatternSpec(pattern, order), reference_geometry(order + 1), FREQUENCY)
    rng = np.random.default_rng(5)
    first = rng.normal(size=(2, order + 1, 256))
    second = rng.normal(size=(2, order + 1, 256))
    compensated = weights.with_channels(random_channels(order + 1, rng)).compensated
    summed = combine(*(first + second), compensated)
    np.testing.assert_allclose(summed, combine(*first, compensated) + combine(*second, compensated),
                               atol=1e-12)
    scaled = combine(*(2.5 * first), compensated)
    np.testing.assert_allclose(scaled, 2.5 * combine(*first, compensated), atol=1e-12)


@pytest.mark.parametrize("theta_deg", [0.0, 45.0, 100.0, 160.0])
def test_power_invariant_to_source_phase(theta_deg):
    # 44100 samples hold exactly 997 cycles of the tone
    num_samples = 44100
    weights = design_weights(PatternSpec('hypercardioid', 2), reference_geometry(3), FREQUENCY)
    weights = weights.with_channels(random_channels(3, np.random.default_rng(8)))
    powers = []
    for phase in (0.0, 0.9, 2.3, 4.4):
        in_phase, quadrature = synth_array(SourceSpec(1.0, FREQUENCY, phase), reference_geometry(3),
                                           weights.channels, [math.radians(theta_deg)],
                                           SamplingSpec(44100.0, num_samples))
        powers.append(output_power(combine(in_phase[0], quadrature[0], weights.compensated)))
    assert max(powers) - min(powers) <= max(powers) / num_samples


@pytest.mark.parametrize("pattern, order, bits", [
    ('dipole', 1, 12),
    ('cardioid', 1, 16),
    ('supercardioid', 2, 12),
])
def test_quantization_error_matches_noise_model(pattern, order, bits):
    spec = QuantizerSpec(bits)
    weights = design_weights(PatternSpec(pattern, order), reference_geometry(order + 1), FREQUENCY)
    rng = np.random.default_rng(17)
    sampling = SamplingSpec(44100.0, 4096)
    error_powers = []
    for _ in range(100):
        weights = weights.with_channels(random_channels(order + 1, rng))
        source = SourceSpec(0.9, FREQUENCY, rng.uniform(0.0, 2.0 * math.pi))
        thetas = rng.uniform(0.0, math.pi, 1)
        in_phase, quadrature = synth_array(source, reference_geometry(order + 1),
                                           weights.channels, thetas, sampling)
        clean = combine(in_phase[0], quadrature[0], weights.compensated)
        quantized = combine(quantize_sequence(in_phase[0], spec),
                            quantize_sequence(quadrature[0], spec), weights.compensated)
        error_powers.append(output_power(quantized - clean))
    predicted = quantization_noise_model(weights, spec)
    assert np.mean(error_powers) == pytest.approx(predicted, rel=0.15)

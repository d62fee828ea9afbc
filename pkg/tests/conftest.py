import sys
from pathlib import Path

import pytest

SRC_DIR = Path(__file__).resolve().parent.parent / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from array_model import ArrayGeometry, SamplingSpec, SourceSpec  # noqa: E402
from metrics import Scenario  # noqa: E402
from quantization import QuantizerSpec  # noqa: E402
from weights import PatternSpec, design_weights  # noqa: E402

FREQUENCY = 997.0
SAMPLE_RATE = 44100.0
SPACING_IN_WAVELENGTHS = 0.04


def reference_geometry(num_mics: int) -> ArrayGeometry:
    return ArrayGeometry.from_wavelengths(num_mics, SPACING_IN_WAVELENGTHS, FREQUENCY)


def make_scenario(pattern: str, order: int, bits=None, num_samples: int = 8192) -> Scenario:
    spec = PatternSpec(pattern, order)
    geometry = reference_geometry(spec.num_mics)
    weights = design_weights(spec, geometry, FREQUENCY)
    quantizer = None if bits is None else QuantizerSpec(bits)
    return Scenario(SourceSpec(1.0, FREQUENCY), geometry, weights,
                    SamplingSpec(SAMPLE_RATE, num_samples), quantizer)


@pytest.fixture
def dipole_geometry():
    return reference_geometry(2)


@pytest.fixture
def scenario_factory():
    return make_scenario

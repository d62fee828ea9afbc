"""
Weights Module
Null-constrained synthesis of differential beamforming weights D_i*exp(j*psi_i)
and the inverse-transfer-function compensation of each channel
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from array_model import ArrayGeometry, MicChannel, ideal_channels
from errors import ChannelMismatchError, WeightDesignError


class BeamPattern(Enum):
    DIPOLE = "dipole"
    CARDIOID = "cardioid"
    HYPERCARDIOID = "hypercardioid"
    SUPERCARDIOID = "supercardioid"


SUPPORTED_ORDERS = (1, 2, 3)

# Null directions in degrees for every (pattern, order) pair
NULL_TABLE: Dict[Tuple[BeamPattern, int], Tuple[float, ...]] = {
    (BeamPattern.DIPOLE, 1): (90.0,),
    (BeamPattern.CARDIOID, 1): (180.0,),
    (BeamPattern.HYPERCARDIOID, 1): (120.0,),
    (BeamPattern.SUPERCARDIOID, 1): (135.0,),
    (BeamPattern.DIPOLE, 2): (90.0,),
    (BeamPattern.CARDIOID, 2): (90.0, 180.0),
    (BeamPattern.HYPERCARDIOID, 2): (72.0, 144.0),
    (BeamPattern.SUPERCARDIOID, 2): (106.0, 153.0),
    (BeamPattern.DIPOLE, 3): (90.0,),
    (BeamPattern.CARDIOID, 3): (90.0, 180.0),
    (BeamPattern.HYPERCARDIOID, 3): (55.0, 100.0, 145.0),
    (BeamPattern.SUPERCARDIOID, 3): (97.0, 122.0, 153.0),
}

# Above this condition number the constraint system is treated as singular
MAX_CONDITION = 1e13


@dataclass(frozen=True)
class PatternSpec:
    """Beampattern shape and DMA order N; the array needs N + 1 microphones"""

    pattern: BeamPattern
    order: int
    # Third-order cardioid only: which listed null carries multiplicity 2
    cardioid_double_null_deg: float = 90.0

    def __post_init__(self):
        if isinstance(self.pattern, str):
            object.__setattr__(self, 'pattern', parse_pattern(self.pattern))
        if (self.pattern, self.order) not in NULL_TABLE:
            raise WeightDesignError(
                f"unsupported pattern/order pair ({self.pattern.value}, {self.order})")

    @property
    def num_mics(self) -> int:
        return self.order + 1

    @property
    def label(self) -> str:
        return f"{self.pattern.value}-{self.order}"


@dataclass(frozen=True)
class NullPlacement:
    """Null directions (degrees) with their multiplicities"""

    nulls: Tuple[Tuple[float, int], ...]

    @property
    def angles(self) -> List[float]:
        return [angle for angle, _ in self.nulls]

    @property
    def total_multiplicity(self) -> int:
        return sum(m for _, m in self.nulls)


@dataclass(frozen=True)
class BeamWeights:
    """Designed weights D_i*exp(j*psi_i) together with the channels they compensate"""

    spec: PatternSpec
    frequency: float
    spacing: float
    sound_speed: float
    magnitudes: Tuple[float, ...]
    phases: Tuple[float, ...]
    channels: Tuple[MicChannel, ...] = field(default=())

    def __post_init__(self):
        if not self.channels:
            object.__setattr__(self, 'channels', tuple(ideal_channels(len(self.magnitudes))))
        if len(self.channels) != len(self.magnitudes) or len(self.phases) != len(self.magnitudes):
            raise ChannelMismatchError(
                f"{len(self.magnitudes)} weights but {len(self.channels)} channels")
        if not all(math.isfinite(d) and d > 0.0 for d in self.magnitudes):
            raise WeightDesignError(f"weight magnitudes must be finite and positive: {self.magnitudes}")

    @property
    def num_mics(self) -> int:
        return len(self.magnitudes)

    @property
    def uncompensated(self) -> np.ndarray:
        return np.asarray(self.magnitudes) * np.exp(1j * np.asarray(self.phases))

    @property
    def compensated(self) -> np.ndarray:
        """C_i = (1/G_i) * exp(-j*phi_i) * D_i * exp(j*psi_i)"""
        gains = np.array([ch.gain for ch in self.channels])
        phis = np.array([ch.phase for ch in self.channels])
        return (1.0 / gains) * np.exp(-1j * phis) * self.uncompensated

    @property
    def through_channels(self) -> np.ndarray:
        """C_i * G_i * exp(j*phi_i): the weights as the source sees them"""
        gains = np.array([ch.gain for ch in self.channels])
        phis = np.array([ch.phase for ch in self.channels])
        return self.compensated * gains * np.exp(1j * phis)

    def with_channels(self, channels: Sequence[MicChannel]) -> 'BeamWeights':
        if len(channels) != self.num_mics:
            raise ChannelMismatchError(f"{self.num_mics} weights but {len(channels)} channels")
        return replace(self, channels=tuple(channels))

    def to_dict(self) -> dict:
        return {
            'pattern': self.spec.pattern.value,
            'order': self.spec.order,
            'cardioid_double_null_deg': self.spec.cardioid_double_null_deg,
            'frequency_hz': self.frequency,
            'spacing_m': self.spacing,
            'sound_speed_mps': self.sound_speed,
            'channels': [
                {'index': ch.index, 'magnitude': d, 'phase_rad': psi,
                 'gain': ch.gain, 'mic_phase_rad': ch.phase}
                for ch, d, psi in zip(self.channels, self.magnitudes, self.phases)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'BeamWeights':
        try:
            spec = PatternSpec(parse_pattern(data['pattern']), int(data['order']),
                               float(data.get('cardioid_double_null_deg', 90.0)))
            rows = data['channels']
            return cls(
                spec=spec,
                frequency=float(data['frequency_hz']),
                spacing=float(data['spacing_m']),
                sound_speed=float(data['sound_speed_mps']),
                magnitudes=tuple(float(r['magnitude']) for r in rows),
                phases=tuple(float(r['phase_rad']) for r in rows),
                channels=tuple(MicChannel(int(r['index']), float(r.get('gain', 1.0)),
                                          float(r.get('mic_phase_rad', 0.0))) for r in rows),
            )
        except KeyError as e:
            raise WeightDesignError(f"weight document is missing field {e}") from e


def parse_pattern(name) -> BeamPattern:
    if isinstance(name, BeamPattern):
        return name
    try:
        return BeamPattern(str(name).lower())
    except ValueError:
        raise WeightDesignError(f"unknown beampattern '{name}'") from None


def null_angles(spec: PatternSpec) -> NullPlacement:
    """Null directions of the pattern, with multiplicities summing to the order"""
    angles = NULL_TABLE[(spec.pattern, spec.order)]
    if len(angles) == spec.order:
        return NullPlacement(tuple((a, 1) for a in angles))
    if len(angles) == 1:
        return NullPlacement(((angles[0], spec.order),))
    # Third-order cardioid: two listed nulls for three degrees of freedom
    if spec.cardioid_double_null_deg not in angles:
        raise WeightDesignError(
            f"double null at {spec.cardioid_double_null_deg} deg is not one of {angles}")
    return NullPlacement(tuple((a, 2 if a == spec.cardioid_double_null_deg else 1) for a in angles))


def _centered_positions(num_mics: int) -> np.ndarray:
    return np.arange(num_mics, dtype=float) - (num_mics - 1) / 2.0


def design_weights(spec: PatternSpec, geom: ArrayGeometry, frequency: float,
                   channels: Optional[Sequence[MicChannel]] = None) -> BeamWeights:
    """Solve the (N+1)x(N+1) distortionless + null constraint system.

    Rows act on the response H(u) = sum_i h_i exp(-j*kappa*p_i*u), u = cos(theta),
    with p_i measured from the array centre. Endfire (u = 1) is pinned to (-1)^N;
    a null of multiplicity m at u0 zeroes H and its first m-1 derivatives in u.
    """
    if geom.num_mics != spec.num_mics:
        raise WeightDesignError(
            f"{spec.label} needs {spec.num_mics} microphones, geometry has {geom.num_mics}")
    geom.check_spacing(frequency)

    kappa = 2.0 * math.pi * frequency * geom.spacing / geom.sound_speed
    positions = _centered_positions(geom.num_mics)

    rows = [np.exp(-1j * kappa * positions)]
    rhs = [(-1.0) ** spec.order]
    for angle, multiplicity in null_angles(spec).nulls:
        u0 = math.cos(math.radians(angle))
        steer = np.exp(-1j * kappa * positions * u0)
        for k in range(multiplicity):
            rows.append(positions ** k * steer)
            rhs.append(0.0)

    system = np.array(rows)
    condition = np.linalg.cond(system)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise WeightDesignError(f"{spec.label} constraint system is singular (cond={condition:.3g})")
    try:
        h = linalg.solve(system, np.array(rhs, dtype=complex))
    except linalg.LinAlgError as e:
        raise WeightDesignError(f"{spec.label} constraint system is singular: {e}") from e

    # Referencing the sensors to microphone 1 instead of the centre multiplies the
    # response by a unit-modulus factor, so h is used as solved.
    logging.debug(f"Designed {spec.label}: D={np.round(np.abs(h), 4)}, "
                  f"psi={np.round(np.angle(h), 4)}, cond={condition:.3g}")
    weights = BeamWeights(
        spec=spec,
        frequency=frequency,
        spacing=geom.spacing,
        sound_speed=geom.sound_speed,
        magnitudes=tuple(float(v) for v in np.abs(h)),
        phases=tuple(float(v) for v in np.angle(h)),
    )
    if channels is not None:
        weights = weights.with_channels(channels)
    return weights


def array_response(weights: BeamWeights, thetas, through_channels: bool = False) -> np.ndarray:
    """Complex unquantized response sum_i h_i exp(-j*(i-1)*w0*tau0) at each angle (radians).

    With through_channels the mismatched channels and their compensation are included.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    kappa = 2.0 * math.pi * weights.frequency * weights.spacing / weights.sound_speed
    offsets = np.arange(weights.num_mics, dtype=float)
    steering = np.exp(-1j * kappa * np.outer(np.cos(thetas), offsets))
    coefficients = weights.through_channels if through_channels else weights.uncompensated
    return steering @ coefficients


def save_weights(weights: BeamWeights, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(weights.to_dict(), f, indent=2)
    logging.info(f"Weights for {weights.spec.label} saved to {path}")
    return path


def load_weights(path) -> BeamWeights:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise WeightDesignError(f"weight file {path} not found") from None
    except json.JSONDecodeError as e:
        raise WeightDesignError(f"invalid JSON in weight file {path}: {e}") from e
    return BeamWeights.from_dict(data)

"""
Errors Module
Exception hierarchy shared by the simulator, the measurement pipeline and the CLI
"""


class SimulationError(Exception):
    """Base class for every error raised by the simulator"""


class ConfigError(SimulationError, ValueError):
    """Unknown or badly typed configuration key"""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class SignalError(SimulationError, ValueError):
    """Invalid source tone or sampling grid"""


class GeometryError(SimulationError, ValueError):
    """Invalid array geometry or microphone channel"""


class WeightDesignError(SimulationError, ValueError):
    """Beamforming weights cannot be synthesized for the requested pattern"""


class ChannelMismatchError(SimulationError, ValueError):
    """Channel count or sequence length does not match the weights"""


class MeasurementError(SimulationError):
    """Measurement sweep cannot be processed"""


class RecordingFormatError(MeasurementError, ValueError):
    """Recording file has an unexpected encoding, rate or channel count"""

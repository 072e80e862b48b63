"""
Error hierarchy shared by the simulator modules
"""
from typing import Optional


class SimulationError(RuntimeError):
    """A failure while advancing the model"""


class NonFiniteStateError(SimulationError):
    """A node voltage became NaN or infinite (model bug, never clamped)"""


class RegimeViolationError(SimulationError):
    """The closed-form step was asked to integrate outside its regime"""


class EventContextError(SimulationError):
    """Wraps an engine failure with the neuron and time it happened at"""

    def __init__(self, message: str, neuron_id: Optional[int] = None, time_ps: Optional[int] = None):
        self.neuron_id = neuron_id
        self.time_ps = time_ps
        context = []
        if neuron_id is not None:
            context.append(f"neuron {neuron_id}")
        if time_ps is not None:
            context.append(f"t={time_ps} ps")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class NoSteadyStateError(ValueError):
    """The bias set has no balance point inside the rails"""


class PastEventError(ValueError):
    """An event was scheduled before the current simulation time"""


class BusCapacityError(ValueError):
    """More neurons than scan slots in one period"""


class AddressError(ValueError):
    """Out-of-range neuron id or AER address"""


class ConfigParseError(ValueError):
    """A config document line could not be parsed"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigValidationError(ValueError):
    """A config value violates one of its invariants"""


class BiasConfigError(ConfigValidationError):
    """An electrical parameter is out of its allowed range"""

# errors.py


class EmergencyNetError(Exception):
    """Root of every error raised by the detection network."""


# --- protocol ---

class ProtocolError(EmergencyNetError):
    pass


class MalformedMessage(ProtocolError):
    pass


class DuplicateSession(ProtocolError):
    pass


class NoRespondents(ProtocolError):
    pass


class EmptySampleWindow(ProtocolError):
    pass


class IllegalTransition(ProtocolError):
    pass


class DutyViolation(ProtocolError):
    """A message reached a node whose radio is off."""


# --- detection ---

class DetectionError(EmergencyNetError):
    pass


class WrongSampleCount(DetectionError):
    pass


class InsufficientWindow(DetectionError):
    pass


class NotCalibrated(DetectionError):
    pass


# --- simulation ---

class SimulationError(EmergencyNetError):
    pass


class NoLink(SimulationError):
    pass


class UnknownChannel(SimulationError):
    pass


class ParseError(SimulationError):
    def __init__(self, line, reason):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class MissingColumn(SimulationError):
    pass


class InvariantViolation(EmergencyNetError):
    pass


# --- configuration / numerics ---

class ConfigInvalid(EmergencyNetError):
    def __init__(self, key, reason):
        super().__init__(f"{key}: {reason}")
        self.key = key


class SingularSystem(EmergencyNetError):
    pass

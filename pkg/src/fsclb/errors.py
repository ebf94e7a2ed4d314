"""Exception hierarchy shared by every fsclb module."""


class FSCLBError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMatrix(FSCLBError, ValueError):
    pass


class InvalidSpectrum(FSCLBError, ValueError):
    pass


class InvalidVector(FSCLBError, ValueError):
    pass


class InvalidRegularizer(FSCLBError, ValueError):
    pass


class InvalidState(FSCLBError, RuntimeError):
    pass


class InvalidConfidence(FSCLBError, ValueError):
    pass


class NoArms(FSCLBError, ValueError):
    pass


class ProtocolError(FSCLBError):
    """Malformed frame, wrong message type, or payload shape mismatch."""


class TransportError(FSCLBError, ConnectionError):
    pass


class DataError(FSCLBError, ValueError):
    pass


class ConfigError(FSCLBError, ValueError):
    pass


class TrialError(FSCLBError):
    """A module error raised inside the round loop, tagged with round and agent."""

    def __init__(self, message, round_index, agent):
        super().__init__(f"round {round_index}, agent {agent}: {message}")
        self.round_index = round_index
        self.agent = agent

class ModemError(Exception):
    pass


class FramingError(ModemError):
    pass


class ModulationError(ModemError):
    pass


class SynthesisError(ModemError):
    pass


class ChannelError(ModemError):
    pass


class DspError(ModemError):
    pass


class ReceiverError(ModemError):
    pass


class NoCarrierFound(ReceiverError):
    pass


class PreambleNotFound(ReceiverError):
    pass


class InsufficientContrast(ReceiverError):
    """A preamble-shaped pattern too faint to decode. Searching may resume at `resume_s`."""

    def __init__(self, message: str, resume_s: float):
        super().__init__(message)
        self.resume_s = resume_s


class TransmitError(ModemError):
    """Raised when the disk backend fails mid-schedule. `events` holds the partial log."""

    def __init__(self, message: str, events=()):
        super().__init__(message)
        self.events = list(events)


class ExperimentError(ModemError):
    pass


class ConfigError(ModemError):
    pass

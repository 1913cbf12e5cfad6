"""Exception hierarchy shared across the package."""


class SoHipError(Exception):
    """Base class for every error raised by sohip."""


class ShapeError(SoHipError, ValueError):
    pass


class NonFiniteError(SoHipError, FloatingPointError):
    pass


class IngestionError(SoHipError, ValueError):
    pass


class PartitionError(SoHipError, ValueError):
    pass


class ProtocolError(SoHipError, RuntimeError):
    pass


class DecodeError(SoHipError, ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class ConfigError(SoHipError, ValueError):
    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.violations))

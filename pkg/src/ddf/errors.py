"""Exception hierarchy. Precondition failures map to CLI exit code 1."""


class DDFError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(DDFError, ValueError):
    """An input violates an operation's stated precondition."""


class UnsupportedEncodingError(PreconditionError):
    pass


class TrainingDiverged(DDFError):
    """Loss became non-finite during training."""


class IncompleteRunError(PreconditionError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("incomplete run directory, missing: " + ", ".join(self.missing))

"""Exception hierarchy shared by every stage of the pipeline."""


class EpimobError(Exception):
    """Base class for all errors raised by epimob."""


class RecordError(EpimobError):
    """A single input row could not be parsed.

    Attributes
    ----------
    line : int
        1-based line number in the source file (header is line 1).
    """

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateRecordError(EpimobError):
    pass


class UnknownUnitError(EpimobError):
    def __init__(self, units, message="unresolvable unit ids"):
        self.units = sorted(set(map(str, units)))
        super().__init__(f"{message}: {', '.join(self.units)}")


class MissingDataError(EpimobError):
    """Required days are absent (explicitly marked missing) in a series."""


class EmptyDomainError(EpimobError):
    pass


class RankDeficientError(EpimobError):
    """Design matrix cannot identify the requested coefficients."""

    def __init__(self, message, effective_df=None):
        if effective_df is not None:
            message = f"{message} (effective df = {effective_df:.3f})"
        super().__init__(message)
        self.effective_df = effective_df


class ExplosiveEpidemicError(EpimobError):
    pass


class BasisMismatchError(EpimobError):
    pass


class ParameterError(EpimobError):
    """A stage parameter lies outside its documented range."""


class MissingPrerequisiteError(EpimobError):
    """An input artifact a stage depends on does not exist."""

    def __init__(self, path, what="input"):
        self.path = path
        super().__init__(f"missing {what}: expected {path}")

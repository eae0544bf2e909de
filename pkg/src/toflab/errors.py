"""Exception types shared across the package."""


class ToflabError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ToflabError, ValueError):
    """Raster shapes disagree where they must match."""


class ContractError(ToflabError, ValueError):
    """An argument violates an operation's contract (wrong channel count,
    even kernel size, non-finite data, ...)."""


class DomainError(ToflabError, ValueError):
    """A value lies outside the mathematical domain of an operation
    (non-positive depth where an inverse is taken, ...)."""


class DegenerateInputError(ToflabError, ValueError):
    """Input carries too little information (empty mask, fewer valid
    pixels than unknowns, empty dataset, ...)."""


class DegeneracyError(ToflabError, ArithmeticError):
    """A linear system is rank-deficient or too ill-conditioned to solve."""


class DivergenceError(ToflabError, RuntimeError):
    """An iterative fit produced a non-finite loss.

    Carries the loss trace accumulated up to the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class PfmError(ToflabError, ValueError):
    """Malformed PFM stream; ``offset`` is the byte position of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(ToflabError, ValueError):
    """A sample directory is incomplete or inconsistent; ``field`` names
    the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

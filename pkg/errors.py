# errors.py
"""Exception hierarchy shared by every module."""


class ActiveCLRError(Exception):
    """Base class for all errors raised by this project."""


class ShapeError(ActiveCLRError, ValueError):
    """Array shapes do not fit the operation."""


class DegenerateRowError(ShapeError):
    """A row is too close to zero to be normalized."""


class DataValidationError(ActiveCLRError, ValueError):
    """Runtime data violates a precondition (non-finite values, bad sizes, single class...)."""


class ContractError(ActiveCLRError, ValueError):
    """An operation was called outside its contract, or an invariant broke mid-run."""


class ConfigError(ActiveCLRError, ValueError):
    """A configuration file or override could not be parsed or validated."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ReportError(ActiveCLRError, ValueError):
    """Experiment logs are missing or do not follow the documented schema."""

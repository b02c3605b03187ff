"""Shared exception types, mapped to CLI exit codes in cli.py."""


class CknapsackError(Exception):
    """Base class for all package errors."""


class ParseError(CknapsackError):
    """Malformed instance/result file or invalid field value."""


class InfeasibleError(CknapsackError):
    """A feasibility or verification check failed."""


class CapExceeded(CknapsackError):
    """Brute-force enumeration would exceed its configured cap."""


class BudgetExceeded(CknapsackError):
    """A solver's state-space or cell budget was exhausted."""


class DegenerateSlack(CknapsackError):
    """Slack width is zero: the guessed aggregate lies exactly on the circle."""


class NoExactFit(CknapsackError):
    """Requested DP cell is unreachable (no subset fits exactly)."""


class PreconditionViolated(CknapsackError):
    """Caller violated a documented operation precondition."""


class EmptyRange(CknapsackError):
    """A range optimization was asked to optimize over zero elements."""

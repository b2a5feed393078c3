"""Exception taxonomy shared by all modules.

The CLI maps these onto stable exit codes: validation/contract/shape
problems exit 3, file-format and I/O problems exit 4.
"""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class FormatError(ValueError):
    """A file does not conform to its documented byte/text layout."""


class ContractError(RuntimeError):
    """An internal calling contract was broken (e.g. recall labels at s=0)."""

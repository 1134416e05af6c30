"""Exception types shared across the package.

Each error carries a ``cli_class`` slug used by the command-line entry point
to emit one machine-parsable line before exiting nonzero.
"""


class TailspinError(Exception):
    cli_class = "error"


class ShapeError(TailspinError):
    """Operands have incompatible dimensions."""

    cli_class = "shape-error"


class NumericError(TailspinError):
    """A NaN or Inf was produced or consumed."""

    cli_class = "numeric-error"


class TapeError(TailspinError):
    """Misuse of a computation tape (reuse, detached output)."""

    cli_class = "tape-error"


class ContractError(TailspinError):
    """A documented precondition was violated by the caller."""

    cli_class = "contract-error"


class ValidationError(TailspinError):
    """A parameter value lies outside its documented domain."""

    cli_class = "validation-error"


class ConfigError(TailspinError):
    """Bad configuration file, key, or value."""

    cli_class = "config-error"


class OracleError(TailspinError):
    """The finite-difference oracle detected a non-deterministic objective."""

    cli_class = "oracle-error"

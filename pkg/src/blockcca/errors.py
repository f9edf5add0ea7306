"""Error taxonomy.

Every failure the library raises on purpose derives from BlockCCAError and
carries a stable ``category`` string; the CLI prints that category as the
first token of its single-line error output, so scripts can match on it.
Non-convergence is never an exception, only a reported flag.
"""

from __future__ import annotations


class BlockCCAError(Exception):
    """Base class for all library errors."""

    category = "Error"


class DimensionError(BlockCCAError):
    """Inputs whose shapes cannot be conformed (wrong ndim, row mismatch, p < d)."""

    category = "DimensionError"


class RankDeficient(BlockCCAError):
    """Polar factor undefined: a singular value fell below tolerance."""

    category = "RankDeficient"


class DeadGradient(BlockCCAError):
    """A sweep produced an all-zero gradient column; gamma is too large there."""

    category = "DeadGradient"

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class EmptySupport(BlockCCAError):
    """A sparsity-pattern column has no active entries."""

    category = "EmptySupport"


class DegenerateCovariate(BlockCCAError):
    """A projected covariate is constant, so a correlation is undefined."""

    category = "DegenerateCovariate"


class ConfigError(BlockCCAError):
    """A configuration value violates its documented constraints."""

    category = "ConfigError"


class ParseError(BlockCCAError):
    """A delimited text file could not be parsed. Coordinates are 1-based."""

    category = "ParseError"

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class RaggedRows(ParseError):
    """A data row has a different number of cells than the header."""

    category = "RaggedRows"


class NonFinite(ParseError):
    """A cell parsed as NaN or infinity."""

    category = "NonFinite"

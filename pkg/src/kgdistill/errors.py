"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class KGDistillError(Exception):
    """Base class for all package errors."""


class ConfigError(KGDistillError):
    """Invalid configuration, usage, or precondition violation."""


class DataError(KGDistillError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A triple file line could not be parsed."""


class VocabError(DataError):
    """A name is missing from a fixed vocabulary, or vocabularies disagree."""


class CheckpointError(DataError):
    """A checkpoint directory is corrupt, incomplete, or unsupported."""


class NumericalError(KGDistillError):
    """A numerical computation degenerated (overflow, divergence, NaN)."""


class GradCheckError(NumericalError):
    """Analytic gradients disagree with finite differences."""


class QuadratureError(NumericalError):
    """Adaptive quadrature failed to converge."""

"""Exceptions raised by img2rna.

Every error derives from :class:`Img2RnaError` and from the builtin exception
that describes it best, so ``except ValueError`` keeps working for callers
that do not know about this module.
"""


class Img2RnaError(Exception):
    """Base class for all img2rna errors."""


class ConfigError(Img2RnaError, ValueError):
    """Invalid or unknown configuration value."""


class InputError(Img2RnaError, ValueError):
    """Input data violates a precondition (missing patients, empty splits ...)."""


class DimensionError(Img2RnaError, ValueError):
    """Tensor or array shapes do not fit together."""


class NumericError(Img2RnaError, ArithmeticError):
    """A loss or gradient became non-finite."""


class UndefinedCorrelationError(InputError):
    """Pearson correlation is undefined because an input has zero variance."""

    def __init__(self, gene_id=None, message=None):
        self.gene_id = gene_id
        if message is None:
            message = "Correlation is undefined (zero variance) for gene '%s'." % gene_id
        super().__init__(message)

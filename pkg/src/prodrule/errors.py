"""Exception types shared by all prodrule modules."""


class ProdRuleError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(ProdRuleError):
    """Vector or matrix dimensions are inconsistent."""


class NotPositiveDefinite(ProdRuleError):
    """A matrix required to be SPD has a non-positive Cholesky pivot."""


class IndexOutOfRange(ProdRuleError):
    """A class index is outside [0, K)."""


class EmptyClass(ProdRuleError):
    """A class has zero training samples."""


class RequiresIsotropic(ProdRuleError):
    """The weighted squared-distance rule needs isotropic covariances."""


class MissingJointModel(ProdRuleError):
    """A joint (concatenated-space) classifier is required but absent."""


class ParseError(ProdRuleError):
    """A CSV cell failed to parse; carries the offending row and column."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class BlockDimMismatch(ProdRuleError):
    """Requested block dimensions do not sum to the data width."""


class MissingLabelColumn(ProdRuleError):
    """The CSV header lacks the mandatory final 'label' column."""


class ClassTooSmall(ProdRuleError):
    """A class has too few samples for a stratified split."""


class SchemaMismatch(ProdRuleError):
    """Model and dataset disagree on block structure or class labels."""

# -*- coding: utf-8 -*-


class MirageError(RuntimeError):
    """Base error of the package."""
    exit_code = 1


class ConfigError(MirageError):
    """Invalid or incomplete experiment configuration."""
    exit_code = 2


class DataError(MirageError):
    """Input data violates a documented precondition."""
    exit_code = 3


class NumericError(MirageError):
    """A numerical routine failed."""
    exit_code = 4


class MissingColumn(DataError):
    """A declared column is absent from the CSV header."""


class NonBinaryOutcome(DataError):
    """The outcome column holds values other than 0 and 1."""


class MalformedRow(DataError):
    """A CSV row holds a non-numeric or empty cell."""

    def __init__(self, index: int, column: str, value: object):
        super().__init__(
            f"row {index}: column '{column}' is not numeric ({value!r})"
        )
        self.index = index
        self.column = column


class ZeroVariance(DataError):
    """A column is constant on the statistics split."""

    def __init__(self, column: str):
        super().__init__(f"column '{column}' has zero variance")
        self.column = column


class NoSensitiveColumn(DataError):
    """No column is tagged sensitive."""


class DimensionMismatch(DataError, ValueError):
    """Array shapes disagree with the model or dataset."""


class EmptyClass(DataError):
    """A discriminator class has no rows."""


class EmptyList(DataError):
    """An aggregate was requested over nothing."""


class EmptyGroup(DataError):
    """A group cell of an audit has no usable instance."""


class EmptyGroupBatch(DataError):
    """A negative-outcome batch of the adversarial loss is empty."""


class SingularSystem(NumericError):
    """The weighted normal equations are rank deficient."""


class ConvergenceFailure(NumericError):
    """Power iteration did not reach its tolerance."""


class CgNoConvergence(NumericError):
    """Conjugate gradient failed or met a non positive-definite operator."""


class DidNotConverge(NumericError):
    """A counterfactual search ended below the target probability."""


class NonFiniteLoss(NumericError):
    """A training loss term became NaN or infinite."""


class NotStationary(NumericError):
    """Polishing a search endpoint did not reach a stationary point."""


class NoPositiveRows(DataError, ValueError):
    """A dataset holds no positive-outcome row."""


class TooFewSamples(ConfigError, ValueError):
    """An explainer draws fewer samples than its surrogate has parameters."""

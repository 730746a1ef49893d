from typing import Optional

import pandas as pd

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_ORACLE = 4


class BlmmError(Exception):
    """
    Base class of all errors raised by the toolkit.

    Every error carries a short machine readable `code` and the process `exit_code`
    the command line maps it to.
    """

    code = "blmm-error"
    exit_code = 1

    def __init__(self, message: str, context: Optional[str] = None):
        self.context = context
        super().__init__(f"[{context}] {message}" if context else message)


class InputError(BlmmError, ValueError):
    """Invalid input data or parameters."""

    code = "input"
    exit_code = EXIT_INPUT


class DegenerateKinshipError(InputError):
    code = "degenerate-kinship"


class SingularDesignError(InputError):
    code = "singular-design"


class InvalidPriorError(InputError):
    code = "invalid-prior"


class EmptyGenotypeError(InputError):
    code = "empty-genotype"


class NoCommonVariantError(InputError):
    code = "no-common-variant"


class DimensionMismatchError(InputError):
    code = "dimension-mismatch"


class NonFiniteEntryError(InputError):
    code = "non-finite-entry"


class DuplicateSampleError(InputError):
    code = "duplicate-sample"


class EmptyMatrixError(InputError):
    code = "empty-matrix"


class NumericError(BlmmError, ArithmeticError):
    """Numerical failure on otherwise valid input."""

    code = "numeric"
    exit_code = EXIT_NUMERIC


class CollinearEffectError(NumericError):
    code = "collinear-effect"


class PerfectFitError(NumericError):
    code = "perfect-fit"


class EmptyChainError(NumericError):
    code = "empty-chain"


class OptimizationError(NumericError):
    """
    Variance ratio search failed. `diagnostics` holds the coarse grid with columns
    `log10_lambda`, `objective` and `tau`.
    """

    code = "optimization"

    def __init__(self, message: str, diagnostics: Optional[pd.DataFrame] = None, context: Optional[str] = None):
        super().__init__(message, context)
        self.diagnostics = diagnostics


class OracleError(BlmmError):
    """Numerical integration oracle did not converge."""

    code = "oracle"
    exit_code = EXIT_ORACLE

    def __init__(self, message: str, diagnostics: Optional[dict] = None, context: Optional[str] = None):
        super().__init__(message, context)
        self.diagnostics = diagnostics or {}

from typing import Optional, Sequence

import numpy as np
import pandas as pd
from numpy.testing import assert_array_almost_equal

from ..utils import log10_weighted_sum


def assert_probabilities(values: Sequence[float], tol: float = 1e-12) -> None:
    values = np.asarray(values, dtype=float)
    assert np.all(values >= -tol) and np.all(values <= 1 + tol), f"Values outside [0, 1]: {values}"


def assert_log10_mixture(combined: float, components: Sequence[float], weights: Sequence[float]) -> None:
    """Combined $\\log_{10}$ BF equals the weighted mixture and lies between the components."""
    assert np.isclose(combined, log10_weighted_sum(components, weights), rtol=0, atol=1e-12)
    assert min(components) - 1e-12 <= combined <= max(components) + 1e-12


def assert_same_tables(expected: pd.DataFrame, target: pd.DataFrame, decimal: int = 12) -> None:
    assert list(expected.columns) == list(target.columns)
    assert expected.shape == target.shape
    for c in expected.columns:
        if pd.api.types.is_numeric_dtype(expected[c]) and not pd.api.types.is_bool_dtype(expected[c]):
            assert_array_almost_equal(expected[c].to_numpy(dtype=float), target[c].to_numpy(dtype=float), decimal)
        else:
            assert expected[c].astype(str).tolist() == target[c].astype(str).tolist(), c


def check_docstring(doc: Optional[str], indent: int) -> None:
    """
    Executes the first `python` block of a docstring, `indent` leading spaces are stripped from every line.
    """
    if not doc:
        return
    opening = "```python\n"
    start = doc.find(opening)
    if start == -1:
        return
    end = doc.find("```\n", start + len(opening))
    if end == -1:
        return
    code = doc[start + len(opening) : end].replace(" " * indent, "")
    exec(compile(code, "<docstring>", "exec"), {})  # noqa: S102

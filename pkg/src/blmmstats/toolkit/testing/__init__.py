from .test_dao import TestDao
from .test_data import TestData
from .utils import assert_log10_mixture, assert_probabilities, assert_same_tables, check_docstring

__all__ = [
    "TestDao",
    "TestData",
    "assert_log10_mixture",
    "assert_probabilities",
    "assert_same_tables",
    "check_docstring",
]

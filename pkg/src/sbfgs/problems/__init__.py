from .base import StochasticProblem
from .io import DatasetParseError, read_csv, read_dataset, read_libsvm
from .logistic import (LogisticProblem, bundled_dataset_path, load_digits,
                       logistic_from_file, logistic_smoothness)
from .quadratic import QuadraticProblem, gen_quadratic, wishart_bartlett

__all__ = [
    "StochasticProblem", "QuadraticProblem", "LogisticProblem", "DatasetParseError",
    "gen_quadratic", "wishart_bartlett", "logistic_from_file", "logistic_smoothness",
    "load_digits", "bundled_dataset_path", "read_csv", "read_libsvm", "read_dataset",
]

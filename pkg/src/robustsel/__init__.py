"""Consensus feature selection and adversarial robustness benchmarking
for binary network-flow intrusion detection."""

from robustsel.errors import DataError, DegenerateError, RobustSelError

__version__ = "0.1.0"

__all__ = ["DataError", "DegenerateError", "RobustSelError", "__version__"]

"""Two-stage risk instrument: flag especially lengthy sentences, then predict the flags
from legally irrelevant case factors."""
__version__ = "0.1.0"

from flipped_risk._roles import AucBand, ColumnKind, ColumnRole, Partition  # noqa: E402
from flipped_risk.errors import (  # noqa: E402
    ColumnMismatchError,
    ConfigError,
    DataError,
    DegenerateLabelsError,
    EmptyDataError,
    FlippedRiskError,
    NumericalError,
    SchemaError,
)

__all__ = [
    "__version__",
    "AucBand",
    "ColumnKind",
    "ColumnRole",
    "Partition",
    "ColumnMismatchError",
    "ConfigError",
    "DataError",
    "DegenerateLabelsError",
    "EmptyDataError",
    "FlippedRiskError",
    "NumericalError",
    "SchemaError",
]

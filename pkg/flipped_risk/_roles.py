"""Column kinds, column roles, partitions and AUC bands."""
from enum import Enum

from rich.text import Text


class _LabelledEnum(Enum):
    """An enum parsed from, and compared against, its lowercase text label."""

    @classmethod
    def parse(cls, value: "str | _LabelledEnum") -> "_LabelledEnum":
        """Parse a label such as `"relevant"` into a member."""
        if isinstance(value, cls):
            return value
        label = str(value).strip().lower()
        for member in cls:
            if member.value == label:
                return member
        choices = ", ".join(member.value for member in cls)
        raise ValueError(f"Invalid {cls.__name__}: {value!r} (expected one of {choices})")

    def __eq__(self, other: object) -> bool:
        if isinstance(other, type(self)):
            return self.value == other.value
        if isinstance(other, str):
            return self.value == other
        return False

    def __hash__(self) -> int:
        return hash(self.value)

    def __str__(self) -> str:
        return str(self.value)

    def __repr__(self) -> str:
        return f"{type(self).__name__}.{str(self.name).upper()}"

    def __rich__(self) -> Text:
        kind = Text(type(self).__name__, style="bold italic #7FD6E8")
        dot = Text(".", style="bold.white")
        value = Text(str(self.value), style="bold lime")
        return Text.assemble(kind, dot, value)


class ColumnKind(_LabelledEnum):
    """How a column is stored and cleaned."""

    CATEGORICAL = "categorical"
    NUMERIC = "numeric"
    ENHANCEMENT_POINTS = "enhancement-points"

    @property
    def is_numeric(self) -> bool:
        """Enhancement points are stored as numbers."""
        return self is not ColumnKind.CATEGORICAL


class ColumnRole(_LabelledEnum):
    """Which stage, if any, a column feeds."""

    OUTCOME = "outcome"
    RELEVANT = "relevant"
    IRRELEVANT = "irrelevant"
    IGNORED = "ignored"


class Partition(_LabelledEnum):
    """Train/test assignment of a row."""

    TRAIN = "train"
    TEST = "test"


class AucBand(_LabelledEnum):
    """Qualitative AUC bands used by criminal-justice risk instruments."""

    POOR = "poor"
    FAIR = "fair"
    GOOD = "good"
    EXCELLENT = "excellent"

    @classmethod
    def of(cls, auc: float) -> "AucBand":
        """Band an AUC after rounding it to two decimals."""
        rounded = round(float(auc), 2)
        if rounded >= 0.71:
            return cls.EXCELLENT
        if rounded >= 0.64:
            return cls.GOOD
        if rounded >= 0.55:
            return cls.FAIR
        return cls.POOR

    def __rich__(self) -> Text:
        return Text(str(self.value), style=f"band.{self.value}")

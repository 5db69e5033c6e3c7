"""Turn Stage-1 posterior summaries into the binary "especially lengthy" label."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from rich.table import Table
from rich.text import Text
from scipy.special import ndtri

from flipped_risk.errors import ConfigError, DataError, EmptyDataError, NumericalError
from flipped_risk.hbart import PosteriorSummary
from flipped_risk.log import log

DEFAULT_ALPHA = 0.1
GUIDELINE_EDGES = (0.0, 12.0, 24.0, 60.0, 120.0, 240.0, np.inf)
# Margins within this fraction of |y| + |f̄| + |z|·s̄ are ties.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class FlagConfig:
    """Tail probability and its standard-normal upper quantile Φ⁻¹(1 − α)."""

    alpha: float = DEFAULT_ALPHA
    quantile_z: float = field(init=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "quantile_z", float(ndtri(1.0 - self.alpha)))


@dataclass(frozen=True, eq=False)
class FlagSet:
    """Per-row flags with everything needed to audit them."""

    labels: np.ndarray
    thresholds: np.ndarray
    alpha: float
    y: np.ndarray
    f_bar: np.ndarray
    s_bar: np.ndarray
    row_ids: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def flag_rate(self) -> float:
        """Fraction of rows flagged."""
        return float(self.labels.mean()) if len(self) else 0.0

    def take(self, rows: np.ndarray) -> "FlagSet":
        """Keep the rows selected by a mask or index."""
        return FlagSet(
            labels=self.labels[rows], thresholds=self.thresholds[rows], alpha=self.alpha,
            y=self.y[rows], f_bar=self.f_bar[rows], s_bar=self.s_bar[rows], row_ids=self.row_ids[rows],
        )

    def to_frame(self) -> pd.DataFrame:
        """Row id, outcome, f̄, s̄, threshold and label per row."""
        return pd.DataFrame(
            {
                "row_id": self.row_ids,
                "y": self.y,
                "f_bar": self.f_bar,
                "s_bar": self.s_bar,
                "threshold": self.thresholds,
                "label": self.labels.astype(np.int64),
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, alpha: float) -> "FlagSet":
        """Rebuild from a frame with the `to_frame` columns."""
        missing = [c for c in ("row_id", "y", "f_bar", "s_bar", "threshold", "label") if c not in frame]
        if missing:
            raise DataError(f"Flag table lacks column {missing[0]!r}")
        return cls(
            labels=frame["label"].to_numpy(dtype=np.int8),
            thresholds=frame["threshold"].to_numpy(dtype=float),
            alpha=alpha,
            y=frame["y"].to_numpy(dtype=float),
            f_bar=frame["f_bar"].to_numpy(dtype=float),
            s_bar=frame["s_bar"].to_numpy(dtype=float),
            row_ids=frame["row_id"].to_numpy(dtype=np.int64),
        )


def flag(summary: PosteriorSummary, y: np.ndarray, cfg: FlagConfig) -> FlagSet:
    """Label a row when its outcome exceeds f̄ + Φ⁻¹(1 − α)·s̄; ties stay unflagged.

    A margin `y - f̄ - z·s̄` smaller than rounding at the inputs' own magnitude counts as a tie,
    so rescaling y, f̄ and s̄ by the same positive factor leaves the labels alone.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != summary.f_bar.shape:
        raise DataError(f"Outcome has {y.size} rows but the summary has {summary.f_bar.size}")
    for name, values in (("f_bar", summary.f_bar), ("s_bar", summary.s_bar), ("y", y)):
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"{name} contains non-finite values")
    if not np.all(summary.s_bar > 0):
        raise NumericalError("s_bar must be strictly positive")
    z = cfg.quantile_z
    thresholds = summary.f_bar + z * summary.s_bar
    margin = (y - summary.f_bar) - z * summary.s_bar
    magnitude = np.abs(y) + np.abs(summary.f_bar) + abs(z) * summary.s_bar
    labels = (margin > TIE_RTOL * magnitude).astype(np.int8)
    log.info(f"alpha={cfg.alpha:g} (z={cfg.quantile_z:.5f}): flagged {int(labels.sum())} of {labels.size} rows")
    return FlagSet(
        labels=labels,
        thresholds=thresholds,
        alpha=cfg.alpha,
        y=y,
        f_bar=summary.f_bar,
        s_bar=summary.s_bar,
        row_ids=summary.row_ids,
    )


@dataclass(frozen=True, eq=False)
class FlagRateTable:
    """Rows of (bin, count, flagged, flagged_fraction)."""

    frame: pd.DataFrame
    title: str = "Flag rate by bin"

    def __rich__(self) -> Table:
        table = Table(title=self.title, title_style="table.title", header_style="table.header",
                      border_style="table.border")
        table.add_column("bin", style="label")
        table.add_column("count", justify="right", style="value")
        table.add_column("flagged", justify="right", style="flag.on")
        table.add_column("fraction", justify="right", style="value")
        for row in self.frame.itertuples(index=False):
            table.add_row(str(row.bin), str(row.count), str(row.flagged), Text(f"{row.flagged_fraction:.4f}"))
        return table


def flag_rate_by_bin(flags: FlagSet, bin_key: Sequence | np.ndarray, title: Optional[str] = None) -> FlagRateTable:
    """Count and flagged fraction per category of `bin_key`."""
    keys = np.asarray(bin_key, dtype=object)
    if len(flags) == 0:
        raise EmptyDataError("No flags to tabulate")
    if keys.size != len(flags):
        raise DataError(f"bin_key has {keys.size} entries but there are {len(flags)} flags")
    frame = (
        pd.DataFrame({"bin": keys.astype(str), "label": flags.labels.astype(np.int64)})
        .groupby("bin", sort=True)["label"]
        .agg(count="size", flagged="sum")
        .reset_index()
    )
    frame["flagged_fraction"] = frame["flagged"] / frame["count"]
    return FlagRateTable(frame=frame, title=title or "Flag rate by bin")


def guideline_range_bins(lower: np.ndarray, edges: Sequence[float] = GUIDELINE_EDGES) -> np.ndarray:
    """Label each row by the interval of its guideline minimum, e.g. `[12, 24)`; missing stays `unknown`."""
    lower = np.asarray(lower, dtype=float)
    edges = np.asarray(edges, dtype=float)
    labels = np.array(
        [f"[{lo:g}, {hi:g})" if np.isfinite(hi) else f"[{lo:g}, inf)" for lo, hi in zip(edges[:-1], edges[1:])],
        dtype=object,
    )
    index = np.searchsorted(edges, lower, side="right") - 1
    out = np.full(lower.size, "unknown", dtype=object)
    valid = np.isfinite(lower) & (index >= 0) & (index < labels.size)
    out[valid] = labels[index[valid]]
    return out


def guideline_position_table(
    flags: FlagSet,
    y: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    bin_key: Sequence | np.ndarray,
) -> pd.DataFrame:
    """Share of sentences below, within and above [lower, upper] per bin and flag group.

    Rows with a missing guideline bound are left out.
    """
    y = np.asarray(y, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    keys = np.asarray(bin_key, dtype=object)
    if not (y.size == lower.size == upper.size == keys.size == len(flags)):
        raise DataError("guideline_position_table inputs differ in length")
    known = np.isfinite(lower) & np.isfinite(upper)
    if not known.any():
        raise EmptyDataError("No rows carry both guideline bounds")
    position = np.where(y < lower, "below", np.where(y > upper, "above", "within"))
    frame = pd.DataFrame(
        {
            "bin": keys[known].astype(str),
            "flagged": flags.labels[known].astype(np.int64),
            "position": position[known],
        }
    )
    shares = pd.crosstab([frame["bin"], frame["flagged"]], frame["position"], normalize="index")
    shares = shares.reindex(columns=["below", "within", "above"], fill_value=0.0)
    counts = frame.groupby(["bin", "flagged"]).size().rename("count")
    return shares.join(counts).reset_index()[["bin", "flagged", "count", "below", "within", "above"]]

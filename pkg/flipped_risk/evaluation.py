"""ROC/AUC, equal-frequency risk bins, the Geweke diagnostic and the alpha sensitivity table."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from rich.table import Table
from rich.text import Text
from scipy.stats import norm, rankdata

from flipped_risk._roles import AucBand
from flipped_risk.errors import ConfigError, DataError, DegenerateLabelsError, NumericalError

QUINTILE_LABELS = ("Low", "Low-Moderate", "Moderate", "Moderate-High", "High")
MIN_TRACE = 100


def _binary(labels: np.ndarray | Sequence[int]) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise DataError("Labels must be 0/1")
    return labels.astype(np.int64)


def _check_pair(scores: np.ndarray, labels: np.ndarray) -> None:
    if scores.shape != labels.shape:
        raise DataError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isfinite(scores)):
        raise NumericalError("Scores contain non-finite values")
    positives = int(labels.sum())
    if positives == 0 or positives == labels.size:
        raise DegenerateLabelsError("AUC needs both classes among the labels")


def auc_score(scores: np.ndarray | Sequence[float], labels: np.ndarray | Sequence[int]) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = _binary(labels)
    _check_pair(scores, labels)
    ranks = rankdata(scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u_stat = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


@dataclass(frozen=True, eq=False)
class RocCurve:
    """ROC points from (0, 0) to (1, 1), one per distinct score threshold."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> np.ndarray:
        """(n_points, 2) array of (false-positive rate, true-positive rate)."""
        return np.column_stack([self.fpr, self.tpr])

    @property
    def band(self) -> AucBand:
        """Qualitative band of the AUC."""
        return AucBand.of(self.auc)

    def trapezoid_area(self) -> float:
        """Area under the piecewise-linear curve through the points."""
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def point_bins(self, edges: np.ndarray) -> np.ndarray:
        """Risk-bin index of each point's threshold given ascending inner bin edges.

        The first point, at an infinite threshold, takes the highest bin.
        """
        finite = np.where(np.isfinite(self.thresholds), self.thresholds, np.inf)
        return np.minimum(np.searchsorted(edges, finite, side="right"), edges.size)

    def to_frame(self, edges: Optional[np.ndarray] = None) -> pd.DataFrame:
        """Points with their thresholds, plus the risk bin when `edges` is given."""
        frame = pd.DataFrame({"threshold": self.thresholds, "fpr": self.fpr, "tpr": self.tpr})
        if edges is not None:
            frame["risk_bin"] = self.point_bins(edges)
        return frame

    def __rich__(self) -> Table:
        table = Table(title="ROC", title_style="table.title", show_header=False, border_style="table.border")
        table.add_column(style="label")
        table.add_column(justify="right")
        table.add_row("AUC", Text(f"{self.auc:.4f}", style="value"))
        table.add_row("band", self.band.__rich__())
        table.add_row("points", Text(str(self.fpr.size), style="value"))
        return table


def auc(scores: np.ndarray | Sequence[float], labels: np.ndarray | Sequence[int]) -> RocCurve:
    """ROC curve and Mann-Whitney AUC of `scores` against binary `labels`."""
    scores = np.asarray(scores, dtype=float)
    labels = _binary(labels)
    value = auc_score(scores, labels)
    order = np.argsort(-scores, kind="stable")
    ranked = scores[order]
    hits = np.cumsum(labels[order])
    ends = np.r_[np.flatnonzero(np.diff(ranked)), ranked.size - 1]
    tps = hits[ends]
    fps = ends + 1 - tps
    n_pos = hits[-1]
    n_neg = labels.size - n_pos
    return RocCurve(
        fpr=np.r_[0.0, fps / n_neg],
        tpr=np.r_[0.0, tps / n_pos],
        thresholds=np.r_[np.inf, ranked[ends]],
        auc=value,
    )


@dataclass(frozen=True, eq=False)
class RiskBinTable:
    """Equal-frequency score bins, low to high, with the empirical flag fraction per bin.

    `frame` holds one row per bin: bin, label, count, flagged, fraction, se, lower, upper.
    `se` is the binomial standard error sqrt(f(1 - f) / count). `edges` holds the k - 1 inner
    boundaries, each the lowest score of the next bin.
    """

    frame: pd.DataFrame
    edges: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.frame["count"].to_numpy()

    @property
    def fractions(self) -> np.ndarray:
        return self.frame["fraction"].to_numpy()

    def __rich__(self) -> Table:
        table = Table(title="Risk bins", title_style="table.title", header_style="table.header",
                      border_style="table.border")
        for name in ("bin", "count", "flagged", "fraction", "se", "score range"):
            table.add_column(name, justify="left" if name == "bin" else "right")
        for row in self.frame.itertuples(index=False):
            table.add_row(
                Text(str(row.label), style="label"),
                Text(str(row.count), style="value"),
                Text(str(row.flagged), style="flag.on"),
                Text(f"{row.fraction:.4f}", style="value"),
                f"{row.se:.4f}",
                f"{row.lower:.4f}–{row.upper:.4f}",
            )
        return table


def risk_bins(scores: np.ndarray | Sequence[float], labels: np.ndarray | Sequence[int], k: int = 5) -> RiskBinTable:
    """Split rows into `k` equal-frequency bins by score; equal scores keep input order."""
    if k < 2:
        raise ConfigError(f"Risk bins need k >= 2, got {k}")
    scores = np.asarray(scores, dtype=float)
    labels = _binary(labels)
    if scores.shape != labels.shape:
        raise DataError(f"{scores.size} scores but {labels.size} labels")
    if scores.size < k:
        raise DataError(f"Cannot form {k} bins from {scores.size} rows")
    names = QUINTILE_LABELS if k == len(QUINTILE_LABELS) else tuple(f"bin {i + 1}" for i in range(k))
    groups = np.array_split(np.argsort(scores, kind="stable"), k)
    records = []
    for index, (name, rows) in enumerate(zip(names, groups)):
        fraction = float(labels[rows].mean())
        records.append(
            {
                "bin": index,
                "label": name,
                "count": int(rows.size),
                "flagged": int(labels[rows].sum()),
                "fraction": fraction,
                "se": float(np.sqrt(fraction * (1.0 - fraction) / rows.size)),
                "lower": float(scores[rows].min()),
                "upper": float(scores[rows].max()),
            }
        )
    frame = pd.DataFrame.from_records(records)
    return RiskBinTable(frame=frame, edges=frame["lower"].to_numpy()[1:])


@dataclass(frozen=True)
class GewekeResult:
    """Geweke z-score comparing an early and a late chain segment."""

    z_score: float
    p_value: float
    first: float
    last: float
    n: int

    def as_dict(self) -> Mapping[str, float]:
        return {"z_score": self.z_score, "p_value": self.p_value, "first": self.first, "last": self.last, "n": self.n}

    def __rich__(self) -> Table:
        table = Table(title="Geweke", title_style="table.title", show_header=False, border_style="table.border")
        table.add_column(style="label")
        table.add_column(style="value", justify="right")
        table.add_row("z", f"{self.z_score:.3f}")
        table.add_row("p", f"{self.p_value:.3f}")
        table.add_row("segments", f"first {self.first:g}, last {self.last:g} of {self.n}")
        return table


def spectral_variance(segment: np.ndarray) -> float:
    """Variance of the segment mean from a Bartlett lag-window spectral density at zero.

    The window has floor(sqrt(m)) lags for a segment of length m.
    """
    m = segment.size
    centred = segment - segment.mean()
    lags = int(np.floor(np.sqrt(m)))
    gamma = np.array([centred[: m - h] @ centred[h:] / m for h in range(lags + 1)])
    weights = 1.0 - np.arange(lags + 1) / (lags + 1.0)
    density = gamma[0] + 2.0 * np.sum(weights[1:] * gamma[1:])
    return float(density / m)


def geweke(trace: np.ndarray | Sequence[float], first: float = 0.1, last: float = 0.5) -> GewekeResult:
    """Geweke convergence z-score of a single chain trace.

    Raises:
        ConfigError: Segment fractions outside (0, 1) or summing past 1.
        DataError: Fewer than 100 values.
        NumericalError: A segment has no variance.
    """
    for fraction in (first, last):
        if not 0.0 < fraction < 1.0:
            raise ConfigError(f"Geweke segment fractions must lie in (0, 1), got {(first, last)}")
    if first + last > 1.0:
        raise ConfigError(f"Geweke segments overlap: first + last = {first + last:g}")
    trace = np.asarray(trace, dtype=float)
    n = trace.size
    if n < MIN_TRACE:
        raise DataError(f"Geweke needs at least {MIN_TRACE} values, got {n}")
    early = trace[: int(first * n)]
    late = trace[n - int(last * n):]
    variance = spectral_variance(early) + spectral_variance(late)
    if not variance > 0:
        raise NumericalError("Trace segments have zero variance")
    z = float((early.mean() - late.mean()) / np.sqrt(variance))
    return GewekeResult(z_score=z, p_value=float(2.0 * norm.sf(abs(z))), first=first, last=last, n=n)


@dataclass(frozen=True)
class AlphaRun:
    """Outcome of one pipeline run at a given alpha."""

    alpha: float
    train_auc: float
    test_auc: float
    flag_rate: float = float("nan")


@dataclass(frozen=True, eq=False)
class AlphaAucTable:
    """Train/test AUC per alpha."""

    frame: pd.DataFrame

    def __rich__(self) -> Table:
        table = Table(title="Stage 2 AUC by alpha", title_style="table.title", header_style="table.header",
                      border_style="table.border")
        for name in ("alpha", "flagged", "train AUC", "test AUC", "test band"):
            table.add_column(name, justify="right")
        for row in self.frame.itertuples(index=False):
            table.add_row(
                Text(f"{row.alpha:.2f}", style="label"),
                f"{row.flag_rate:.3f}",
                Text(f"{row.train_auc:.2f}", style="value"),
                Text(f"{row.test_auc:.2f}", style="value"),
                AucBand.of(row.test_auc).__rich__(),
            )
        return table


def table_model2_aucs(runs: Iterable[AlphaRun]) -> AlphaAucTable:
    """One row per alpha, sorted ascending."""
    frame = pd.DataFrame.from_records(
        [
            {"alpha": run.alpha, "flag_rate": run.flag_rate, "train_auc": run.train_auc, "test_auc": run.test_auc}
            for run in runs
        ],
        columns=["alpha", "flag_rate", "train_auc", "test_auc"],
    )
    frame = frame.sort_values("alpha", kind="stable").reset_index(drop=True)
    frame["test_band"] = [str(AucBand.of(value)) for value in frame["test_auc"]]
    return AlphaAucTable(frame=frame)


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    """Everything `evaluate` reports for one pipeline run."""

    roc_test: RocCurve
    roc_train: RocCurve
    bins: RiskBinTable
    r_squared: pd.DataFrame
    geweke_f: Optional[GewekeResult] = None
    geweke_s: Optional[GewekeResult] = None

    def summary_frame(self) -> pd.DataFrame:
        """One row per quantity."""
        rows = [
            ("train_auc", self.roc_train.auc, str(self.roc_train.band)),
            ("test_auc", self.roc_test.auc, str(self.roc_test.band)),
        ]
        for name, result in (("geweke_f", self.geweke_f), ("geweke_s", self.geweke_s)):
            if result is not None:
                rows.append((f"{name}_z", result.z_score, ""))
                rows.append((f"{name}_p", result.p_value, ""))
        for record in self.r_squared.itertuples(index=False):
            rows.append((f"{record.split}_r2", record.r2, ""))
            rows.append((f"{record.split}_adjusted_r2", record.adjusted_r2, ""))
        return pd.DataFrame.from_records(rows, columns=["quantity", "value", "band"])

    def __rich__(self) -> Table:
        table = Table(title="Evaluation", title_style="table.title", header_style="table.header",
                      border_style="table.border")
        table.add_column("quantity", style="label")
        table.add_column("value", justify="right", style="value")
        table.add_column("band", justify="left")
        for row in self.summary_frame().itertuples(index=False):
            band = AucBand.parse(row.band).__rich__() if row.band else Text("")
            table.add_row(row.quantity, f"{row.value:.4f}", band)
        return table

"""Static SVG figures for the evaluation, flag and trace data products."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from flipped_risk.evaluation import RiskBinTable, RocCurve
from flipped_risk.log import log

# Fixed salt and no date so reruns write identical files.
matplotlib.rcParams["svg.hashsalt"] = "flipped-risk"
_METADATA = {"Date": None, "Creator": None}
DIGEST_KEY = "Description"
BIN_COLOURS = ("#2c7bb6", "#abd9e9", "#ffffbf", "#fdae61", "#d7191c")


def _subplots(*grid: int, figsize, **kwargs):
    # No pyplot state: the alpha sweep renders from worker threads.
    fig = Figure(figsize=figsize)
    return fig, fig.subplots(*grid, **kwargs)


def _save(fig: Figure, path: Path | str, digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={**_METADATA, DIGEST_KEY: f"inputs-sha256: {digest}"})
    log.debug(f"Wrote figure {path}")
    return path


def _bin_colour(index: int, n_bins: int) -> str:
    if n_bins == len(BIN_COLOURS):
        return BIN_COLOURS[index]
    return matplotlib.colormaps["RdYlBu_r"](index / max(n_bins - 1, 1))


def roc_svg(curve: RocCurve, path: Path | str, edges: Optional[np.ndarray] = None, *, digest: str) -> Path:
    """ROC curve; with risk-bin `edges` each segment is coloured by the bin of its threshold."""
    fig, ax = _subplots(figsize=(5, 5))
    if edges is None:
        ax.plot(curve.fpr, curve.tpr, color="#333333", lw=1.5)
    else:
        bins = curve.point_bins(edges)
        n_bins = edges.size + 1
        for i in range(1, curve.fpr.size):
            ax.plot(curve.fpr[i - 1:i + 1], curve.tpr[i - 1:i + 1], color=_bin_colour(int(bins[i]), n_bins), lw=2)
    ax.plot([0, 1], [0, 1], ls="--", color="#999999", lw=1)
    ax.set_xlabel("False-positive rate")
    ax.set_ylabel("True-positive rate")
    ax.set_title(f"ROC (AUC = {curve.auc:.3f}, {curve.band})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    return _save(fig, path, digest)


def risk_bins_svg(table: RiskBinTable, path: Path | str, *, digest: str) -> Path:
    """Flagged fraction per risk bin with binomial standard-error bars."""
    frame = table.frame
    fig, ax = _subplots(figsize=(6, 4))
    colours = [_bin_colour(i, len(frame)) for i in range(len(frame))]
    ax.bar(frame["label"], frame["fraction"], yerr=frame["se"], color=colours, edgecolor="#333333", capsize=4)
    ax.set_ylabel("Fraction flagged")
    ax.set_xlabel("Predicted risk")
    ax.set_title("Flag rate by risk bin")
    fig.autofmt_xdate(rotation=20)
    return _save(fig, path, digest)


def trace_svg(traces: pd.DataFrame, path: Path | str, *, digest: str) -> Path:
    """Per-draw means of f and s over the training rows."""
    fig, (top, bottom) = _subplots(2, 1, figsize=(8, 5), sharex=True)
    top.plot(traces["draw"], traces["mean_f"], lw=0.6, color="#2c7bb6")
    top.set_ylabel("mean f (months)")
    bottom.plot(traces["draw"], traces["mean_s"], lw=0.6, color="#d7191c")
    bottom.set_ylabel("mean s (months)")
    bottom.set_xlabel("retained draw")
    return _save(fig, path, digest)


def flag_scatter_svg(flags: pd.DataFrame, path: Path | str, *, digest: str) -> Path:
    """Observed against predicted sentence length, flagged rows highlighted."""
    fig, ax = _subplots(figsize=(6, 6))
    flagged = flags["label"].to_numpy() == 1
    ax.scatter(flags["f_bar"][~flagged], flags["y"][~flagged], s=4, alpha=0.4, color="#888888", label="not flagged")
    ax.scatter(flags["f_bar"][flagged], flags["y"][flagged], s=6, alpha=0.8, color="#d7191c", label="flagged")
    top = float(max(flags["f_bar"].max(), flags["y"].max()))
    ax.plot([0, top], [0, top], ls="--", color="#333333", lw=1)
    ax.set_xlabel("Predicted f̄ (months)")
    ax.set_ylabel("Observed sentence (months)")
    ax.legend(loc="upper left")
    return _save(fig, path, digest)


def cv_curve_svg(cv: pd.DataFrame, path: Path | str, chosen: float, best: float, *, digest: str) -> Path:
    """Cross-validated AUC against lambda with the chosen and best lambdas marked."""
    fig, ax = _subplots(figsize=(6, 4))
    ax.errorbar(cv["lambda"], cv["mean_auc"], yerr=cv["se_auc"], fmt="o-", ms=2, lw=1, color="#2c7bb6")
    ax.axvline(chosen, color="#d7191c", ls="--", lw=1, label="chosen")
    ax.axvline(best, color="#333333", ls=":", lw=1, label="best mean AUC")
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("CV AUC")
    ax.legend()
    return _save(fig, path, digest)

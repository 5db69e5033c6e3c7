"""Stage 2: L1-penalised logistic regression by coordinate descent, tuned by cross-validated AUC."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.table import Table
from rich.text import Text
from scipy.special import expit

from flipped_risk.data import DesignMatrix, check_columns
from flipped_risk.errors import ConfigError, DataError, DegenerateLabelsError, NumericalError
from flipped_risk.evaluation import auc_score
from flipped_risk.log import log

FORMAT_VERSION = 1
MIN_WEIGHT = 1e-5
BOUND_WEIGHT = 0.25


@dataclass(frozen=True)
class SolverSettings:
    """Coordinate-descent stopping rules and working weights."""

    tol: float = 1e-7
    max_sweeps: int = 10_000
    max_inner_passes: int = 1_000
    bound_weights: bool = False


def soft_threshold(value: float | np.ndarray, lam: float) -> float | np.ndarray:
    """sign(value) * max(|value| - lam, 0)."""
    return np.sign(value) * np.maximum(np.abs(value) - lam, 0.0)


def objective(X: np.ndarray, y: np.ndarray, intercept: float, coef: np.ndarray, lam: float) -> float:
    """Mean negative log-likelihood plus lam * ||coef||_1; the intercept is not penalised."""
    eta = intercept + X @ coef
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(coef).sum())


def gradient(X: np.ndarray, y: np.ndarray, intercept: float, coef: np.ndarray) -> Tuple[float, np.ndarray]:
    """Gradient of the mean negative log-likelihood in (intercept, coef)."""
    resid = expit(intercept + X @ coef) - y
    return float(resid.mean()), X.T @ resid / y.size


def kkt_violation(X: np.ndarray, y: np.ndarray, intercept: float, coef: np.ndarray, lam: float) -> float:
    """Largest departure from the lasso optimality conditions.

    Zero coefficients need |g_j| <= lam, non-zero ones g_j + lam * sign(b_j) = 0, and the
    intercept a zero gradient.
    """
    g0, g = gradient(X, y, intercept, coef)
    active = coef != 0
    worst = abs(g0)
    if active.any():
        worst = max(worst, float(np.abs(g[active] + lam * np.sign(coef[active])).max()))
    if (~active).any():
        worst = max(worst, float(np.maximum(np.abs(g[~active]) - lam, 0.0).max()))
    return worst


def weighted_lasso_cd(
    Xt: np.ndarray,
    z: np.ndarray,
    w: np.ndarray,
    intercept: float,
    coef: np.ndarray,
    lam: float,
    order: np.ndarray,
    tol: float = 1e-7,
    max_passes: int = 1_000,
) -> Tuple[float, np.ndarray]:
    """Minimise (1/2n) Σ w (z - b0 - x b)² + lam ||b||_1 by cyclic coordinate descent.

    `Xt` is the transposed design (columns as rows). A full pass over `order` is followed by passes
    over the non-zero coordinates until they settle, then another full pass to confirm.
    """
    n = z.size
    coef = coef.copy()
    resid = z - intercept - coef @ Xt
    denom = (Xt * Xt) @ w / n
    wsum = w.sum()
    full = True
    for _ in range(max_passes):
        shift = float(w @ resid / wsum)
        intercept += shift
        resid -= shift
        max_change = abs(shift)
        columns = order if full else order[coef[order] != 0]
        for j in columns:
            if denom[j] == 0:
                continue
            xj = Xt[j]
            old = coef[j]
            rho = float(xj @ (w * resid)) / n + denom[j] * old
            new = float(soft_threshold(rho, lam)) / denom[j]
            if new != old:
                resid -= xj * (new - old)
                coef[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol:
            if full:
                break
            full = True
        else:
            full = False
    return intercept, coef


def _fit_one(
    X: np.ndarray,
    Xt: np.ndarray,
    y: np.ndarray,
    lam: float,
    intercept: float,
    coef: np.ndarray,
    order: np.ndarray,
    settings: SolverSettings,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Proximal-Newton sweeps at one lam from a warm start; returns the objective history too."""
    current = objective(X, y, intercept, coef, lam)
    history = [current]
    for _ in range(settings.max_sweeps):
        eta = intercept + X @ coef
        prob = expit(eta)
        if settings.bound_weights:
            w = np.full(y.size, BOUND_WEIGHT)
        else:
            w = np.maximum(prob * (1.0 - prob), MIN_WEIGHT)
        z = eta + (y - prob) / w
        new_intercept, new_coef = weighted_lasso_cd(
            Xt, z, w, intercept, coef, lam, order, settings.tol, settings.max_inner_passes
        )
        step = 1.0
        while True:
            cand_intercept = intercept + step * (new_intercept - intercept)
            cand_coef = coef + step * (new_coef - coef)
            value = objective(X, y, cand_intercept, cand_coef, lam)
            if value <= current or step < 1e-6:
                break
            step /= 2.0
        if value > current:
            break
        change = max(abs(cand_intercept - intercept), float(np.abs(cand_coef - coef).max(initial=0.0)))
        intercept, coef, current = cand_intercept, cand_coef, value
        history.append(current)
        if change < settings.tol:
            break
    return intercept, coef, np.asarray(history)


def _standardise(Z: DesignMatrix, standardize: bool, strict: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    values = Z.values
    if not standardize:
        return values, np.zeros(values.shape[1]), np.ones(values.shape[1])
    centers = values.mean(axis=0)
    scales = values.std(axis=0)
    for name, scale in zip(Z.column_names, scales):
        if not scale > 0 and strict:
            raise NumericalError(f"Column {name!r} has zero variance and cannot be standardised")
    scales = np.where(scales > 0, scales, 1.0)
    return (values - centers) / scales, centers, scales


def _labels(labels: np.ndarray | Sequence[int], n_rows: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.size != n_rows:
        raise DataError(f"Design has {n_rows} rows but there are {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise DataError("Labels must be 0/1")
    y = y.astype(float)
    if y.min() == y.max():
        raise DegenerateLabelsError("Labels contain a single class")
    return y


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest lam at which every slope is zero: max |X^T (y - mean y)| / n."""
    return float(np.abs(X.T @ (y - y.mean())).max(initial=0.0) / y.size)


def _null_intercept(y: np.ndarray) -> float:
    rate = y.mean()
    return float(np.log(rate / (1.0 - rate)))


@dataclass(frozen=True, eq=False)
class LambdaPath:
    """Coefficients along a decreasing lam grid, on the standardised scale.

    `cv_mean_auc` and `cv_se_auc` are filled in by `select_lambda`.
    """

    lambdas: np.ndarray
    intercepts: np.ndarray
    coefs: np.ndarray
    column_names: Tuple[str, ...]
    centers: np.ndarray
    scales: np.ndarray
    objective_histories: Tuple[np.ndarray, ...] = ()
    seed: int = 0
    cv_mean_auc: Optional[np.ndarray] = None
    cv_se_auc: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.lambdas.size > 1 and not np.all(np.diff(self.lambdas) < 0):
            raise NumericalError("lambda grid must be strictly decreasing")

    def __len__(self) -> int:
        return int(self.lambdas.size)

    @property
    def nonzero(self) -> np.ndarray:
        """Non-zero slope count per lam."""
        return np.count_nonzero(self.coefs, axis=1)

    def original_scale(self, index: int) -> Tuple[float, np.ndarray]:
        """(intercept, coefficients) at grid point `index` on the design's own scale."""
        coef = self.coefs[index] / self.scales
        return float(self.intercepts[index] - coef @ self.centers), coef

    def cv_frame(self) -> pd.DataFrame:
        """Per-lam CV curve."""
        frame = pd.DataFrame({"lambda": self.lambdas, "nonzero": self.nonzero})
        if self.cv_mean_auc is not None:
            frame["mean_auc"] = self.cv_mean_auc
            frame["se_auc"] = self.cv_se_auc
        return frame

    def __rich__(self) -> Table:
        table = Table(title="Lambda path", title_style="table.title", header_style="table.header",
                      border_style="table.border")
        table.add_column("lambda", justify="right", style="label")
        table.add_column("non-zero", justify="right", style="value")
        table.add_column("CV AUC", justify="right", style="value")
        step = max(1, len(self) // 10)
        for i in range(0, len(self), step):
            cv = "" if self.cv_mean_auc is None else f"{self.cv_mean_auc[i]:.4f} ± {self.cv_se_auc[i]:.4f}"
            table.add_row(f"{self.lambdas[i]:.3e}", str(self.nonzero[i]), cv)
        return table


def fit_path(
    Z: DesignMatrix,
    labels: np.ndarray | Sequence[int],
    grid_size: int = 100,
    seed: int = 0,
    *,
    lambdas: Optional[np.ndarray] = None,
    lambda_min_ratio: float = 1e-4,
    standardize: bool = True,
    strict: bool = True,
    settings: SolverSettings = SolverSettings(),
) -> LambdaPath:
    """Fit the lasso path with warm starts from lam_max down to lam_max * `lambda_min_ratio`.

    Args:
        Z (DesignMatrix): Design; columns are standardised internally unless `standardize=False`.
        labels: 0/1 outcome.
        grid_size (int): Number of grid points.
        seed (int): Fixes the coordinate visiting order.
        lambdas (np.ndarray, optional): Explicit decreasing grid, used by cross-validation.
        strict (bool): Raise on zero-variance columns; cross-validation folds pass False so a
            column constant within one fold just stays at zero.

    Raises:
        DegenerateLabelsError: Single-class labels.
        NumericalError: A zero-variance column with standardisation on.
    """
    if grid_size < 1:
        raise ConfigError("grid_size must be at least 1")
    y = _labels(labels, Z.shape[0])
    X, centers, scales = _standardise(Z, standardize, strict)
    Xt = np.ascontiguousarray(X.T)
    if lambdas is None:
        top = lambda_max(X, y)
        lambdas = top * np.logspace(0.0, np.log10(lambda_min_ratio), grid_size) if grid_size > 1 else np.array([top])
        log.info(f"lambda grid: {lambdas[0]:.4e} .. {lambdas[-1]:.4e} ({lambdas.size} points)")
    lambdas = np.asarray(lambdas, dtype=float)
    order = np.random.default_rng(seed).permutation(X.shape[1])
    top = lambda_max(X, y)

    intercept = _null_intercept(y)
    coef = np.zeros(X.shape[1])
    intercepts = np.empty(lambdas.size)
    coefs = np.empty((lambdas.size, X.shape[1]))
    histories: List[np.ndarray] = []
    for i, lam in enumerate(lambdas):
        if lam >= top:
            intercept, coef = _null_intercept(y), np.zeros(X.shape[1])
            history = np.array([objective(X, y, intercept, coef, lam)])
        else:
            intercept, coef, history = _fit_one(X, Xt, y, lam, intercept, coef, order, settings)
        intercepts[i] = intercept
        coefs[i] = coef
        histories.append(history)
    return LambdaPath(
        lambdas=lambdas,
        intercepts=intercepts,
        coefs=coefs,
        column_names=tuple(Z.column_names),
        centers=centers,
        scales=scales,
        objective_histories=tuple(histories),
        seed=seed,
    )


@dataclass(frozen=True, eq=False)
class SparseLogitModel:
    """The Stage-2 risk instrument.

    `intercept` and `coefficients` apply to the design as built; `std_*` are the same fit on the
    internally standardised columns.
    """

    intercept: float
    coefficients: np.ndarray
    lambda_: float
    column_names: Tuple[str, ...]
    centers: np.ndarray
    scales: np.ndarray
    std_intercept: float = 0.0
    std_coefficients: Optional[np.ndarray] = None
    factor_of: Mapping[str, str] = field(default_factory=dict)
    lambda_index: int = 0
    best_auc_lambda: float = float("nan")
    folds: int = 0
    fold_seed: int = 0
    path: Optional[LambdaPath] = None

    def __post_init__(self) -> None:
        if self.coefficients.size != len(self.column_names):
            raise NumericalError("coefficient count differs from column count")

    @classmethod
    def from_path(cls, path: LambdaPath, index: int, **extra) -> "SparseLogitModel":
        """Model at grid point `index`."""
        intercept, coef = path.original_scale(index)
        return cls(
            intercept=intercept,
            coefficients=coef,
            lambda_=float(path.lambdas[index]),
            column_names=path.column_names,
            centers=path.centers,
            scales=path.scales,
            std_intercept=float(path.intercepts[index]),
            std_coefficients=path.coefs[index].copy(),
            lambda_index=index,
            path=path,
            **extra,
        )

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    def __rich__(self) -> Table:
        table = Table(title="Stage 2 model", title_style="table.title", header_style="table.header",
                      border_style="table.border")
        table.add_column("term", style="label")
        table.add_column("coefficient", justify="right", style="value")
        table.add_row("(intercept)", f"{self.intercept:.4f}")
        for name, value in zip(self.column_names, self.coefficients):
            if value != 0:
                table.add_row(name, f"{value:.4f}")
        table.caption = f"lambda={self.lambda_:.4e}, {self.nonzero} of {len(self.column_names)} non-zero"
        return table


def fit_at(
    Z: DesignMatrix,
    labels: np.ndarray | Sequence[int],
    lam: float,
    seed: int = 0,
    *,
    standardize: bool = True,
    settings: SolverSettings = SolverSettings(),
) -> SparseLogitModel:
    """Fit at a single lam (0 gives the unpenalised maximum likelihood on separable-free data)."""
    path = fit_path(Z, labels, 1, seed, lambdas=np.array([float(lam)]), standardize=standardize, settings=settings)
    return SparseLogitModel.from_path(path, 0, factor_of=dict(Z.factor_of))


def assign_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per row: a seeded permutation dealt round-robin.

    A draw that leaves some fold, or its complement, without both classes is redrawn once with a
    derived seed before `DegenerateLabelsError` is raised.
    """
    if folds < 2:
        raise ConfigError(f"Cross-validation needs at least 2 folds, got {folds}")
    n = labels.size
    if n < folds:
        raise DataError(f"Cannot form {folds} folds from {n} rows")
    for attempt, rng in enumerate((np.random.default_rng(seed), np.random.default_rng([seed, 1]))):
        assignment = np.empty(n, dtype=np.int64)
        assignment[rng.permutation(n)] = np.arange(n) % folds
        if all(_both_classes(labels[assignment == k]) and _both_classes(labels[assignment != k]) for k in range(folds)):
            if attempt:
                log.warning(f"Fold draw with seed {seed} lacked a class; reshuffled once")
            return assignment
    raise DegenerateLabelsError(f"Some fold lacks a class even after reshuffling ({folds} folds, seed {seed})")


def _both_classes(labels: np.ndarray) -> bool:
    return 0 < labels.sum() < labels.size


def select_lambda(
    path: LambdaPath,
    Z: DesignMatrix,
    labels: np.ndarray | Sequence[int],
    folds: int = 10,
    seed: int = 0,
    *,
    rule: str = "one-se",
    workers: Optional[int] = None,
    standardize: bool = True,
    settings: SolverSettings = SolverSettings(),
) -> SparseLogitModel:
    """Choose lam by K-fold cross-validated AUC and return the full-data model there.

    With `rule="one-se"` the largest lam whose mean AUC is within one standard error of the best
    is chosen; `rule="max"` takes the best mean AUC. Folds run on a thread pool.
    """
    if rule not in {"one-se", "max"}:
        raise ConfigError(f"Unknown lambda selection rule {rule!r}")
    check_columns(path.column_names, Z.column_names)
    y = _labels(labels, Z.shape[0])
    assignment = assign_folds(y, folds, seed)

    def run_fold(k: int) -> np.ndarray:
        held = assignment == k
        fold_path = fit_path(
            Z.take(~held), y[~held], seed=path.seed, lambdas=path.lambdas, standardize=standardize,
            strict=False, settings=settings,
        )
        scores = np.empty(len(path))
        held_values = Z.values[held]
        for i in range(len(path)):
            intercept, coef = fold_path.original_scale(i)
            scores[i] = auc_score(intercept + held_values @ coef, y[held])
        return scores

    with ThreadPoolExecutor(max_workers=workers) as pool:
        aucs = np.vstack(list(pool.map(run_fold, range(folds))))
    mean = aucs.mean(axis=0)
    se = aucs.std(axis=0, ddof=1) / np.sqrt(folds)
    best = int(np.argmax(mean))
    if rule == "max":
        chosen = best
    else:
        chosen = int(np.flatnonzero(mean >= mean[best] - se[best])[0])
    log.info(
        f"CV ({folds} folds, seed {seed}): best mean AUC {mean[best]:.4f} at lambda {path.lambdas[best]:.4e}; "
        f"chose lambda {path.lambdas[chosen]:.4e} (mean AUC {mean[chosen]:.4f})"
    )
    scored = replace(path, cv_mean_auc=mean, cv_se_auc=se)
    return SparseLogitModel.from_path(
        scored,
        chosen,
        factor_of=dict(Z.factor_of),
        best_auc_lambda=float(path.lambdas[best]),
        folds=folds,
        fold_seed=seed,
    )


def predict_risk(model: SparseLogitModel, Z: DesignMatrix) -> np.ndarray:
    """Inverse-logit of the linear predictor, kept strictly inside (0, 1)."""
    check_columns(model.column_names, Z.column_names)
    eps = np.finfo(float).eps
    return np.clip(expit(model.intercept + Z.values @ model.coefficients), eps, 1.0 - eps)


@dataclass(frozen=True, eq=False)
class CoefficientReport:
    """Per-factor rows (factor, nonzero, min, max) over the factor's expanded columns."""

    frame: pd.DataFrame

    def __rich__(self) -> Table:
        table = Table(title="Stage 2 coefficients (logit scale)", title_style="table.title",
                      header_style="table.header", border_style="table.border")
        table.add_column("factor", style="label")
        table.add_column("non-zero", justify="right", style="value")
        table.add_column("min", justify="right")
        table.add_column("max", justify="right")
        for row in self.frame.itertuples(index=False):
            blank = row.nonzero == 0
            table.add_row(
                row.factor, str(row.nonzero),
                Text("" if blank else f"{row.min:.3f}"), Text("" if blank else f"{row.max:.3f}"),
            )
        return table


def coefficient_report(model: SparseLogitModel, grouping: Optional[Mapping[str, str]] = None) -> CoefficientReport:
    """Summarise non-zero coefficients per original factor, factors in first-appearance order."""
    grouping = grouping if grouping is not None else model.factor_of
    uncovered = [name for name in model.column_names if name not in grouping]
    if uncovered:
        raise DataError(f"Grouping does not cover column {uncovered[0]!r}")
    frame = pd.DataFrame(
        {"factor": [grouping[name] for name in model.column_names], "coefficient": model.coefficients}
    )
    records = []
    for factor, block in frame.groupby("factor", sort=False):
        active = block["coefficient"][block["coefficient"] != 0]
        records.append(
            {
                "factor": factor,
                "nonzero": int(active.size),
                "min": float(active.min()) if active.size else float("nan"),
                "max": float(active.max()) if active.size else float("nan"),
            }
        )
    return CoefficientReport(frame=pd.DataFrame.from_records(records, columns=["factor", "nonzero", "min", "max"]))


def save_model(model: SparseLogitModel, path: Path | str) -> Path:
    """Write the model as JSON."""
    path = Path(path)
    document: Dict[str, object] = {
        "format_version": FORMAT_VERSION,
        "column_names": list(model.column_names),
        "factor_of": dict(model.factor_of),
        "centers": model.centers.tolist(),
        "scales": model.scales.tolist(),
        "intercept": model.intercept,
        "coefficients": model.coefficients.tolist(),
        "std_intercept": model.std_intercept,
        "std_coefficients": None if model.std_coefficients is None else model.std_coefficients.tolist(),
        "lambda": model.lambda_,
        "lambda_index": model.lambda_index,
        "best_auc_lambda": model.best_auc_lambda,
        "lambdas": None if model.path is None else model.path.lambdas.tolist(),
        "folds": model.folds,
        "fold_seed": model.fold_seed,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
    log.info(f"Wrote Stage 2 model to {path}")
    return path


def load_model(path: Path | str) -> SparseLogitModel:
    """Read a model written by `save_model`; the lam path itself is not restored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Stage 2 model not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise DataError(f"Stage 2 model {path} is not valid JSON: {error}") from error
    if document.get("format_version") != FORMAT_VERSION:
        raise DataError(f"Unsupported Stage 2 model format {document.get('format_version')!r}")
    std = document["std_coefficients"]
    return SparseLogitModel(
        intercept=float(document["intercept"]),
        coefficients=np.asarray(document["coefficients"], dtype=float),
        lambda_=float(document["lambda"]),
        column_names=tuple(document["column_names"]),
        centers=np.asarray(document["centers"], dtype=float),
        scales=np.asarray(document["scales"], dtype=float),
        std_intercept=float(document["std_intercept"]),
        std_coefficients=None if std is None else np.asarray(std, dtype=float),
        factor_of=document["factor_of"],
        lambda_index=int(document["lambda_index"]),
        best_auc_lambda=float(document["best_auc_lambda"]),
        folds=int(document["folds"]),
        fold_seed=int(document["fold_seed"]),
    )

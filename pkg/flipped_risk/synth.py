"""Synthetic sentencing data with a known heteroscedastic ground truth, and brute-force test oracles."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from flipped_risk._roles import ColumnKind, ColumnRole
from flipped_risk.data import OUTCOME_CAP, ROW_ID, ColumnSpec, Dataset, validate_schema, write_schema
from flipped_risk.errors import ConfigError, DataError, DegenerateLabelsError, NumericalError
from flipped_risk.log import log

OUTCOME = "SENTTOT0"


# Ground-truth building blocks. Each maps a frame of sampled factor values to one number per row.
@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, frame: pd.DataFrame) -> np.ndarray:
        return np.full(len(frame), float(self.value))

    def factors(self) -> frozenset:
        return frozenset()


@dataclass(frozen=True)
class Step:
    """`below` where the numeric factor is under `threshold`, `above` elsewhere."""

    factor: str
    threshold: float
    below: float
    above: float

    def __call__(self, frame: pd.DataFrame) -> np.ndarray:
        return np.where(frame[self.factor].to_numpy(dtype=float) < self.threshold, self.below, self.above)

    def factors(self) -> frozenset:
        return frozenset({self.factor})


@dataclass(frozen=True)
class Linear:
    factor: str
    slope: float
    intercept: float = 0.0
    floor: Optional[float] = None

    def __call__(self, frame: pd.DataFrame) -> np.ndarray:
        out = self.intercept + self.slope * frame[self.factor].to_numpy(dtype=float)
        return out if self.floor is None else np.maximum(out, self.floor)

    def factors(self) -> frozenset:
        return frozenset({self.factor})


@dataclass(frozen=True)
class LevelMap:
    """Value per level of a categorical factor; unlisted levels get `default`."""

    factor: str
    values: Mapping[str, float]
    default: float = 0.0

    def __call__(self, frame: pd.DataFrame) -> np.ndarray:
        return frame[self.factor].map(dict(self.values)).fillna(self.default).to_numpy(dtype=float)

    def factors(self) -> frozenset:
        return frozenset({self.factor})


@dataclass(frozen=True)
class Sum:
    terms: Tuple["Piecewise", ...]

    def __call__(self, frame: pd.DataFrame) -> np.ndarray:
        return np.sum([term(frame) for term in self.terms], axis=0) if self.terms else np.zeros(len(frame))

    def factors(self) -> frozenset:
        return frozenset().union(*(term.factors() for term in self.terms))


@dataclass(frozen=True)
class Product:
    terms: Tuple["Piecewise", ...]

    def __call__(self, frame: pd.DataFrame) -> np.ndarray:
        return np.prod([term(frame) for term in self.terms], axis=0) if self.terms else np.ones(len(frame))

    def factors(self) -> frozenset:
        return frozenset().union(*(term.factors() for term in self.terms))


Piecewise = Union[Constant, Step, Linear, LevelMap, Sum, Product]


@dataclass(frozen=True)
class CategoricalFactor:
    name: str
    levels: Tuple[str, ...]
    probs: Tuple[float, ...]
    missing_rate: float = 0.0

    kind = ColumnKind.CATEGORICAL

    def validate(self) -> None:
        if len(self.levels) != len(self.probs) or not self.levels:
            raise ConfigError(f"{self.name}: levels and probabilities differ in length")
        if min(self.probs) < 0 or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ConfigError(f"{self.name}: probabilities must be non-negative and sum to 1")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.levels, dtype=object)[rng.choice(len(self.levels), size=n, p=self.probs)]


@dataclass(frozen=True)
class NumericFactor:
    """Uniform on [low, high]; integer factors draw whole numbers inclusive of both ends."""

    name: str
    low: float
    high: float
    integer: bool = False
    kind: ColumnKind = ColumnKind.NUMERIC
    missing_rate: float = 0.0

    def validate(self) -> None:
        if not self.high >= self.low:
            raise ConfigError(f"{self.name}: high must be at least low")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.integer:
            return rng.integers(int(self.low), int(self.high) + 1, size=n).astype(float)
        return rng.uniform(self.low, self.high, size=n)


@dataclass(frozen=True)
class DerivedFactor:
    """A column computed from already-sampled factors, e.g. guideline bounds from offense level."""

    name: str
    formula: Piecewise
    kind: ColumnKind = ColumnKind.NUMERIC
    missing_rate: float = 0.0

    def validate(self) -> None:
        pass


Factor = Union[CategoricalFactor, NumericFactor, DerivedFactor]


@dataclass(frozen=True)
class SynthSpec:
    """Everything that determines a synthetic dataset.

    y = clip(true_mean(x) + leak(z) + true_scale(x) * ξ, 0, 540) with ξ standard normal.
    """

    n: int
    relevant_factors: Tuple[Factor, ...]
    irrelevant_factors: Tuple[Factor, ...]
    true_mean: Piecewise
    true_scale: Piecewise
    leak: Optional[Piecewise] = None
    seed: int = 0
    outcome_missing_rate: float = 0.0

    def factors(self) -> Tuple[Factor, ...]:
        return tuple(self.relevant_factors) + tuple(self.irrelevant_factors)

    def validate(self) -> "SynthSpec":
        """Raise `ConfigError` on an inconsistent spec."""
        if self.n < 1:
            raise ConfigError("Synthetic n must be positive")
        names = [factor.name for factor in self.factors()]
        duplicates = {name for name in names if names.count(name) > 1} | ({OUTCOME, ROW_ID} & set(names))
        if duplicates:
            raise ConfigError(f"Duplicate or reserved factor name(s): {sorted(duplicates)}")
        for factor in self.factors():
            factor.validate()
            if not 0.0 <= factor.missing_rate < 1.0:
                raise ConfigError(f"{factor.name}: missing_rate must lie in [0, 1)")
        relevant = {factor.name for factor in self.relevant_factors}
        irrelevant = {factor.name for factor in self.irrelevant_factors}
        for label, fn, allowed in (
            ("true_mean", self.true_mean, relevant),
            ("true_scale", self.true_scale, relevant),
            ("leak", self.leak, irrelevant),
        ):
            if fn is None:
                continue
            stray = fn.factors() - allowed
            if stray:
                kind = "irrelevant" if label == "leak" else "relevant"
                raise ConfigError(f"{label} uses {sorted(stray)}, which are not {kind} factors")
        if not 0.0 <= self.outcome_missing_rate < 1.0:
            raise ConfigError("outcome_missing_rate must lie in [0, 1)")
        return self

    def schema(self) -> Tuple[ColumnSpec, ...]:
        """The schema sidecar for generated data."""
        specs = [ColumnSpec(OUTCOME, ColumnKind.NUMERIC, ColumnRole.OUTCOME)]
        for factor, role in [(f, ColumnRole.RELEVANT) for f in self.relevant_factors] + [
            (f, ColumnRole.IRRELEVANT) for f in self.irrelevant_factors
        ]:
            specs.append(ColumnSpec(factor.name, factor.kind, role))
        return validate_schema(specs)


@dataclass(frozen=True, eq=False)
class SynthResult:
    """A generated dataset and its ground truth (row_id, f0, s0, leak, y_uncapped)."""

    dataset: Dataset
    truth: pd.DataFrame


def generate_with_truth(spec: SynthSpec) -> SynthResult:
    """Generate a dataset and keep its ground truth apart from it."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    values: Dict[str, np.ndarray] = {}
    for factor in spec.factors():
        if not isinstance(factor, DerivedFactor):
            values[factor.name] = factor.sample(rng, n)
    sampled = pd.DataFrame(values)
    for factor in spec.factors():
        if isinstance(factor, DerivedFactor):
            sampled[factor.name] = factor.formula(sampled)

    f0 = spec.true_mean(sampled)
    s0 = spec.true_scale(sampled)
    if not np.all(s0 > 0):
        raise ConfigError("true_scale must be strictly positive for every row")
    leak = spec.leak(sampled) if spec.leak is not None else np.zeros(n)
    xi = rng.standard_normal(n)
    uncapped = f0 + leak + s0 * xi
    y = np.clip(uncapped, 0.0, OUTCOME_CAP)

    frame = pd.DataFrame({ROW_ID: np.arange(n, dtype=np.int64), OUTCOME: y})
    for factor in spec.factors():
        column = sampled[factor.name].to_numpy()
        if factor.kind is ColumnKind.CATEGORICAL:
            column = column.astype(object)
        if factor.missing_rate > 0:
            column = column.astype(object) if factor.kind is ColumnKind.CATEGORICAL else column.astype(float)
            column[rng.random(n) < factor.missing_rate] = None if factor.kind is ColumnKind.CATEGORICAL else np.nan
        frame[factor.name] = column
    if spec.outcome_missing_rate > 0:
        frame.loc[rng.random(n) < spec.outcome_missing_rate, OUTCOME] = np.nan

    truth = pd.DataFrame({ROW_ID: frame[ROW_ID], "f0": f0, "s0": s0, "leak": leak, "y_uncapped": uncapped})
    log.info(f"Generated {n} synthetic rows (seed {spec.seed}, leak {'on' if spec.leak is not None else 'off'})")
    return SynthResult(dataset=Dataset(frame=frame, schema=spec.schema()), truth=truth)


def generate(spec: SynthSpec) -> Dataset:
    """Generate a dataset; the ground truth is discarded (see `generate_with_truth`)."""
    return generate_with_truth(spec).dataset


def default_spec(n: int = 5_000, seed: int = 0, leak: float = 15.0, noise_irrelevant: int = 0) -> SynthSpec:
    """A spec with the usual sentencing factor names.

    f0 is a two-plateau step in offense level (60 vs 180 months) and s0 is 5 months for criminal
    history I-III, 20 for IV-VI. The leak adds `leak` months when the document-status indicator is
    "1"; pass 0 to switch it off. `noise_irrelevant` appends that many unrelated binary factors.
    """
    history = ("I", "II", "III", "IV", "V", "VI")
    relevant: Tuple[Factor, ...] = (
        NumericFactor("XFOLSOR", 1, 43, integer=True),
        CategoricalFactor("XCRHISSR", history, (0.3, 0.15, 0.15, 0.15, 0.1, 0.15)),
        NumericFactor("NOCOUNTS", 1, 5, integer=True),
        NumericFactor("WEAPON", 0, 2, integer=True, kind=ColumnKind.ENHANCEMENT_POINTS, missing_rate=0.3),
        DerivedFactor("GLMIN", Linear("XFOLSOR", 4.0, -20.0, floor=0.0)),
        DerivedFactor("GLMAX", Linear("XFOLSOR", 5.0, -19.0, floor=6.0)),
    )
    irrelevant: Tuple[Factor, ...] = (
        CategoricalFactor("MONRACE", ("White", "Black", "Hispanic", "Other"), (0.4, 0.25, 0.3, 0.05), missing_rate=0.02),
        CategoricalFactor("MONSEX", ("Male", "Female"), (0.85, 0.15)),
        CategoricalFactor("DISTRICT", tuple(f"D{i:02d}" for i in range(1, 11)), (0.1,) * 10),
        CategoricalFactor("MONCIRC", tuple(str(i) for i in range(1, 12)), (1 / 11,) * 10 + (1 - 10 / 11,)),
        CategoricalFactor("DSIND", ("0", "1", "3"), (0.5, 0.3, 0.2)),
        NumericFactor("AGE", 18, 80, integer=True),
        CategoricalFactor("NEWEDUC", ("none", "high-school", "some-college", "college"), (0.3, 0.4, 0.2, 0.1),
                          missing_rate=0.05),
        NumericFactor("SENTMON", 1, 12, integer=True),
        CategoricalFactor("PartyofAppointingPresident", ("D", "R"), (0.5, 0.5)),
        CategoricalFactor("RaceorEthnicity", ("White", "Black", "Hispanic", "Asian"), (0.7, 0.15, 0.1, 0.05)),
        CategoricalFactor("Gender", ("Male", "Female"), (0.7, 0.3)),
    ) + tuple(CategoricalFactor(f"NOISE{i:02d}", ("0", "1"), (0.5, 0.5)) for i in range(noise_irrelevant))
    return SynthSpec(
        n=n,
        relevant_factors=relevant,
        irrelevant_factors=irrelevant,
        true_mean=Sum((Constant(60.0), Step("XFOLSOR", 22.0, 0.0, 120.0))),
        true_scale=LevelMap("XCRHISSR", {"I": 5.0, "II": 5.0, "III": 5.0, "IV": 20.0, "V": 20.0, "VI": 20.0}),
        leak=LevelMap("DSIND", {"1": float(leak)}) if leak else None,
        seed=seed,
        outcome_missing_rate=0.005,
    )


def write_bundle(result: SynthResult, out_dir: Path | str, stem: str = "synth") -> Dict[str, Path]:
    """Write `<stem>.csv`, `<stem>.schema` and the `<stem>_truth.csv` sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "data": out_dir / f"{stem}.csv",
        "schema": out_dir / f"{stem}.schema",
        "truth": out_dir / f"{stem}_truth.csv",
    }
    result.dataset.frame.to_csv(paths["data"], index=False, float_format="%.10g", na_rep="NA", lineterminator="\n")
    write_schema(result.dataset.schema, paths["schema"])
    result.truth.to_csv(paths["truth"], index=False, float_format="%.10g", lineterminator="\n")
    return paths


def oracle_auc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Pairwise Mann-Whitney AUC over every positive-negative pair, ties credited one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.size > 10_000:
        raise DataError("oracle_auc is quadratic; use at most 10,000 rows")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateLabelsError("AUC needs both classes among the labels")
    wins = 0.0
    for score in pos:
        wins += np.count_nonzero(score > neg) + 0.5 * np.count_nonzero(score == neg)
    return float(wins / (pos.size * neg.size))


def oracle_logit_mle(
    Z: np.ndarray, labels: Sequence[int] | np.ndarray, max_iter: int = 100, tol: float = 1e-10
) -> np.ndarray:
    """Unpenalised logistic MLE by Newton-Raphson; returns [intercept, coefficients...].

    Stops when the norm of the mean gradient is under `tol`.

    Raises:
        NumericalError: Divergence, as on separable data, or a singular Hessian.
    """
    Z = np.asarray(Z, dtype=float).reshape(len(labels), -1)
    y = np.asarray(labels, dtype=float)
    design = np.column_stack([np.ones(y.size), Z])
    beta = np.zeros(design.shape[1])
    for _ in range(max_iter):
        prob = expit(design @ beta)
        grad = design.T @ (prob - y) / y.size
        if np.linalg.norm(grad) < tol:
            return beta
        hessian = (design * (prob * (1.0 - prob))[:, None]).T @ design / y.size
        try:
            beta = beta - np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError as error:
            raise NumericalError("Singular Hessian; the data may be separable") from error
        if not np.all(np.isfinite(beta)) or np.abs(beta).max() > 1e3:
            raise NumericalError("Newton iterates diverged; the data are separable")
    raise NumericalError(f"Newton did not converge in {max_iter} iterations; the data may be separable")


__all__ = [
    "Constant", "Step", "Linear", "LevelMap", "Sum", "Product",
    "CategoricalFactor", "NumericFactor", "DerivedFactor",
    "SynthSpec", "SynthResult", "generate", "generate_with_truth", "default_spec", "write_bundle",
    "oracle_auc", "oracle_logit_mle", "OUTCOME",
]

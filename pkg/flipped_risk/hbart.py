"""Stage 1: heteroscedastic tree-ensemble regression fit by Metropolis-within-Gibbs.

The outcome is modelled as a sum of `n_mean_trees` regression trees plus noise whose standard
deviation is a global scale times a product of `n_scale_trees` positive trees. Sampling happens on
the standardised outcome; everything the model reports is back in months.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeRemainingColumn
from rich.table import Table
from rich.text import Text
from scipy.special import digamma, gammaln

from flipped_risk.data import DesignMatrix, check_columns
from flipped_risk.errors import ConfigError, DataError, NumericalError
from flipped_risk.log import get_console, log
from flipped_risk.tree import DecisionTree, Forest, TreeArrays, cut_grid

FORMAT_VERSION = 1
MIN_ROWS = 50
MOVES = ("birth", "death", "change")


@dataclass(frozen=True)
class HbartConfig:
    """Prior and run settings of the Stage-1 sampler.

    Attributes:
        n_mean_trees: Trees in the sum for the mean.
        n_scale_trees: Trees in the product for the scale.
        iterations: Total sweeps, burn-in included.
        burn_in: Leading sweeps discarded.
        thin: Keep every `thin`-th sweep after burn-in.
        keep_every: Store the full ensembles of every `keep_every`-th kept sweep for `predict`.
        base, power: Split probability at depth d is `base / (1 + d) ** power`.
        k: Mean-leaf prior sd is `range / (2 k sqrt(n_mean_trees))` on the standardised outcome.
        scale_nu, scale_lambda: Inverse-gamma prior on each squared scale leaf. Left unset,
            `scale_lambda` is derived from `scale_nu` so each leaf has E[log v] = 0 and the
            product of scale trees is centred on the global scale.
        max_cuts: Cap on candidate thresholds per column.
        min_leaf_size: Proposals leaving fewer training rows in a leaf are rejected.
        p_birth, p_death: Move probabilities; change gets the remainder.
        log_every: Sweeps between progress log lines.
        progress: Show a rich progress bar.
    """

    n_mean_trees: int = 200
    n_scale_trees: int = 40
    iterations: int = 10_100
    burn_in: int = 100
    thin: int = 1
    keep_every: int = 10
    base: float = 0.95
    power: float = 2.0
    k: float = 2.0
    scale_nu: float = 10.0
    scale_lambda: Optional[float] = None
    max_cuts: int = 100
    min_leaf_size: int = 5
    p_birth: float = 0.4
    p_death: float = 0.4
    log_every: int = 500
    progress: bool = False

    @property
    def n_retained(self) -> int:
        """Post-burn-in sweeps that enter the posterior summaries."""
        return (self.iterations - self.burn_in) // self.thin

    @property
    def leaf_lambda(self) -> float:
        """`scale_lambda`, or the value 2 exp(digamma(nu / 2)) / nu that centres log v at 0."""
        if self.scale_lambda is not None:
            return self.scale_lambda
        return float(2.0 * np.exp(digamma(0.5 * self.scale_nu)) / self.scale_nu)

    def validate(self) -> "HbartConfig":
        """Raise `ConfigError` on settings the sampler cannot run with."""
        if self.n_mean_trees < 1 or self.n_scale_trees < 1:
            raise ConfigError("n_mean_trees and n_scale_trees must be at least 1")
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ConfigError(f"iterations ({self.iterations}) must exceed burn_in ({self.burn_in})")
        if self.thin < 1 or (self.iterations - self.burn_in) % self.thin:
            raise ConfigError(
                f"iterations - burn_in ({self.iterations - self.burn_in}) must be a multiple of thin ({self.thin})"
            )
        if self.keep_every < 1:
            raise ConfigError("keep_every must be at least 1")
        if not 0 < self.base < 1 or self.power < 0:
            raise ConfigError("tree prior needs 0 < base < 1 and power >= 0")
        if self.k <= 0 or self.scale_nu <= 0 or (self.scale_lambda is not None and self.scale_lambda <= 0):
            raise ConfigError("k, scale_nu and scale_lambda must be positive")
        if self.p_birth <= 0 or self.p_death <= 0 or self.p_birth + self.p_death > 1:
            raise ConfigError("need p_birth > 0, p_death > 0 and p_birth + p_death <= 1")
        if self.min_leaf_size < 1 or self.max_cuts < 1:
            raise ConfigError("min_leaf_size and max_cuts must be at least 1")
        return self


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Posterior means of f(x) and s(x) per row, in months, with the chain traces."""

    f_bar: np.ndarray
    s_bar: np.ndarray
    trace_f: np.ndarray
    trace_s: np.ndarray
    row_ids: np.ndarray

    def __post_init__(self) -> None:
        if self.f_bar.shape != self.s_bar.shape:
            raise NumericalError("f_bar and s_bar differ in length")
        if self.trace_f.shape != self.trace_s.shape:
            raise NumericalError("trace_f and trace_s differ in length")
        if not np.all(self.s_bar > 0):
            raise NumericalError("Posterior scale must be strictly positive")

    def __len__(self) -> int:
        return int(self.f_bar.size)

    def take(self, rows: np.ndarray) -> "PosteriorSummary":
        """Keep the rows selected by a mask or index; traces are unchanged."""
        return PosteriorSummary(
            f_bar=self.f_bar[rows], s_bar=self.s_bar[rows],
            trace_f=self.trace_f, trace_s=self.trace_s, row_ids=self.row_ids[rows],
        )

    def to_frame(self) -> pd.DataFrame:
        """Per-row summary table."""
        return pd.DataFrame({"row_id": self.row_ids, "f_bar": self.f_bar, "s_bar": self.s_bar})

    def traces_frame(self) -> pd.DataFrame:
        """Per-draw trace table."""
        return pd.DataFrame(
            {"draw": np.arange(self.trace_f.size), "mean_f": self.trace_f, "mean_s": self.trace_s}
        )

    def __rich__(self) -> Table:
        table = Table(
            title="Stage 1 posterior summary",
            title_style="table.title",
            header_style="table.header",
            border_style="table.border",
        )
        table.add_column("quantity", style="label")
        for name in ("mean", "min", "max"):
            table.add_column(name, justify="right", style="value")
        for label, values in (("f̄ (months)", self.f_bar), ("s̄ (months)", self.s_bar)):
            table.add_row(label, f"{values.mean():.3f}", f"{values.min():.3f}", f"{values.max():.3f}")
        table.caption = f"{len(self)} rows, {self.trace_f.size} retained draws"
        return table


@dataclass(frozen=True, eq=False)
class TreeEnsembleModel:
    """A fitted Stage-1 ensemble.

    `mean_draws[d]` and `scale_draws[d]` are the two forests of stored draw `d`, on the
    standardised outcome. For a row x, draw d gives
    `f = y_center + y_scale * sum(mean leaves)` and `s = y_scale * sigma_hat * prod(scale leaves)`.
    `summary` holds the running means over every retained draw for the rows seen at fit time.
    """

    column_names: Tuple[str, ...]
    mean_draws: Tuple[Forest, ...]
    scale_draws: Tuple[Forest, ...]
    y_center: float = 0.0
    y_scale: float = 1.0
    sigma_hat: float = 1.0
    config: HbartConfig = field(default_factory=HbartConfig)
    seed: int = 0
    cut_grids: Tuple[np.ndarray, ...] = ()
    summary: Optional[PosteriorSummary] = None
    n_retained: int = 0
    n_train: int = 0
    acceptance: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    noise_law: str = "standard-normal"

    def __post_init__(self) -> None:
        if len(self.mean_draws) != len(self.scale_draws):
            raise NumericalError("mean and scale draws differ in count")
        if not self.mean_draws:
            raise NumericalError("model holds no stored draws")
        for forest in self.scale_draws:
            if not np.all(forest.value[forest.var < 0] > 0):
                raise NumericalError("scale-tree leaves must be strictly positive")

    @property
    def n_draws(self) -> int:
        """Stored draws available to `predict`."""
        return len(self.mean_draws)

    @property
    def mean_trees(self) -> List[TreeArrays]:
        """Mean trees of the last stored draw."""
        last = self.mean_draws[-1]
        return [last.tree(t) for t in range(last.n_trees)]

    @property
    def scale_trees(self) -> List[TreeArrays]:
        """Scale trees of the last stored draw."""
        last = self.scale_draws[-1]
        return [last.tree(t) for t in range(last.n_trees)]

    def __rich__(self) -> Table:
        table = Table(
            title="Stage 1 model",
            title_style="table.title",
            show_header=False,
            border_style="table.border",
        )
        table.add_column(style="label")
        table.add_column(style="value", justify="right")
        rows = [
            ("columns", len(self.column_names)),
            ("mean trees", self.mean_draws[0].n_trees),
            ("scale trees", self.scale_draws[0].n_trees),
            ("retained draws", self.n_retained),
            ("stored draws", self.n_draws),
            ("global scale (months)", f"{self.y_scale * self.sigma_hat:.3f}"),
        ]
        for ensemble, rates in self.acceptance.items():
            for move, rate in rates.items():
                rows.append((f"{ensemble} {move} acceptance", f"{rate:.3f}"))
        for name, value in rows:
            table.add_row(name, Text(str(value)))
        return table


def _split_prob(depth: int | np.ndarray, cfg: HbartConfig) -> np.ndarray:
    return cfg.base * (1.0 + depth) ** (-cfg.power)


class _MeanLeaves:
    """Conjugate normal leaves against a weighted partial residual."""

    def __init__(self, tau: float) -> None:
        self.tau2 = tau * tau
        self.w = np.empty(0)
        self.wr = np.empty(0)

    def set_data(self, resid: np.ndarray, weight: np.ndarray) -> None:
        self.w = weight
        self.wr = weight * resid

    def log_marginal(self, idx: np.ndarray) -> float:
        sw = self.w[idx].sum()
        swr = self.wr[idx].sum()
        return float(-0.5 * np.log1p(self.tau2 * sw) + 0.5 * self.tau2 * swr * swr / (1.0 + self.tau2 * sw))

    def draw(self, tree: DecisionTree, rng: np.random.Generator, n_train: int) -> None:
        leaves = tree.leaves()
        owner = tree.leaf_of[:n_train]
        sw = np.bincount(owner, weights=self.w, minlength=tree.var.size)[leaves]
        swr = np.bincount(owner, weights=self.wr, minlength=tree.var.size)[leaves]
        precision = 1.0 / self.tau2 + sw
        tree.value[leaves] = swr / precision + rng.standard_normal(leaves.size) / np.sqrt(precision)


class _ScaleLeaves:
    """Conjugate inverse-gamma squared leaves against squared standardised residuals.

    Leaf values are stored as square roots so the product of leaves is a standard deviation.
    """

    def __init__(self, nu: float, lam: float) -> None:
        self.nu = nu
        self.nu_lam = nu * lam
        self.const = 0.5 * nu * np.log(0.5 * nu * lam) - gammaln(0.5 * nu)
        self.q = np.empty(0)

    def set_data(self, q: np.ndarray) -> None:
        self.q = q

    def log_marginal(self, idx: np.ndarray) -> float:
        shape = 0.5 * (self.nu + idx.size)
        return float(gammaln(shape) - shape * np.log(0.5 * (self.nu_lam + self.q[idx].sum())) + self.const)

    def draw(self, tree: DecisionTree, rng: np.random.Generator, n_train: int) -> None:
        leaves = tree.leaves()
        owner = tree.leaf_of[:n_train]
        count = np.bincount(owner, minlength=tree.var.size)[leaves]
        ssq = np.bincount(owner, weights=self.q, minlength=tree.var.size)[leaves]
        precision = rng.gamma(0.5 * (self.nu + count), 2.0 / (self.nu_lam + ssq))
        tree.value[leaves] = 1.0 / np.sqrt(precision)


class _Chain:
    """State of one Metropolis-within-Gibbs chain over stacked [train; extra] rows."""

    def __init__(
        self, X_all: np.ndarray, n_train: int, grids: Sequence[np.ndarray], cfg: HbartConfig, rng: np.random.Generator
    ) -> None:
        self.X = X_all
        self.n = n_train
        self.grids = grids
        self.n_cuts = np.array([grid.size for grid in grids], dtype=np.int64)
        self.cfg = cfg
        self.rng = rng
        self.proposed = {kind: dict.fromkeys(MOVES, 0) for kind in ("mean", "scale")}
        self.accepted = {kind: dict.fromkeys(MOVES, 0) for kind in ("mean", "scale")}

    def move_probs(self, tree: DecisionTree) -> Tuple[float, float, float]:
        if tree.is_stump:
            return 1.0, 0.0, 0.0
        p_change = 1.0 - self.cfg.p_birth - self.cfg.p_death
        return self.cfg.p_birth, self.cfg.p_death, p_change

    def _draw_rule(self, tree: DecisionTree, node: int) -> Optional[Tuple[int, int, float]]:
        lo, hi = tree.rule_bounds(node, self.n_cuts)
        available = np.flatnonzero(hi > lo)
        if available.size == 0:
            return None
        var = int(self.rng.choice(available))
        rule = int(self.rng.integers(lo[var], hi[var]))
        return var, rule, float(self.grids[var][rule])

    def update(self, tree: DecisionTree, leaves_model, kind: str) -> None:
        """One birth, death or change proposal on `tree`."""
        p_birth, p_death, _ = self.move_probs(tree)
        u = self.rng.random()
        if u < p_birth:
            self._birth(tree, leaves_model, kind, p_birth)
        elif u < p_birth + p_death:
            self._death(tree, leaves_model, kind, p_death)
        else:
            self._change(tree, leaves_model, kind)

    def _split_rows(self, rows: np.ndarray, var: int, cut: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        goes_left = self.X[rows, var] < cut
        train = rows < self.n
        return goes_left, rows[train & goes_left], rows[train & ~goes_left]

    def _birth(self, tree: DecisionTree, model, kind: str, p_birth: float) -> None:
        self.proposed[kind]["birth"] += 1
        leaves = tree.leaves()
        node = int(self.rng.choice(leaves))
        rule = self._draw_rule(tree, node)
        if rule is None:
            return
        var, rule_index, cut = rule
        rows = tree.rows_of(node)
        goes_left, left_train, right_train = self._split_rows(rows, var, cut)
        if min(left_train.size, right_train.size) < self.cfg.min_leaf_size:
            return
        parent_train = rows[rows < self.n]
        log_lik = model.log_marginal(left_train) + model.log_marginal(right_train) - model.log_marginal(parent_train)

        depth = int(tree.depth[node])
        p_here = _split_prob(depth, self.cfg)
        p_child = _split_prob(depth + 1, self.cfg)
        log_prior = np.log(p_here) + 2.0 * np.log1p(-p_child) - np.log1p(-p_here)

        parent = int(tree.parent[node])
        parent_was_nog = False
        if parent >= 0:
            sibling = tree.right[parent] if tree.left[parent] == node else tree.left[parent]
            parent_was_nog = bool(tree.var[sibling] < 0)
        n_nog_after = tree.nog_nodes().size + 1 - int(parent_was_nog)
        p_death_after = self.cfg.p_death
        log_trans = np.log(p_death_after / n_nog_after) - np.log(p_birth / leaves.size)

        if np.log(self.rng.random()) < log_lik + log_prior + log_trans:
            tree.birth(node, var, rule_index, cut, rows, goes_left)
            self.accepted[kind]["birth"] += 1

    def _death(self, tree: DecisionTree, model, kind: str, p_death: float) -> None:
        self.proposed[kind]["death"] += 1
        nogs = tree.nog_nodes()
        node = int(self.rng.choice(nogs))
        left, right = int(tree.left[node]), int(tree.right[node])
        left_rows = tree.rows_of(left)
        right_rows = tree.rows_of(right)
        left_train = left_rows[left_rows < self.n]
        right_train = right_rows[right_rows < self.n]
        merged = np.concatenate([left_train, right_train])
        log_lik = model.log_marginal(merged) - model.log_marginal(left_train) - model.log_marginal(right_train)

        depth = int(tree.depth[node])
        p_here = _split_prob(depth, self.cfg)
        p_child = _split_prob(depth + 1, self.cfg)
        log_prior = np.log1p(-p_here) - np.log(p_here) - 2.0 * np.log1p(-p_child)

        n_leaves_after = tree.n_leaves - 1
        p_birth_after = 1.0 if node == 0 else self.cfg.p_birth
        log_trans = np.log(p_birth_after / n_leaves_after) - np.log(p_death / nogs.size)

        if np.log(self.rng.random()) < log_lik + log_prior + log_trans:
            tree.death(node)
            self.accepted[kind]["death"] += 1

    def _change(self, tree: DecisionTree, model, kind: str) -> None:
        self.proposed[kind]["change"] += 1
        nogs = tree.nog_nodes()
        node = int(self.rng.choice(nogs))
        rule = self._draw_rule(tree, node)
        if rule is None:
            return
        var, rule_index, cut = rule
        rows = np.flatnonzero((tree.leaf_of == tree.left[node]) | (tree.leaf_of == tree.right[node]))
        goes_left, left_train, right_train = self._split_rows(rows, var, cut)
        if min(left_train.size, right_train.size) < self.cfg.min_leaf_size:
            return
        old_left = tree.rows_of(int(tree.left[node]))
        old_right = tree.rows_of(int(tree.right[node]))
        log_lik = (
            model.log_marginal(left_train) + model.log_marginal(right_train)
            - model.log_marginal(old_left[old_left < self.n]) - model.log_marginal(old_right[old_right < self.n])
        )
        if np.log(self.rng.random()) < log_lik:
            tree.change(node, var, rule_index, cut, rows, goes_left)
            self.accepted[kind]["change"] += 1

    def acceptance(self) -> Dict[str, Dict[str, float]]:
        """Accepted / proposed per ensemble and move."""
        return {
            kind: {
                move: (self.accepted[kind][move] / self.proposed[kind][move]) if self.proposed[kind][move] else 0.0
                for move in MOVES
            }
            for kind in self.proposed
        }


def _ols_sigma(X: np.ndarray, z: np.ndarray) -> float:
    """Residual sd of a least-squares fit of `z` on `X` with an intercept."""
    design = np.column_stack([np.ones(len(z)), X])
    coef, _, rank, _ = np.linalg.lstsq(design, z, rcond=None)
    resid = z - design @ coef
    dof = len(z) - rank
    sigma = float(np.sqrt(resid @ resid / dof)) if dof > 0 else 0.0
    if not sigma > 1e-6:
        log.warning("Linear fit leaves no residual variance; using the outcome sd as the global scale")
        return 1.0
    return sigma


def _progress(cfg: HbartConfig) -> Progress:
    return Progress(
        TextColumn("[stage.one]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeRemainingColumn(),
        console=get_console(),
        disable=not cfg.progress,
        transient=True,
    )


def fit(
    X: DesignMatrix,
    y: np.ndarray,
    cfg: HbartConfig | None = None,
    seed: int = 0,
    X_extra: DesignMatrix | None = None,
) -> TreeEnsembleModel:
    """Sample the posterior of the heteroscedastic ensemble.

    Args:
        X (DesignMatrix): Training design; its row order matches `y`.
        y (np.ndarray): Outcome in months.
        cfg (HbartConfig, optional): Prior and run settings. Defaults to `HbartConfig()`.
        seed (int): Seed of the chain's `numpy.random.Generator`.
        X_extra (DesignMatrix, optional): Further rows (e.g. the test split) routed through every
            sweep so their posterior means are exact running means, like the training rows'.

    Returns:
        TreeEnsembleModel: Stored draws plus a `PosteriorSummary` over `X` then `X_extra` rows.
    """
    cfg = (cfg or HbartConfig()).validate()
    y = np.asarray(y, dtype=float)
    n, n_cols = X.shape
    if len(y) != n:
        raise DataError(f"Design has {n} rows but the outcome has {len(y)}")
    if n < MIN_ROWS:
        raise DataError(f"Stage 1 needs at least {MIN_ROWS} training rows, got {n}")
    if not np.all(np.isfinite(y)):
        raise NumericalError("Outcome contains non-finite values")
    if not np.all(np.isfinite(X.values)):
        raise NumericalError("Stage 1 design contains non-finite values")
    y_center = float(y.mean())
    y_scale = float(y.std())
    if not y_scale > 0:
        raise NumericalError("Outcome is constant; there is no variance to model")
    extra = np.empty((0, n_cols))
    extra_ids = np.empty(0, dtype=np.int64)
    if X_extra is not None:
        check_columns(X.column_names, X_extra.column_names)
        extra = X_extra.values
        extra_ids = X_extra.row_ids

    z = (y - y_center) / y_scale
    X_all = np.vstack([X.values, extra])
    n_all = X_all.shape[0]
    grids = tuple(cut_grid(X.values[:, j], cfg.max_cuts) for j in range(n_cols))
    sigma_hat = _ols_sigma(X.values, z)
    sigma2 = sigma_hat * sigma_hat
    tau = (z.max() - z.min()) / (2.0 * cfg.k * np.sqrt(cfg.n_mean_trees))
    log.info(
        f"Stage 1: {n} train rows, {n_all - n} extra rows, {n_cols} columns, "
        f"{cfg.n_mean_trees} mean trees, {cfg.n_scale_trees} scale trees, tau={tau:.4f}, sigma_hat={sigma_hat:.4f}"
    )

    rng = np.random.default_rng(seed)
    chain = _Chain(X_all, n, grids, cfg, rng)
    mean_model = _MeanLeaves(tau)
    scale_model = _ScaleLeaves(cfg.scale_nu, cfg.leaf_lambda)
    mean_trees = [DecisionTree(n_all, 0.0) for _ in range(cfg.n_mean_trees)]
    scale_trees = [DecisionTree(n_all, 1.0) for _ in range(cfg.n_scale_trees)]
    F = np.zeros(n_all)
    log_g = np.zeros(n_all)
    weight = np.full(n, 1.0 / sigma2)

    n_retained = cfg.n_retained
    f_sum = np.zeros(n_all)
    s_sum = np.zeros(n_all)
    trace_f = np.empty(n_retained)
    trace_s = np.empty(n_retained)
    mean_draws: List[Forest] = []
    scale_draws: List[Forest] = []
    retained = 0

    with _progress(cfg) as progress:
        task = progress.add_task("Stage 1 MCMC", total=cfg.iterations)
        for sweep in range(cfg.iterations):
            for tree in mean_trees:
                F -= tree.fitted()
                mean_model.set_data(z - F[:n], weight)
                chain.update(tree, mean_model, "mean")
                mean_model.draw(tree, rng, n)
                F += tree.fitted()

            e2 = (z - F[:n]) ** 2
            for tree in scale_trees:
                log_g -= np.log(tree.fitted())
                scale_model.set_data(e2 / (sigma2 * np.exp(2.0 * log_g[:n])))
                chain.update(tree, scale_model, "scale")
                scale_model.draw(tree, rng, n)
                log_g += np.log(tree.fitted())
            weight = 1.0 / (sigma2 * np.exp(2.0 * log_g[:n]))

            post = sweep - cfg.burn_in
            if post >= 0 and (post + 1) % cfg.thin == 0:
                f_months = y_center + y_scale * F
                s_months = y_scale * sigma_hat * np.exp(log_g)
                f_sum += f_months
                s_sum += s_months
                trace_f[retained] = f_months[:n].mean()
                trace_s[retained] = s_months[:n].mean()
                if retained % cfg.keep_every == 0:
                    mean_draws.append(Forest.from_trees([tree.compact() for tree in mean_trees]))
                    scale_draws.append(Forest.from_trees([tree.compact() for tree in scale_trees]))
                retained += 1

            if cfg.log_every and (sweep + 1) % cfg.log_every == 0:
                rates = chain.acceptance()
                depth = np.mean([tree.max_depth() for tree in mean_trees])
                log.info(
                    f"sweep {sweep + 1}/{cfg.iterations}: mean birth/death "
                    f"{rates['mean']['birth']:.2f}/{rates['mean']['death']:.2f}, scale birth/death "
                    f"{rates['scale']['birth']:.2f}/{rates['scale']['death']:.2f}, mean tree depth {depth:.2f}"
                )
            progress.advance(task)

    summary = PosteriorSummary(
        f_bar=f_sum / n_retained,
        s_bar=s_sum / n_retained,
        trace_f=trace_f,
        trace_s=trace_s,
        row_ids=np.concatenate([X.row_ids, extra_ids]),
    )
    log.success(f"Stage 1 finished: {n_retained} retained draws, {len(mean_draws)} stored")
    return TreeEnsembleModel(
        column_names=tuple(X.column_names),
        mean_draws=tuple(mean_draws),
        scale_draws=tuple(scale_draws),
        y_center=y_center,
        y_scale=y_scale,
        sigma_hat=sigma_hat,
        config=cfg,
        seed=seed,
        cut_grids=grids,
        summary=summary,
        n_retained=n_retained,
        n_train=n,
        acceptance=chain.acceptance(),
    )


def predict(model: TreeEnsembleModel, X: DesignMatrix) -> PosteriorSummary:
    """Average f(x) and s(x) over the model's stored draws for every row of `X`."""
    check_columns(model.column_names, X.column_names)
    f_sum = np.zeros(X.shape[0])
    s_sum = np.zeros(X.shape[0])
    for mean, scale in zip(model.mean_draws, model.scale_draws):
        f_sum += model.y_center + model.y_scale * mean.leaf_values(X.values).sum(axis=1)
        s_sum += model.y_scale * model.sigma_hat * np.exp(np.log(scale.leaf_values(X.values)).sum(axis=1))
    if model.summary is not None:
        trace_f, trace_s = model.summary.trace_f, model.summary.trace_s
    else:
        trace_f = trace_s = np.empty(0)
    return PosteriorSummary(
        f_bar=f_sum / model.n_draws,
        s_bar=s_sum / model.n_draws,
        trace_f=trace_f,
        trace_s=trace_s,
        row_ids=X.row_ids,
    )


@dataclass(frozen=True)
class RSquared:
    """Goodness of fit of f̄ against the outcome."""

    r2: float
    adjusted_r2: float
    n: int
    p: int

    def as_dict(self) -> Dict[str, float]:
        return {"r2": self.r2, "adjusted_r2": self.adjusted_r2}


def r_squared(summary: PosteriorSummary | np.ndarray, y: np.ndarray, p: int) -> RSquared:
    """R² of f̄ and its adjustment for `p` predictors.

    Raises:
        DataError: Lengths differ.
        NumericalError: The outcome is constant or `n <= p + 1`.
    """
    f_bar = summary.f_bar if isinstance(summary, PosteriorSummary) else np.asarray(summary, dtype=float)
    y = np.asarray(y, dtype=float)
    if f_bar.shape != y.shape:
        raise DataError(f"f_bar has {f_bar.size} rows but the outcome has {y.size}")
    n = y.size
    if n <= p + 1:
        raise NumericalError(f"Adjusted R² needs n > p + 1 (n={n}, p={p})")
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0:
        raise NumericalError("Outcome is constant; R² is undefined")
    sse = float(((y - f_bar) ** 2).sum())
    r2 = 1.0 - sse / sst
    return RSquared(r2=r2, adjusted_r2=1.0 - (1.0 - r2) * (n - 1) / (n - p - 1), n=n, p=p)


def _stack(forests: Sequence[Forest]) -> Dict[str, np.ndarray]:
    return {
        "var": np.concatenate([f.var for f in forests]),
        "cut": np.concatenate([f.cut for f in forests]),
        "left": np.concatenate([f.left for f in forests]),
        "right": np.concatenate([f.right for f in forests]),
        "value": np.concatenate([f.value for f in forests]),
        "roots": np.concatenate([f.roots for f in forests]),
        "sizes": np.array([f.n_nodes for f in forests], dtype=np.int64),
    }


def _unstack(arrays: Mapping[str, np.ndarray], prefix: str, n_trees: int) -> Tuple[Forest, ...]:
    bounds = np.cumsum(arrays[f"{prefix}_sizes"])[:-1]
    parts = {key: np.split(arrays[f"{prefix}_{key}"], bounds) for key in ("var", "cut", "left", "right", "value")}
    roots = np.split(arrays[f"{prefix}_roots"], np.arange(n_trees, arrays[f"{prefix}_roots"].size, n_trees))
    return tuple(
        Forest(var=parts["var"][d], cut=parts["cut"][d], left=parts["left"][d], right=parts["right"][d],
               value=parts["value"][d], roots=roots[d])
        for d in range(len(parts["var"]))
    )


def save_model(model: TreeEnsembleModel, path: Path | str) -> Path:
    """Write the model as a compressed `.npz` with a JSON header; no pickling."""
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "column_names": list(model.column_names),
        "config": asdict(model.config),
        "seed": model.seed,
        "y_center": model.y_center,
        "y_scale": model.y_scale,
        "sigma_hat": model.sigma_hat,
        "n_retained": model.n_retained,
        "n_train": model.n_train,
        "n_mean_trees": model.mean_draws[0].n_trees,
        "n_scale_trees": model.scale_draws[0].n_trees,
        "acceptance": model.acceptance,
        "noise_law": model.noise_law,
        "has_summary": model.summary is not None,
    }
    arrays: Dict[str, np.ndarray] = {"header": np.array(json.dumps(header, sort_keys=True))}
    for prefix, draws in (("mean", model.mean_draws), ("scale", model.scale_draws)):
        arrays.update({f"{prefix}_{key}": value for key, value in _stack(draws).items()})
    arrays["cut_sizes"] = np.array([grid.size for grid in model.cut_grids], dtype=np.int64)
    arrays["cut_values"] = np.concatenate(model.cut_grids) if model.cut_grids else np.empty(0)
    if model.summary is not None:
        for key in ("f_bar", "s_bar", "trace_f", "trace_s", "row_ids"):
            arrays[f"summary_{key}"] = getattr(model.summary, key)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        np.savez_compressed(handle, **arrays)
    log.info(f"Wrote Stage 1 model to {path}")
    return path


def load_model(path: Path | str) -> TreeEnsembleModel:
    """Read a model written by `save_model`."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Stage 1 model not found: {path}")
    with np.load(path, allow_pickle=False) as stored:
        arrays = {key: stored[key] for key in stored.files}
    header = json.loads(str(arrays["header"]))
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"Unsupported Stage 1 model format {header.get('format_version')!r}")
    summary = None
    if header["has_summary"]:
        summary = PosteriorSummary(**{key: arrays[f"summary_{key}"] for key in
                                      ("f_bar", "s_bar", "trace_f", "trace_s", "row_ids")})
    bounds = np.cumsum(arrays["cut_sizes"])[:-1]
    grids = tuple(np.split(arrays["cut_values"], bounds)) if arrays["cut_sizes"].size else ()
    return TreeEnsembleModel(
        column_names=tuple(header["column_names"]),
        mean_draws=_unstack(arrays, "mean", header["n_mean_trees"]),
        scale_draws=_unstack(arrays, "scale", header["n_scale_trees"]),
        y_center=header["y_center"],
        y_scale=header["y_scale"],
        sigma_hat=header["sigma_hat"],
        config=HbartConfig(**header["config"]),
        seed=header["seed"],
        cut_grids=grids,
        summary=summary,
        n_retained=header["n_retained"],
        n_train=header["n_train"],
        acceptance=header["acceptance"],
        noise_law=header["noise_law"],
    )

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import digamma

from flipped_risk import hbart
from flipped_risk._roles import ColumnRole, Partition
from flipped_risk.data import DesignMatrix, build_design, preprocess, split
from flipped_risk.errors import ColumnMismatchError, ConfigError, DataError, NumericalError
from flipped_risk.hbart import HbartConfig, PosteriorSummary, TreeEnsembleModel
from flipped_risk.synth import default_spec, generate_with_truth
from flipped_risk.tree import Forest, TreeArrays


def design(values, names=None, row_ids=None) -> DesignMatrix:
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    names = tuple(names or (f"x{j}" for j in range(p)))
    return DesignMatrix(
        column_names=names,
        values=values,
        source=ColumnRole.RELEVANT,
        interaction_terms=(),
        factor_of={name: name for name in names},
        standardized=False,
        centers=np.zeros(p),
        scales=np.ones(p),
        row_ids=np.arange(n, dtype=np.int64) if row_ids is None else np.asarray(row_ids),
    )


@pytest.fixture(scope="module")
def step_data():
    """f = 10 or 30 by x0, s = 1 or 4 by x1; x2 is noise."""
    rng = np.random.default_rng(7)
    n = 600
    X = rng.uniform(0.0, 1.0, size=(n, 3))
    f = np.where(X[:, 0] < 0.5, 10.0, 30.0)
    s = np.where(X[:, 1] < 0.5, 1.0, 4.0)
    y = f + s * rng.standard_normal(n)
    return design(X), y, f, s


@pytest.fixture(scope="module")
def step_fit(step_data):
    X, y, _, _ = step_data
    cfg = HbartConfig(n_mean_trees=20, n_scale_trees=5, iterations=400, burn_in=100, keep_every=20, log_every=0)
    return hbart.fit(X, y, cfg, seed=1)


def test_recovers_mean_and_scale_structure(step_data, step_fit):
    X, _, f, s = step_data
    summary = step_fit.summary
    assert np.corrcoef(summary.f_bar, f)[0, 1] > 0.95
    noisy = s > 1.0
    ratio = summary.s_bar[noisy].mean() / summary.s_bar[~noisy].mean()
    assert ratio > 1.8
    assert np.all(summary.s_bar > 0)


def test_trace_and_draw_counts(step_fit):
    cfg = step_fit.config
    assert step_fit.n_retained == cfg.n_retained == 300
    assert step_fit.summary.trace_f.size == 300
    assert step_fit.summary.trace_s.size == 300
    assert step_fit.n_draws == 15
    assert step_fit.mean_draws[0].n_trees == 20
    assert step_fit.scale_draws[0].n_trees == 5
    for forest in step_fit.scale_draws:
        assert np.all(forest.value[forest.var < 0] > 0)
    assert len(step_fit.mean_trees) == 20
    assert len(step_fit.scale_trees) == 5
    for tree in step_fit.scale_trees:
        assert np.all(tree.value[tree.var < 0] > 0)
    last = step_fit.mean_draws[-1]
    assert_allclose(np.concatenate([tree.value for tree in step_fit.mean_trees]), last.value)


def test_acceptance_rates_are_recorded(step_fit):
    rates = step_fit.acceptance
    assert set(rates) == {"mean", "scale"}
    for moves in rates.values():
        assert set(moves) == {"birth", "death", "change"}
        assert all(0.0 <= value <= 1.0 for value in moves.values())
    assert rates["mean"]["birth"] > 0


def test_same_seed_same_chain(step_data):
    X, y, _, _ = step_data
    cfg = HbartConfig(n_mean_trees=5, n_scale_trees=2, iterations=60, burn_in=10, keep_every=10, log_every=0)
    first = hbart.fit(X, y, cfg, seed=3).summary
    second = hbart.fit(X, y, cfg, seed=3).summary
    other = hbart.fit(X, y, cfg, seed=4).summary
    assert_array_equal(first.f_bar, second.f_bar)
    assert_array_equal(first.trace_s, second.trace_s)
    assert not np.array_equal(first.f_bar, other.f_bar)


def test_scaling_the_outcome_scales_both_functions(step_data):
    X, y, _, _ = step_data
    cfg = HbartConfig(n_mean_trees=5, n_scale_trees=2, iterations=60, burn_in=10, keep_every=10, log_every=0)
    base = hbart.fit(X, y, cfg, seed=5).summary
    scaled = hbart.fit(X, 4.0 * y, cfg, seed=5).summary
    assert_allclose(scaled.f_bar, 4.0 * base.f_bar, rtol=1e-10)
    assert_allclose(scaled.s_bar, 4.0 * base.s_bar, rtol=1e-10)


def test_extra_rows_get_running_means(step_data):
    X, y, _, _ = step_data
    cfg = HbartConfig(n_mean_trees=5, n_scale_trees=2, iterations=60, burn_in=10, keep_every=1, log_every=0)
    train, extra = X.take(np.arange(500)), X.take(np.arange(500, 600))
    model = hbart.fit(train, y[:500], cfg, seed=2, X_extra=extra)
    summary = model.summary
    assert_array_equal(summary.row_ids, np.arange(600))
    # With every retained draw stored, predict reproduces the running means.
    predicted = hbart.predict(model, extra)
    assert_allclose(predicted.f_bar, summary.f_bar[500:], rtol=1e-8)
    assert_allclose(predicted.s_bar, summary.s_bar[500:], rtol=1e-8)


def test_predict_with_constant_trees():
    mean = Forest.from_trees([TreeArrays.constant(7.0)])
    scale = Forest.from_trees([TreeArrays.constant(2.0), TreeArrays.constant(1.5)])
    model = TreeEnsembleModel(column_names=("x0",), mean_draws=(mean,), scale_draws=(scale,), y_center=1.0,
                              y_scale=2.0, sigma_hat=0.5)
    summary = hbart.predict(model, design(np.zeros((3, 1))))
    assert_allclose(summary.f_bar, 15.0)
    assert_allclose(summary.s_bar, 3.0)


def test_predict_rejects_other_columns(step_fit):
    X = design(np.zeros((2, 3)), names=("x0", "x2", "x1"))
    with pytest.raises(ColumnMismatchError):
        hbart.predict(step_fit, X)


def test_save_and_load_preserve_predictions(tmp_path, step_data, step_fit):
    X, _, _, _ = step_data
    path = hbart.save_model(step_fit, tmp_path / "stage1_model.npz")
    loaded = hbart.load_model(path)
    assert loaded.column_names == step_fit.column_names
    assert loaded.config == step_fit.config
    assert_allclose(hbart.predict(loaded, X).f_bar, hbart.predict(step_fit, X).f_bar)
    assert_array_equal(loaded.summary.s_bar, step_fit.summary.s_bar)
    for a, b in zip(loaded.cut_grids, step_fit.cut_grids):
        assert_array_equal(a, b)


def test_load_missing_model_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        hbart.load_model(tmp_path / "missing.npz")


@pytest.mark.parametrize(
    "mutate, error",
    [
        (lambda X, y: (X.take(np.arange(40)), y[:40]), DataError),
        (lambda X, y: (X, y[:-1]), DataError),
        (lambda X, y: (X, np.full(y.size, 3.0)), NumericalError),
        (lambda X, y: (X, np.where(np.arange(y.size) == 0, np.nan, y)), NumericalError),
    ],
)
def test_fit_rejects_bad_inputs(step_data, mutate, error):
    X, y, _, _ = step_data
    X, y = mutate(X, y)
    with pytest.raises(error):
        hbart.fit(X, y, HbartConfig(n_mean_trees=2, n_scale_trees=1, iterations=20, burn_in=10))


@pytest.mark.parametrize(
    "settings",
    [
        {"iterations": 100, "burn_in": 100},
        {"iterations": 110, "burn_in": 100, "thin": 3},
        {"base": 1.0},
        {"p_birth": 0.6, "p_death": 0.6},
        {"n_scale_trees": 0},
    ],
)
def test_config_validation(settings):
    with pytest.raises(ConfigError):
        replace(HbartConfig(), **settings).validate()


@pytest.mark.parametrize("nu", [3.0, 10.0, 40.0])
def test_default_scale_prior_is_centred_on_one(nu):
    lam = HbartConfig(scale_nu=nu).leaf_lambda
    # log v has mean log(nu lam / 2) - digamma(nu / 2) under the inverse-gamma leaf prior.
    assert_allclose(np.log(0.5 * nu * lam) - digamma(0.5 * nu), 0.0, atol=1e-12)
    assert HbartConfig(scale_nu=nu, scale_lambda=2.0).leaf_lambda == 2.0


def test_leaf_lambda_for_the_default_prior():
    assert_allclose(HbartConfig().leaf_lambda, 0.9018, atol=1e-4)


def test_r_squared_and_adjustment():
    fit = hbart.r_squared(np.array([1.0, 2.0, 3.0, 5.0]), np.array([1.0, 2.0, 3.0, 4.0]), p=1)
    assert_allclose(fit.r2, 0.8)
    assert_allclose(fit.adjusted_r2, 0.7)
    with pytest.raises(NumericalError):
        hbart.r_squared(np.zeros(3), np.array([1.0, 2.0, 3.0]), p=2)


def test_summary_requires_positive_scale():
    with pytest.raises(NumericalError):
        PosteriorSummary(f_bar=np.ones(2), s_bar=np.array([1.0, 0.0]), trace_f=np.empty(0), trace_s=np.empty(0),
                         row_ids=np.arange(2))


@pytest.mark.slow
def test_synthetic_ground_truth_is_recovered_on_held_out_rows():
    result = generate_with_truth(default_spec(n=5000, seed=21, leak=0.0))
    ds = split(preprocess(result.dataset), 0.8, seed=1)
    X = build_design(ds, ColumnRole.RELEVANT)
    position = pd.Index(ds.row_ids).get_indexer(X.row_ids)
    train = ds.partition[position] == Partition.TRAIN.value
    y = ds.outcome[position]
    cfg = HbartConfig(iterations=700, burn_in=100, keep_every=50, log_every=0)
    model = hbart.fit(X.take(train), y[train], cfg, seed=0, X_extra=X.take(~train))
    held_out = model.summary.take(np.arange(int(train.sum()), len(model.summary)))
    assert_array_equal(held_out.row_ids, X.row_ids[~train])
    truth = result.truth.set_index("row_id").loc[held_out.row_ids]
    assert hbart.r_squared(held_out, truth["f0"].to_numpy(), p=X.shape[1]).r2 >= 0.85
    high = truth["s0"].to_numpy() > 10
    assert held_out.s_bar[high].mean() / held_out.s_bar[~high].mean() >= 2.0

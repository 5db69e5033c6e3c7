import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from flipped_risk import sparse_logit
from flipped_risk._roles import ColumnRole
from flipped_risk.data import DesignMatrix
from flipped_risk.errors import ColumnMismatchError, ConfigError, DataError, DegenerateLabelsError, NumericalError
from flipped_risk.sparse_logit import (
    SparseLogitModel,
    assign_folds,
    coefficient_report,
    fit_at,
    fit_path,
    kkt_violation,
    predict_risk,
    select_lambda,
    soft_threshold,
)
from flipped_risk.synth import oracle_logit_mle


def design(values, names=None, factor_of=None) -> DesignMatrix:
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    names = tuple(names or (f"z{j}" for j in range(p)))
    return DesignMatrix(
        column_names=names,
        values=values,
        source=ColumnRole.IRRELEVANT,
        interaction_terms=(),
        factor_of=factor_of or {name: name for name in names},
        standardized=False,
        centers=np.zeros(p),
        scales=np.ones(p),
        row_ids=np.arange(n, dtype=np.int64),
    )


@pytest.fixture(scope="module")
def logit_data():
    rng = np.random.default_rng(17)
    n = 400
    values = np.column_stack([rng.normal(2.0, 3.0, n), rng.normal(size=(n, 3)), rng.integers(0, 2, n)])
    beta = np.array([0.5, -1.0, 0.0, 0.0, 1.0])
    y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-(-0.5 + values @ beta)))).astype(int)
    return design(values), y


@pytest.fixture(scope="module")
def path(logit_data):
    Z, y = logit_data
    return fit_path(Z, y, grid_size=15, lambda_min_ratio=0.01, seed=0)


def standardised(path, Z):
    return (Z.values - path.centers) / path.scales


def test_soft_threshold():
    assert_allclose(soft_threshold(np.array([3.0, -3.0, 0.5, -0.5]), 1.0), [2.0, -2.0, 0.0, 0.0])
    assert soft_threshold(1.0, 1.0) == 0.0


def test_path_satisfies_optimality_conditions(logit_data, path):
    Z, y = logit_data
    X = standardised(path, Z)
    for i, lam in enumerate(path.lambdas):
        assert kkt_violation(X, y.astype(float), path.intercepts[i], path.coefs[i], lam) < 1e-6


def test_first_grid_point_is_the_null_model(logit_data, path):
    _, y = logit_data
    assert path.nonzero[0] == 0
    assert_allclose(path.intercepts[0], np.log(y.mean() / (1.0 - y.mean())))
    assert path.nonzero[-1] >= 3
    assert np.all(np.diff(path.lambdas) < 0)


def test_objective_never_increases_within_a_fit(path):
    for history in path.objective_histories:
        assert np.all(np.diff(history) <= 1e-12)


def test_unpenalised_fit_matches_newton(logit_data):
    Z, y = logit_data
    model = fit_at(Z, y, 0.0)
    expected = oracle_logit_mle(Z.values, y)
    assert_allclose(model.intercept, expected[0], atol=1e-4)
    assert_allclose(model.coefficients, expected[1:], atol=1e-4)


def newton_fixture(seed: int):
    """n=50, p=3, weak signal so the data are never separable."""
    rng = np.random.default_rng(1000 + seed)
    values = rng.normal(size=(50, 3))
    eta = 0.2 + values @ np.array([0.6, -0.4, 0.2])
    y = (rng.uniform(size=50) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    return design(values), y


@pytest.mark.parametrize("seed", range(20))
def test_path_satisfies_optimality_conditions_on_small_fixtures(seed):
    Z, y = newton_fixture(seed)
    path = fit_path(Z, y)
    X = standardised(path, Z)
    assert len(path) == 100
    for i, lam in enumerate(path.lambdas):
        assert kkt_violation(X, y.astype(float), path.intercepts[i], path.coefs[i], lam) < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_vanishing_penalty_matches_newton_on_small_fixtures(seed):
    Z, y = newton_fixture(seed)
    model = fit_at(Z, y, 0.0)
    expected = oracle_logit_mle(Z.values, y)
    assert np.abs(np.r_[model.intercept, model.coefficients] - expected).max() < 1e-4


def test_penalty_above_lambda_max_zeroes_every_slope(logit_data, path):
    Z, y = logit_data
    model = fit_at(Z, y, 2.0 * path.lambdas[0])
    assert np.all(model.coefficients == 0.0)


def test_cross_validation_drops_noise_columns():
    rng = np.random.default_rng(31)
    n = 800
    values = rng.normal(size=(n, 53))
    eta = -0.5 + values[:, :3] @ np.array([1.5, -1.5, 1.0])
    y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    Z = design(values)
    path = fit_path(Z, y, grid_size=40, lambda_min_ratio=0.01)
    model = select_lambda(path, Z, y, folds=10, seed=0)
    assert np.all(model.coefficients[:3] != 0.0)
    assert np.count_nonzero(model.coefficients[3:] == 0.0) >= 40


def test_bounded_weights_reach_the_same_optimum(logit_data, path):
    Z, y = logit_data
    lam = path.lambdas[7]
    exact = fit_at(Z, y, lam)
    bounded = fit_at(Z, y, lam, settings=sparse_logit.SolverSettings(bound_weights=True))
    assert_allclose(bounded.coefficients, exact.coefficients, atol=1e-3)


def test_folds_keep_both_classes_and_balanced_sizes():
    labels = np.array([1] * 12 + [0] * 88)
    folds = assign_folds(labels, 10, seed=4)
    sizes = np.bincount(folds, minlength=10)
    assert sizes.max() - sizes.min() <= 1
    for k in range(10):
        assert 0 < labels[folds == k].sum() < sizes[k]
    assert_array_equal(folds, assign_folds(labels, 10, seed=4))


def test_folds_without_enough_positives():
    with pytest.raises(DegenerateLabelsError):
        assign_folds(np.array([1] + [0] * 49), 5, seed=0)
    with pytest.raises(ConfigError):
        assign_folds(np.array([0, 1, 0, 1]), 1, seed=0)


def test_selection_rules(logit_data, path):
    Z, y = logit_data
    one_se = select_lambda(path, Z, y, folds=5, seed=2, workers=2)
    best = select_lambda(path, Z, y, folds=5, seed=2, rule="max")
    assert best.lambda_ == best.best_auc_lambda
    assert one_se.lambda_ >= one_se.best_auc_lambda
    assert one_se.best_auc_lambda == best.best_auc_lambda
    frame = one_se.path.cv_frame()
    assert list(frame.columns) == ["lambda", "nonzero", "mean_auc", "se_auc"]
    chosen = one_se.lambda_index
    assert frame["mean_auc"][chosen] >= frame["mean_auc"].max() - frame["se_auc"][frame["mean_auc"].idxmax()]
    with pytest.raises(ConfigError):
        select_lambda(path, Z, y, folds=5, rule="median")


def test_selection_is_deterministic(logit_data, path):
    Z, y = logit_data
    first = select_lambda(path, Z, y, folds=5, seed=9, workers=1)
    second = select_lambda(path, Z, y, folds=5, seed=9, workers=3)
    assert_array_equal(first.path.cv_mean_auc, second.path.cv_mean_auc)
    assert first.lambda_ == second.lambda_


def test_predicted_risk_is_a_probability(logit_data, path):
    Z, y = logit_data
    model = SparseLogitModel.from_path(path, len(path) - 1)
    risk = predict_risk(model, Z)
    assert np.all((risk > 0) & (risk < 1))
    assert risk[y == 1].mean() > risk[y == 0].mean()
    renamed = design(Z.values, names=("z0", "z1", "z2", "z3", "w"))
    with pytest.raises(ColumnMismatchError):
        predict_risk(model, renamed)


def test_label_problems(logit_data):
    Z, y = logit_data
    with pytest.raises(DegenerateLabelsError):
        fit_path(Z, np.zeros(y.size, dtype=int))
    with pytest.raises(DataError):
        fit_path(Z, np.full(y.size, 2))
    with pytest.raises(DataError):
        fit_path(Z, y[:-1])


def test_zero_variance_column_cannot_be_standardised(logit_data):
    Z, y = logit_data
    values = Z.values.copy()
    values[:, 2] = 1.0
    with pytest.raises(NumericalError):
        fit_path(design(values), y)


def test_coefficient_report_groups_by_factor():
    names = ("RACE=Black", "RACE=White", "AGE", "DISTRICT=3")
    model = SparseLogitModel(
        intercept=0.1,
        coefficients=np.array([0.0, 1.0, -2.0, 0.0]),
        lambda_=0.01,
        column_names=names,
        centers=np.zeros(4),
        scales=np.ones(4),
        factor_of={"RACE=Black": "RACE", "RACE=White": "RACE", "AGE": "AGE", "DISTRICT=3": "DISTRICT"},
    )
    frame = coefficient_report(model).frame
    assert frame["factor"].tolist() == ["RACE", "AGE", "DISTRICT"]
    assert frame["nonzero"].tolist() == [1, 1, 0]
    assert_allclose(frame["min"][:2], [1.0, -2.0])
    assert np.isnan(frame["max"][2])
    with pytest.raises(DataError):
        coefficient_report(model, grouping={"AGE": "AGE"})


def test_save_and_load(tmp_path, logit_data, path):
    Z, _ = logit_data
    model = SparseLogitModel.from_path(path, 5, factor_of=dict(Z.factor_of), folds=5, fold_seed=1)
    loaded = sparse_logit.load_model(sparse_logit.save_model(model, tmp_path / "stage2_model.json"))
    assert loaded.column_names == model.column_names
    assert loaded.lambda_ == model.lambda_
    assert loaded.factor_of == model.factor_of
    assert_allclose(predict_risk(loaded, Z), predict_risk(model, Z))
    with pytest.raises(ConfigError):
        sparse_logit.load_model(tmp_path / "absent.json")

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from flipped_risk._roles import AucBand
from flipped_risk.errors import ConfigError, DataError, DegenerateLabelsError, NumericalError
from flipped_risk.evaluation import (
    QUINTILE_LABELS,
    AlphaRun,
    EvaluationReport,
    auc,
    auc_score,
    geweke,
    risk_bins,
    spectral_variance,
    table_model2_aucs,
)
from flipped_risk.synth import oracle_auc


@pytest.fixture
def scored(rng):
    labels = (rng.uniform(size=300) < 0.3).astype(int)
    scores = np.round(rng.normal(size=300) + labels, 1)
    return scores, labels


def test_auc_matches_pairwise_count_with_ties(scored):
    scores, labels = scored
    assert_allclose(auc_score(scores, labels), oracle_auc(scores, labels), rtol=1e-12)


def random_instance(rng):
    n = int(rng.integers(2, 201))
    labels = (rng.uniform(size=n) < rng.uniform(0.1, 0.9)).astype(int)
    labels[:2] = [0, 1]
    scores = np.round(rng.normal(size=n) + labels, int(rng.integers(0, 3)))
    return scores, labels


def test_auc_matches_pairwise_count_on_random_instances(rng):
    for _ in range(1000):
        scores, labels = random_instance(rng)
        expected = oracle_auc(scores, labels)
        curve = auc(scores, labels)
        assert abs(auc_score(scores, labels) - expected) <= 1e-12
        assert abs(curve.auc - expected) <= 1e-12
        assert abs(curve.trapezoid_area() - expected) <= 1e-9


@pytest.mark.parametrize(
    "increasing",
    [np.exp, np.arctan, lambda s: s**3, lambda s: 5.0 * s - 2.0],
    ids=["exp", "arctan", "cube", "affine"],
)
def test_auc_ignores_increasing_transforms(rng, increasing):
    for _ in range(100):
        scores, labels = random_instance(rng)
        assert_allclose(auc_score(increasing(scores), labels), auc_score(scores, labels), atol=1e-12)


def test_flipping_the_labels_complements_the_auc(rng):
    for _ in range(200):
        scores, labels = random_instance(rng)
        assert abs(auc_score(scores, labels) + auc_score(scores, 1 - labels) - 1.0) <= 1e-12


def test_roc_area_equals_the_rank_statistic(scored):
    curve = auc(*scored)
    assert_allclose(curve.trapezoid_area(), curve.auc, rtol=1e-12)
    assert curve.fpr[0] == 0.0 and curve.tpr[0] == 0.0
    assert curve.fpr[-1] == 1.0 and curve.tpr[-1] == 1.0
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert np.isinf(curve.thresholds[0])


def test_small_worked_examples():
    assert auc_score([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc_score([0.5, 0.5], [0, 1]) == 0.5
    curve = auc([0.9, 0.1], [1, 0])
    assert curve.auc == 1.0
    assert curve.band is AucBand.EXCELLENT


def test_auc_rejects_bad_inputs():
    with pytest.raises(DegenerateLabelsError):
        auc_score([0.1, 0.2], [1, 1])
    with pytest.raises(DataError):
        auc_score([0.1, 0.2], [0, 2])
    with pytest.raises(DataError):
        auc_score([0.1, 0.2, 0.3], [0, 1])
    with pytest.raises(NumericalError):
        auc_score([np.nan, 0.2], [0, 1])


def test_risk_bins_are_equal_frequency(scored):
    scores, labels = scored
    table = risk_bins(scores[:103], labels[:103])
    assert table.frame["label"].tolist() == list(QUINTILE_LABELS)
    assert table.counts.sum() == 103
    assert table.counts.max() - table.counts.min() <= 1
    assert table.edges.size == 4
    assert np.all(table.frame["upper"].to_numpy()[:-1] <= table.frame["lower"].to_numpy()[1:])
    row = table.frame.iloc[2]
    assert_allclose(row["se"], np.sqrt(row["fraction"] * (1 - row["fraction"]) / row["count"]))


def test_risk_bins_rise_with_an_informative_score(rng):
    labels = (rng.uniform(size=5000) < 0.2).astype(int)
    table = risk_bins(labels * 2.0 + rng.normal(size=5000), labels)
    assert table.fractions[0] < table.fractions[2] < table.fractions[4]


def test_risk_bin_arguments():
    with pytest.raises(ConfigError):
        risk_bins([0.1, 0.2], [0, 1], k=1)
    with pytest.raises(DataError):
        risk_bins([0.1, 0.2, 0.3], [0, 1, 0], k=5)
    table = risk_bins(np.arange(8.0), [0, 0, 1, 0, 1, 1, 0, 1], k=4)
    assert table.frame["label"].tolist() == ["bin 1", "bin 2", "bin 3", "bin 4"]


def test_roc_points_carry_their_risk_bin(scored):
    scores, labels = scored
    table = risk_bins(scores, labels)
    frame = auc(scores, labels).to_frame(table.edges)
    assert list(frame.columns) == ["threshold", "fpr", "tpr", "risk_bin"]
    assert frame["risk_bin"].iloc[0] == 4
    assert frame["risk_bin"].iloc[-1] == 0


def test_spectral_variance_of_white_noise(rng):
    noise = rng.normal(size=10_000)
    assert_allclose(spectral_variance(noise) * noise.size, 1.0, atol=0.1)


def test_geweke_stays_quiet_on_iid_traces():
    quiet = 0
    for seed in range(100):
        result = geweke(np.random.default_rng(seed).normal(size=10_000))
        assert 0.0 <= result.p_value <= 1.0
        quiet += abs(result.z_score) < 3
    assert quiet >= 99


def mean_shift_trace(rng, n=10_000):
    trace = rng.normal(size=n)
    trace[n // 2:] += 5.0
    return trace


def test_geweke_flags_a_mean_shift(rng):
    shifted = geweke(mean_shift_trace(rng))
    assert abs(shifted.z_score) > 10
    assert shifted.p_value < 1e-6
    assert shifted.as_dict()["n"] == 10_000


def test_reversing_the_trace_flips_the_sign(rng):
    trace = mean_shift_trace(rng)
    forward = geweke(trace, first=0.25, last=0.25)
    backward = geweke(trace[::-1], first=0.25, last=0.25)
    assert forward.z_score < -10 < 10 < backward.z_score
    assert_allclose(backward.z_score, -forward.z_score, rtol=1e-9)


def test_geweke_arguments(rng):
    with pytest.raises(DataError):
        geweke(rng.normal(size=99))
    with pytest.raises(ConfigError):
        geweke(rng.normal(size=500), first=0.6, last=0.5)
    with pytest.raises(ConfigError):
        geweke(rng.normal(size=500), first=0.0)
    with pytest.raises(NumericalError):
        geweke(np.ones(500))


def test_alpha_table_is_sorted_and_banded():
    table = table_model2_aucs(
        [
            AlphaRun(alpha=0.25, train_auc=0.66, test_auc=0.63, flag_rate=0.2),
            AlphaRun(alpha=0.10, train_auc=0.62, test_auc=0.546, flag_rate=0.1),
        ]
    )
    assert table.frame["alpha"].tolist() == [0.10, 0.25]
    assert table.frame["test_band"].tolist() == ["fair", "fair"]


def test_report_summary_frame(scored):
    scores, labels = scored
    r_squared = pd.DataFrame({"split": ["train"], "n": [10], "p": [2], "r2": [0.5], "adjusted_r2": [0.4]})
    report = EvaluationReport(
        roc_test=auc(scores, labels),
        roc_train=auc(labels, labels),
        bins=risk_bins(scores, labels),
        r_squared=r_squared,
    )
    frame = report.summary_frame()
    assert frame["quantity"].tolist() == ["train_auc", "test_auc", "train_r2", "train_adjusted_r2"]
    assert frame["band"].iloc[0] == "excellent"
    assert_array_equal(frame["value"].iloc[2:], [0.5, 0.4])

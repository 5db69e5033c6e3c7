import numpy as np
import pandas as pd
import pytest

from flipped_risk._roles import ColumnRole, Partition
from flipped_risk.data import build_design, preprocess, split
from flipped_risk.evaluation import auc_score
from flipped_risk.flagger import FlagConfig, flag
from flipped_risk.hbart import PosteriorSummary
from flipped_risk.sparse_logit import fit_path, predict_risk, select_lambda
from flipped_risk.synth import default_spec, generate_with_truth


def flags_from_truth(leak: float, n: int = 20_000, alpha: float = 0.1):
    """Flag a synthetic draw with its true f0 and s0 standing in for the Stage-1 summaries."""
    result = generate_with_truth(default_spec(n=n, seed=41, leak=leak))
    ds = split(preprocess(result.dataset), 0.8, seed=5)
    truth = result.truth.set_index("row_id").loc[ds.row_ids]
    post = PosteriorSummary(
        f_bar=truth["f0"].to_numpy(dtype=float),
        s_bar=truth["s0"].to_numpy(dtype=float),
        trace_f=np.empty(0),
        trace_s=np.empty(0),
        row_ids=ds.row_ids,
    )
    return ds, flag(post, ds.outcome, FlagConfig(alpha))


def stage2_test_auc(ds, flags) -> float:
    Z = build_design(ds, ColumnRole.IRRELEVANT)
    position = pd.Index(ds.row_ids).get_indexer(Z.row_ids)
    labels = flags.labels[position].astype(np.int64)
    train = ds.partition[position] == Partition.TRAIN.value
    path = fit_path(Z.take(train), labels[train], seed=0)
    model = select_lambda(path, Z.take(train), labels[train], folds=10, seed=0)
    return auc_score(predict_risk(model, Z.take(~train)), labels[~train])


@pytest.mark.slow
def test_leaked_group_is_flagged_more_often():
    ds, flags = flags_from_truth(leak=15.0)
    leaked = (ds.frame["DSIND"] == "1").to_numpy()
    assert flags.labels[leaked].mean() > flags.labels[~leaked].mean()


@pytest.mark.slow
def test_stage2_detects_an_injected_disparity():
    assert stage2_test_auc(*flags_from_truth(leak=15.0)) > 0.55


@pytest.mark.slow
def test_stage2_finds_nothing_without_a_leak():
    assert 0.47 <= stage2_test_auc(*flags_from_truth(leak=0.0)) <= 0.53

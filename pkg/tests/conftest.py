from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd
import pytest

from flipped_risk.config import PipelineConfig
from flipped_risk.data import ROW_ID, ColumnSpec, Dataset, preprocess, split
from flipped_risk.hbart import HbartConfig
from flipped_risk.synth import default_spec, generate_with_truth, write_bundle

SMALL_MCMC = HbartConfig(
    n_mean_trees=20,
    n_scale_trees=5,
    iterations=400,
    burn_in=100,
    keep_every=20,
    log_every=0,
)


@pytest.fixture
def small_mcmc() -> HbartConfig:
    return SMALL_MCMC


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240517)


@pytest.fixture(scope="session")
def small_synth():
    """800 rows of the default synthetic spec with its ground truth."""
    return generate_with_truth(default_spec(n=800, seed=11))


@pytest.fixture(scope="session")
def clean_synth(small_synth) -> Dataset:
    return split(preprocess(small_synth.dataset), 0.8, seed=3)


@pytest.fixture
def bundle(tmp_path: Path, small_synth) -> Dict[str, Path]:
    """The small synthetic dataset written as CSV + schema + truth under tmp_path."""
    return write_bundle(small_synth, tmp_path / "data", "synth")


@pytest.fixture
def write_table(tmp_path: Path):
    """Write a CSV and a schema sidecar from text; returns (csv_path, schema_path)."""

    def _write(csv_text: str, schema_text: str, stem: str = "table"):
        csv_path = tmp_path / f"{stem}.csv"
        schema_path = tmp_path / f"{stem}.schema"
        csv_path.write_text(csv_text, encoding="utf-8")
        schema_path.write_text(schema_text, encoding="utf-8")
        return csv_path, schema_path

    return _write


@pytest.fixture
def small_config(tmp_path: Path, bundle) -> PipelineConfig:
    """A pipeline config over the small bundle with a short chain and a short lambda grid."""
    overrides = {
        "paths.data": str(bundle["data"]),
        "paths.schema": str(bundle["schema"]),
        "paths.out": str(tmp_path / "out"),
        "stage1.n_mean_trees": str(SMALL_MCMC.n_mean_trees),
        "stage1.n_scale_trees": str(SMALL_MCMC.n_scale_trees),
        "stage1.iterations": str(SMALL_MCMC.iterations),
        "stage1.burn_in": str(SMALL_MCMC.burn_in),
        "stage1.keep_every": str(SMALL_MCMC.keep_every),
        "stage1.log_every": "0",
        "stage2.grid_size": "12",
        "stage2.lambda_min_ratio": "0.01",
        "stage2.folds": "5",
        "stage2.workers": "2",
    }
    return PipelineConfig.load(None, overrides)


@pytest.fixture
def make_dataset():
    """Build a preprocessed dataset straight from records and (name, kind, role) triples."""

    def _make(rows, schema) -> Dataset:
        frame = pd.DataFrame.from_records(rows)
        frame.insert(0, ROW_ID, np.arange(len(frame), dtype=np.int64))
        return preprocess(Dataset(frame=frame, schema=tuple(ColumnSpec(*spec) for spec in schema)))

    return _make

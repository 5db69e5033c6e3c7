import json
from pathlib import Path

import pytest

from flipped_risk.cli import build_parser, main, overrides_from
from flipped_risk.manifest import read_csv
from flipped_risk.synth import write_bundle

SMALL = [
    "--set", "stage1.n_mean_trees=20",
    "--set", "stage1.n_scale_trees=5",
    "--set", "stage1.iterations=400",
    "--set", "stage1.burn_in=100",
    "--set", "stage1.keep_every=20",
    "--set", "stage1.log_every=0",
    "--set", "stage2.grid_size=12",
    "--set", "stage2.lambda_min_ratio=0.01",
    "--set", "stage2.folds=5",
    "--set", "stage2.workers=2",
]


def args_for(out: Path, data: dict) -> list:
    return ["--out", str(out), "--data", str(data["data"]), "--schema", str(data["schema"]), *SMALL]


@pytest.fixture(scope="module")
def data_files(tmp_path_factory, small_synth):
    return write_bundle(small_synth, tmp_path_factory.mktemp("data"), "synth")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, data_files):
    """One full run: train-stage1, flag, train-stage2, evaluate."""
    out = tmp_path_factory.mktemp("run") / "out"
    codes = {
        command: main([command, *args_for(out, data_files)])
        for command in ("train-stage1", "flag", "train-stage2", "evaluate")
    }
    return out, codes


def test_parser_maps_named_flags_onto_config_keys():
    args = build_parser().parse_args(
        ["flag", "--alpha", "0.2", "--seed.mcmc", "5", "--set", "paths.out=x", "--out", "y"]
    )
    assert overrides_from(args) == {"flag.alpha": "0.2", "stage1.seed": "5", "paths.out": "y"}


def test_unknown_command_exits_through_argparse():
    with pytest.raises(SystemExit):
        main(["train-stage3"])


def test_synth_command(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--out", str(out), "--set", "synth.n=200", "--set", "synth.seed=3"]) == 0
    for name in ("synth.csv", "synth.schema", "synth_truth.csv", "manifest-synth.json"):
        assert (out / name).is_file()
    manifest = json.loads((out / "manifest-synth.json").read_text(encoding="utf-8"))
    assert manifest["seeds"] == {"synth": 3}


def test_every_stage_succeeds(pipeline):
    _, codes = pipeline
    assert codes == {"train-stage1": 0, "flag": 0, "train-stage2": 0, "evaluate": 0}


def test_stage1_artifacts(pipeline):
    out, _ = pipeline
    for name in (
        "stage1_model.npz", "stage1_summary.csv", "stage1_traces.csv", "stage1_r_squared.csv",
        "data_counts.csv", "manifest-train-stage1.json",
    ):
        assert (out / name).is_file(), name
    summary, digest = read_csv(out / "stage1_summary.csv")
    assert list(summary.columns) == ["row_id", "partition", "y", "f_bar", "s_bar"]
    assert (summary["s_bar"] > 0).all()
    assert set(summary["partition"]) == {"train", "test"}
    assert len(digest) == 64
    assert f"inputs-sha256: {digest}" in (out / "stage1_traces.svg").read_text(encoding="utf-8")
    assert "train-stage1" in (out / "logs" / "info.log").read_text(encoding="utf-8")


def test_flag_artifacts(pipeline):
    out, _ = pipeline
    flags, _ = read_csv(out / "flags-alpha0.10.csv")
    assert set(flags["label"]) == {0, 1}
    assert 0.02 < flags["label"].mean() < 0.3
    assert (out / "flag_rate_by_split-alpha0.10.csv").is_file()
    assert (out / "flag_rate_by_guideline-alpha0.10.csv").is_file()
    assert (out / "manifest-flag-alpha0.10.json").is_file()


def test_stage2_and_evaluation_artifacts(pipeline):
    out, _ = pipeline
    model = json.loads((out / "stage2_model-alpha0.10.json").read_text(encoding="utf-8"))
    assert model["folds"] == 5
    curve, _ = read_csv(out / "cv_curve-alpha0.10.csv")
    assert len(curve) == 12
    summary, _ = read_csv(out / "auc_summary-alpha0.10.csv")
    aucs = summary.set_index("quantity")["value"]
    assert 0.0 <= aucs["test_auc"] <= 1.0
    assert {"geweke_f_z", "geweke_s_z", "train_r2"} <= set(aucs.index)
    bins, _ = read_csv(out / "risk_bins-alpha0.10.csv")
    assert bins["label"].tolist() == ["Low", "Low-Moderate", "Moderate", "Moderate-High", "High"]
    geweke, _ = read_csv(out / "geweke.csv")
    assert geweke["trace"].tolist() == ["mean_f", "mean_s"]


def test_rerun_is_byte_identical(tmp_path, pipeline, data_files):
    out, _ = pipeline
    assert main(["train-stage1", *args_for(tmp_path / "again", data_files)]) == 0
    assert (tmp_path / "again" / "stage1_summary.csv").read_bytes() == (out / "stage1_summary.csv").read_bytes()


def test_excluded_factor_has_no_coefficients(pipeline, data_files):
    out, _ = pipeline
    extra = ["--alpha", "0.2", "--set", "stage2.exclude=MONRACE"]
    assert main(["flag", *args_for(out, data_files), *extra]) == 0
    assert main(["train-stage2", *args_for(out, data_files), *extra]) == 0
    report, _ = read_csv(out / "coefficients-alpha0.20.csv")
    assert "MONRACE" not in set(report["factor"])
    model = json.loads((out / "stage2_model-alpha0.20.json").read_text(encoding="utf-8"))
    assert not any(name.startswith("MONRACE") for name in model["column_names"])


def test_missing_schema_exits_with_config_code(tmp_path, data_files):
    out = tmp_path / "out"
    code = main(["train-stage1", "--out", str(out), "--data", str(data_files["data"]),
                 "--schema", str(tmp_path / "absent.schema")])
    assert code == 2
    record = json.loads((out / "error.json").read_text(encoding="utf-8"))
    assert record["exit_code"] == 2
    assert record["error"] == "ConfigError"


def test_bad_alpha_exits_with_config_code(tmp_path, data_files):
    assert main(["flag", *args_for(tmp_path / "out", data_files), "--alpha", "1.5"]) == 2


def test_flag_before_stage1_names_the_missing_step(tmp_path, data_files, capsys):
    assert main(["flag", *args_for(tmp_path / "out", data_files)]) == 2
    assert "train-stage1" in capsys.readouterr().err


def test_missing_declared_column_exits_with_data_code(tmp_path, data_files):
    schema = tmp_path / "wider.schema"
    schema.write_text(data_files["schema"].read_text(encoding="utf-8") + "EXTRA numeric relevant\n", encoding="utf-8")
    out = tmp_path / "out"
    code = main(["train-stage1", "--out", str(out), "--data", str(data_files["data"]), "--schema", str(schema)])
    assert code == 3
    assert json.loads((out / "error.json").read_text(encoding="utf-8"))["column"] == "EXTRA"


@pytest.mark.slow
def test_sweep_alpha(tmp_path, data_files):
    out = tmp_path / "out"
    args = args_for(out, data_files)
    assert main(["train-stage1", *args]) == 0
    assert main(["sweep-alpha", *args, "--set", "flag.sweep=0.10, 0.20"]) == 0
    table, _ = read_csv(out / "model2_aucs.csv")
    assert table["alpha"].tolist() == [0.1, 0.2]
    assert (out / "flags-alpha0.20.csv").is_file()

"""Pipeline stages. Each command reads its inputs from files, writes its artifacts and a manifest."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from flipped_risk import hbart, plots, sparse_logit
from flipped_risk._roles import ColumnRole, Partition
from flipped_risk.config import PipelineConfig
from flipped_risk.data import (
    ROW_ID,
    Dataset,
    DesignMatrix,
    build_design,
    load_csv,
    load_schema,
    preprocess,
    row_counts,
    split,
)
from flipped_risk.errors import ConfigError, DataError, NumericalError
from flipped_risk.evaluation import (
    AlphaAucTable,
    AlphaRun,
    EvaluationReport,
    GewekeResult,
    auc,
    geweke,
    risk_bins,
    table_model2_aucs,
)
from flipped_risk.flagger import (
    FlagConfig,
    FlagSet,
    flag,
    flag_rate_by_bin,
    guideline_position_table,
    guideline_range_bins,
)
from flipped_risk.log import get_console, log
from flipped_risk.manifest import inputs_digest, read_csv, write_csv, write_manifest
from flipped_risk.synth import default_spec, generate_with_truth, write_bundle

GUIDELINE_MIN = "GLMIN"
GUIDELINE_MAX = "GLMAX"


@dataclass(frozen=True)
class Artifacts:
    """File layout under the output directory."""

    out: Path

    @staticmethod
    def tag(alpha: float) -> str:
        return f"alpha{alpha:.2f}"

    def path(self, stem: str, suffix: str, alpha: Optional[float] = None) -> Path:
        name = stem if alpha is None else f"{stem}-{self.tag(alpha)}"
        return self.out / f"{name}{suffix}"

    @property
    def stage1_model(self) -> Path:
        return self.out / "stage1_model.npz"

    @property
    def stage1_summary(self) -> Path:
        return self.out / "stage1_summary.csv"

    @property
    def stage1_traces(self) -> Path:
        return self.out / "stage1_traces.csv"

    @property
    def stage1_r2(self) -> Path:
        return self.out / "stage1_r_squared.csv"

    def flags(self, alpha: float) -> Path:
        return self.path("flags", ".csv", alpha)

    def stage2_model(self, alpha: float) -> Path:
        return self.path("stage2_model", ".json", alpha)


@dataclass
class CommandResult:
    """What a command produced; `outputs` lists every file written."""

    outputs: List[Path] = field(default_factory=list)
    values: Dict[str, object] = field(default_factory=dict)


def _require(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{path} not found; run `{producer}` first")
    return path


def load_dataset(cfg: PipelineConfig) -> Tuple[Dataset, Dataset]:
    """(raw, preprocessed-and-split) dataset."""
    schema = load_schema(cfg.paths.schema)
    raw = load_csv(cfg.paths.data, schema)
    cleaned = split(preprocess(raw), cfg.split.train_fraction, cfg.split.seed)
    return raw, cleaned


def _partition_of(ds: Dataset, row_ids: np.ndarray) -> np.ndarray:
    return pd.Series(ds.partition, index=ds.row_ids).loc[row_ids].to_numpy()


def _data_inputs(cfg: PipelineConfig) -> Dict[str, Path]:
    return {"data": Path(cfg.paths.data), "schema": Path(cfg.paths.schema)}


def _sections(cfg: PipelineConfig, *names: str) -> Dict[str, object]:
    effective = cfg.effective()
    return {name: effective[name] for name in names}


def cmd_train_stage1(cfg: PipelineConfig) -> CommandResult:
    """Fit Stage 1 and write the model, per-row summary, traces, R² and row accounting."""
    cfg.validate(need_data=True)
    art = Artifacts(Path(cfg.paths.out))
    art.out.mkdir(parents=True, exist_ok=True)
    inputs = _data_inputs(cfg)
    digest = inputs_digest(inputs, _sections(cfg, "split", "stage1"))
    raw, ds = load_dataset(cfg)
    result = CommandResult()
    counts = pd.DataFrame(row_counts(raw, ds), columns=["stage", "rows"])
    result.outputs.append(write_csv(counts, art.out / "data_counts.csv", digest))

    X = build_design(ds, ColumnRole.RELEVANT)
    train = _partition_of(ds, X.row_ids) == Partition.TRAIN.value
    y_by_id = pd.Series(ds.outcome, index=ds.row_ids)
    X_train, X_test = X.take(train), X.take(~train)
    model = hbart.fit(
        X_train, y_by_id.loc[X_train.row_ids].to_numpy(), cfg.stage1, seed=cfg.mcmc_seed, X_extra=X_test
    )
    result.outputs.append(hbart.save_model(model, art.stage1_model))

    summary = model.summary
    frame = summary.to_frame()
    is_train = np.isin(summary.row_ids, X_train.row_ids)
    frame.insert(1, "partition", np.where(is_train, Partition.TRAIN.value, Partition.TEST.value))
    frame.insert(2, "y", y_by_id.loc[summary.row_ids].to_numpy())
    result.outputs.append(write_csv(frame, art.stage1_summary, digest))
    traces = summary.traces_frame()
    result.outputs.append(write_csv(traces, art.stage1_traces, digest))
    result.outputs.append(plots.trace_svg(traces, art.out / "stage1_traces.svg", digest=digest))

    records = []
    for name, mask in ((Partition.TRAIN.value, is_train), (Partition.TEST.value, ~is_train)):
        try:
            fit = hbart.r_squared(summary.f_bar[mask], frame["y"].to_numpy()[mask], p=X.shape[1])
            records.append({"split": name, "n": fit.n, "p": fit.p, "r2": fit.r2, "adjusted_r2": fit.adjusted_r2})
        except NumericalError as error:
            log.warning(f"R² on {name} rows unavailable: {error}")
            records.append({"split": name, "n": int(mask.sum()), "p": X.shape[1], "r2": np.nan, "adjusted_r2": np.nan})
    r2 = pd.DataFrame.from_records(records, columns=["split", "n", "p", "r2", "adjusted_r2"])
    result.outputs.append(write_csv(r2, art.stage1_r2, digest))

    write_manifest(art.out, "train-stage1", _seeds(cfg), cfg.effective(), inputs, result.outputs)
    get_console().print(summary)
    result.values.update(model=model, summary=summary, r_squared=r2)
    log.success(f"Stage 1 artifacts written to {art.out}")
    return result


def _seeds(cfg: PipelineConfig) -> Dict[str, int]:
    seeds = cfg.seeds
    return {"split": seeds.split, "mcmc": seeds.mcmc, "cv": seeds.cv}


def _summary_from_csv(frame: pd.DataFrame) -> hbart.PosteriorSummary:
    return hbart.PosteriorSummary(
        f_bar=frame["f_bar"].to_numpy(dtype=float),
        s_bar=frame["s_bar"].to_numpy(dtype=float),
        trace_f=np.empty(0),
        trace_s=np.empty(0),
        row_ids=frame["row_id"].to_numpy(dtype=np.int64),
    )


def cmd_flag(cfg: PipelineConfig, alpha: Optional[float] = None) -> CommandResult:
    """Flag especially lengthy sentences at `alpha` (default: the configured one)."""
    alpha = cfg.flag.alpha if alpha is None else alpha
    cfg = cfg.with_alpha(alpha).validate(need_data=False)
    art = Artifacts(Path(cfg.paths.out))
    summary_path = _require(art.stage1_summary, "train-stage1")
    inputs: Dict[str, Path] = {"stage1_summary": summary_path}
    have_data = all(p is not None and Path(p).is_file() for p in (cfg.paths.data, cfg.paths.schema))
    if have_data:
        inputs.update(_data_inputs(cfg))
    digest = inputs_digest(inputs, {"alpha": alpha})
    frame, _ = read_csv(summary_path)
    flags = flag(_summary_from_csv(frame), frame["y"].to_numpy(dtype=float), FlagConfig(alpha))

    result = CommandResult()
    flag_frame = flags.to_frame()
    flag_frame.insert(1, "partition", frame["partition"].to_numpy())
    result.outputs.append(write_csv(flag_frame, art.flags(alpha), digest))
    by_split = flag_rate_by_bin(flags, frame["partition"].to_numpy(), title=f"Flag rate by split (alpha={alpha:g})")
    result.outputs.append(write_csv(by_split.frame, art.path("flag_rate_by_split", ".csv", alpha), digest))
    result.outputs.append(plots.flag_scatter_svg(flag_frame, art.path("flag_scatter", ".svg", alpha), digest=digest))
    get_console().print(by_split)

    if have_data:
        result.outputs.extend(_guideline_tables(cfg, flags, art, alpha, digest))
    else:
        log.warning("No data file configured; skipping the guideline-range tables")

    write_manifest(art.out, f"flag-{art.tag(alpha)}", _seeds(cfg), cfg.effective(), inputs, result.outputs)
    result.values.update(flags=flags, by_split=by_split)
    log.success(f"Flagged {flags.flag_rate:.2%} of rows at alpha={alpha:g}")
    return result


def _guideline_tables(cfg: PipelineConfig, flags: FlagSet, art: Artifacts, alpha: float, digest: str) -> List[Path]:
    _, ds = load_dataset(cfg)
    names = {spec.name for spec in ds.schema}
    if not {GUIDELINE_MIN, GUIDELINE_MAX} <= names:
        log.warning(f"Schema lacks {GUIDELINE_MIN}/{GUIDELINE_MAX}; skipping the guideline-range tables")
        return []
    indexed = ds.frame.set_index(ROW_ID)
    lower = indexed[GUIDELINE_MIN].reindex(flags.row_ids).to_numpy(dtype=float)
    upper = indexed[GUIDELINE_MAX].reindex(flags.row_ids).to_numpy(dtype=float)
    bins = guideline_range_bins(lower)
    by_range = flag_rate_by_bin(flags, bins, title="Flag rate by guideline range")
    position = guideline_position_table(flags, flags.y, lower, upper, bins)
    get_console().print(by_range)
    return [
        write_csv(by_range.frame, art.path("flag_rate_by_guideline", ".csv", alpha), digest),
        write_csv(position, art.path("guideline_position", ".csv", alpha), digest),
    ]


def stage2_design(cfg: PipelineConfig, ds: Dataset, flag_frame: pd.DataFrame) -> Tuple[DesignMatrix, np.ndarray, np.ndarray]:
    """Irrelevant-factor design over flagged rows: (design, labels, train mask)."""
    excluded = set(cfg.stage2.exclude)
    interactions = []
    for left, right in cfg.stage2.interactions:
        if {left, right} & excluded:
            log.warning(f"Interaction {left}*{right} dropped: it involves an excluded factor")
            continue
        interactions.append((left, right))
    Z = build_design(ds, ColumnRole.IRRELEVANT, interactions, standardize_numeric=False, exclude=tuple(excluded))
    Z = Z.select_ids(flag_frame["row_id"].to_numpy(dtype=np.int64))
    by_id = flag_frame.set_index("row_id")
    labels = by_id["label"].loc[Z.row_ids].to_numpy(dtype=np.int64)
    train = by_id["partition"].loc[Z.row_ids].to_numpy() == Partition.TRAIN.value
    return Z, labels, train


def cmd_train_stage2(cfg: PipelineConfig, alpha: Optional[float] = None) -> CommandResult:
    """Fit the lasso path on the training rows, choose lambda by CV AUC, write model and reports."""
    alpha = cfg.flag.alpha if alpha is None else alpha
    cfg = cfg.with_alpha(alpha).validate(need_data=True)
    art = Artifacts(Path(cfg.paths.out))
    flags_path = _require(art.flags(alpha), "flag")
    inputs = {**_data_inputs(cfg), "flags": flags_path}
    digest = inputs_digest(inputs, _sections(cfg, "split", "stage2"))
    flag_frame, _ = read_csv(flags_path)
    _, ds = load_dataset(cfg)
    Z, labels, train = stage2_design(cfg, ds, flag_frame)
    Z_train = Z.take(train)
    constant = Z_train.constant_columns()
    if constant:
        log.warning(f"Dropping {len(constant)} constant column(s) from the Stage 2 design: {', '.join(constant[:5])}")
        Z_train = Z_train.drop_columns(constant)

    settings = sparse_logit.SolverSettings(bound_weights=cfg.stage2.bound_weights)
    path = sparse_logit.fit_path(
        Z_train, labels[train], cfg.stage2.grid_size, seed=cfg.stage2.seed,
        lambda_min_ratio=cfg.stage2.lambda_min_ratio, settings=settings,
    )
    model = sparse_logit.select_lambda(
        path, Z_train, labels[train], cfg.stage2.folds, seed=cfg.stage2.seed,
        rule=cfg.stage2.rule, workers=cfg.stage2.workers or None, settings=settings,
    )
    result = CommandResult()
    result.outputs.append(sparse_logit.save_model(model, art.stage2_model(alpha)))
    report = sparse_logit.coefficient_report(model)
    result.outputs.append(write_csv(report.frame, art.path("coefficients", ".csv", alpha), digest))
    cv = model.path.cv_frame()
    result.outputs.append(write_csv(cv, art.path("cv_curve", ".csv", alpha), digest))
    result.outputs.append(
        plots.cv_curve_svg(cv, art.path("cv_curve", ".svg", alpha), model.lambda_, model.best_auc_lambda, digest=digest)
    )
    write_manifest(art.out, f"train-stage2-{art.tag(alpha)}", _seeds(cfg), cfg.effective(), inputs, result.outputs)
    get_console().print(report)
    result.values.update(model=model, report=report, design=Z, labels=labels, train=train)
    log.success(f"Stage 2 model: {model.nonzero} non-zero coefficient(s) at lambda={model.lambda_:.4e}")
    return result


def _scores(model: sparse_logit.SparseLogitModel, Z: DesignMatrix) -> np.ndarray:
    extra = [name for name in Z.column_names if name not in set(model.column_names)]
    return sparse_logit.predict_risk(model, Z.drop_columns(extra))


def _geweke_or_none(trace: np.ndarray, cfg: PipelineConfig, label: str) -> Optional[GewekeResult]:
    try:
        return geweke(trace, cfg.evaluate.geweke_first, cfg.evaluate.geweke_last)
    except (DataError, NumericalError) as error:
        log.warning(f"Geweke diagnostic for {label} skipped: {error}")
        return None


def cmd_evaluate(cfg: PipelineConfig, alpha: Optional[float] = None) -> CommandResult:
    """ROC/AUC, risk bins, Geweke diagnostics and R² for the configured alpha."""
    alpha = cfg.flag.alpha if alpha is None else alpha
    cfg = cfg.with_alpha(alpha).validate(need_data=True)
    art = Artifacts(Path(cfg.paths.out))
    inputs = {
        **_data_inputs(cfg),
        "flags": _require(art.flags(alpha), "flag"),
        "stage2_model": _require(art.stage2_model(alpha), "train-stage2"),
        "stage1_traces": _require(art.stage1_traces, "train-stage1"),
        "stage1_r_squared": _require(art.stage1_r2, "train-stage1"),
    }
    digest = inputs_digest(inputs, _sections(cfg, "split", "stage2", "evaluate"))
    model = sparse_logit.load_model(inputs["stage2_model"])
    flag_frame, _ = read_csv(inputs["flags"])
    _, ds = load_dataset(cfg)
    Z, labels, train = stage2_design(cfg, ds, flag_frame)
    scores = _scores(model, Z)

    roc_train = auc(scores[train], labels[train])
    roc_test = auc(scores[~train], labels[~train])
    bins = risk_bins(scores[~train], labels[~train], cfg.evaluate.bins)
    traces, _ = read_csv(inputs["stage1_traces"])
    r2, _ = read_csv(inputs["stage1_r_squared"])
    report = EvaluationReport(
        roc_test=roc_test,
        roc_train=roc_train,
        bins=bins,
        r_squared=r2,
        geweke_f=_geweke_or_none(traces["mean_f"].to_numpy(dtype=float), cfg, "mean f"),
        geweke_s=_geweke_or_none(traces["mean_s"].to_numpy(dtype=float), cfg, "mean s"),
    )

    result = CommandResult()
    result.outputs.append(write_csv(roc_test.to_frame(bins.edges), art.path("roc", ".csv", alpha), digest))
    result.outputs.append(plots.roc_svg(roc_test, art.path("roc", ".svg", alpha), bins.edges, digest=digest))
    result.outputs.append(write_csv(bins.frame, art.path("risk_bins", ".csv", alpha), digest))
    result.outputs.append(plots.risk_bins_svg(bins, art.path("risk_bins", ".svg", alpha), digest=digest))
    result.outputs.append(write_csv(report.summary_frame(), art.path("auc_summary", ".csv", alpha), digest))
    geweke_rows = [
        {"trace": name, **res.as_dict()}
        for name, res in (("mean_f", report.geweke_f), ("mean_s", report.geweke_s))
        if res is not None
    ]
    geweke_frame = pd.DataFrame.from_records(geweke_rows, columns=["trace", "z_score", "p_value", "first", "last", "n"])
    result.outputs.append(write_csv(geweke_frame, art.out / "geweke.csv", digest))
    write_manifest(art.out, f"evaluate-{art.tag(alpha)}", _seeds(cfg), cfg.effective(), inputs, result.outputs)
    get_console().print(report)
    get_console().print(bins)
    result.values.update(report=report)
    log.success(f"Test AUC {roc_test.auc:.3f} ({roc_test.band})")
    return result


def cmd_synth(cfg: PipelineConfig) -> CommandResult:
    """Write a synthetic CSV, its schema and the ground-truth sidecar."""
    art = Artifacts(Path(cfg.paths.out))
    spec = default_spec(
        n=cfg.synth.n, seed=cfg.synth.seed, leak=cfg.synth.leak, noise_irrelevant=cfg.synth.noise_irrelevant
    )
    bundle = write_bundle(generate_with_truth(spec), art.out, cfg.synth.stem)
    result = CommandResult(outputs=list(bundle.values()))
    write_manifest(art.out, "synth", {"synth": cfg.synth.seed}, cfg.effective(), {}, result.outputs)
    result.values.update(paths=bundle)
    log.success(f"Synthetic data written to {bundle['data']}")
    return result


def _alpha_run(cfg: PipelineConfig, alpha: float) -> AlphaRun:
    stage2 = cmd_train_stage2(cfg, alpha)
    model = stage2.values["model"]
    Z, labels, train = stage2.values["design"], stage2.values["labels"], stage2.values["train"]
    scores = _scores(model, Z)
    return AlphaRun(
        alpha=alpha,
        train_auc=auc(scores[train], labels[train]).auc,
        test_auc=auc(scores[~train], labels[~train]).auc,
        flag_rate=float(labels.mean()),
    )


def cmd_sweep_alpha(cfg: PipelineConfig) -> CommandResult:
    """Flag at every sweep alpha, fit the Stage-2 models concurrently and tabulate their AUCs."""
    cfg = cfg.validate(need_data=True)
    art = Artifacts(Path(cfg.paths.out))
    alphas = tuple(cfg.flag.sweep)
    for alpha in alphas:
        cmd_flag(cfg, alpha)
    with ThreadPoolExecutor(max_workers=len(alphas)) as pool:
        runs = list(pool.map(lambda a: _alpha_run(cfg, a), alphas))
    table: AlphaAucTable = table_model2_aucs(runs)
    inputs = {**_data_inputs(cfg), **{f"flags_{art.tag(a)}": art.flags(a) for a in alphas}}
    digest = inputs_digest(inputs, _sections(cfg, "split", "flag", "stage2"))
    result = CommandResult()
    result.outputs.append(write_csv(table.frame, art.out / "model2_aucs.csv", digest))
    write_manifest(art.out, "sweep-alpha", _seeds(cfg), cfg.effective(), inputs, result.outputs)
    get_console().print(table)
    result.values.update(table=table)
    return result

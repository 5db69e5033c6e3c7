"""Command-line entry point: `flipped-risk <command> [options]`."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

from flipped_risk import commands
from flipped_risk.config import PipelineConfig, parse_overrides
from flipped_risk.errors import FlippedRiskError
from flipped_risk.log import log

COMMANDS: Dict[str, Callable[[PipelineConfig], commands.CommandResult]] = {
    "train-stage1": commands.cmd_train_stage1,
    "flag": commands.cmd_flag,
    "train-stage2": commands.cmd_train_stage2,
    "evaluate": commands.cmd_evaluate,
    "synth": commands.cmd_synth,
    "sweep-alpha": commands.cmd_sweep_alpha,
}

HELP = {
    "train-stage1": "fit the heteroskedastic tree ensemble on legally relevant factors",
    "flag": "label sentences above the per-case quantile threshold",
    "train-stage2": "fit the L1 logistic model on legally irrelevant factors",
    "evaluate": "ROC/AUC, risk bins, Geweke diagnostics and R² tables",
    "synth": "write a synthetic dataset with known ground truth",
    "sweep-alpha": "flag and refit Stage 2 at every sweep alpha, tabulating AUCs",
}

# CLI flag -> config key
FLAG_KEYS = {
    "out": "paths.out",
    "data": "paths.data",
    "schema": "paths.schema",
    "alpha": "flag.alpha",
    "seed_split": "split.seed",
    "seed_mcmc": "stage1.seed",
    "seed_cv": "stage2.seed",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="input CSV")
    common.add_argument("--schema", help="schema sidecar for the CSV")
    common.add_argument("--alpha", help="flag level in (0, 1)")
    common.add_argument("--seed.split", dest="seed_split", help="train/test split seed")
    common.add_argument("--seed.mcmc", dest="seed_mcmc", help="Stage 1 sampler seed")
    common.add_argument("--seed.cv", dest="seed_cv", help="Stage 2 fold seed")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override any config key (repeatable)",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="show INFO records on the console")

    parser = argparse.ArgumentParser(
        prog="flipped-risk",
        description="Flag especially lengthy sentences, then predict them from legally irrelevant factors.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, str]:
    """`--set` values first, then the named flags on top."""
    overrides = parse_overrides(args.overrides)
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = str(value)
    return overrides


def _error_out_dir(args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    for item in args.overrides:
        key, _, value = item.partition("=")
        if key.strip() == "paths.out" and value.strip():
            return Path(value.strip())
    return Path("out")


def report_error(error: FlippedRiskError, out_dir: Path) -> None:
    """Write `error.json` under `out_dir` and the same record to stderr."""
    record = error.to_record()
    text = json.dumps(record, sort_keys=True)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.json").write_text(text + "\n", encoding="utf-8")
    except OSError as os_error:
        log.warning(f"Could not write {out_dir / 'error.json'}: {os_error}")
    print(text, file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit status."""
    args = build_parser().parse_args(argv)
    out_dir = _error_out_dir(args)
    try:
        cfg = PipelineConfig.load(args.config, overrides_from(args))
        out_dir = Path(cfg.paths.out)
        log.configure(out_dir / "logs", verbose=args.verbose)
        log.rich(f"flipped-risk {args.command} (out: {out_dir})")
        result = COMMANDS[args.command](cfg)
    except FlippedRiskError as error:
        log.error(f"{type(error).__name__}: {error}")
        report_error(error, out_dir)
        return error.exit_code
    log.info(f"{args.command} wrote {len(result.outputs)} file(s)")
    return 0

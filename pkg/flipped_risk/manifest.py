"""Input hashing, CSV artifacts stamped with that hash, and per-command JSON manifests."""
from __future__ import annotations

import hashlib
import json
import subprocess
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

import pandas as pd

from flipped_risk.errors import DataError
from flipped_risk.log import log

HASH_PREFIX = "# inputs-sha256: "
FLOAT_FORMAT = "%.10g"


def sha256_file(path: Path | str) -> str:
    """Hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def inputs_digest(inputs: Mapping[str, Path | str], config: Mapping[str, Any]) -> str:
    """One hash over the named input files and the effective configuration."""
    digest = hashlib.sha256()
    for name in sorted(inputs):
        digest.update(f"{name}={sha256_file(inputs[name])}\n".encode())
    digest.update(json.dumps(config, sort_keys=True, default=str).encode())
    return digest.hexdigest()


def write_csv(frame: pd.DataFrame, path: Path | str, digest: str) -> Path:
    """Write `frame` after a `# inputs-sha256:` line, floats in a fixed format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"{HASH_PREFIX}{digest}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    log.debug(f"Wrote {path}")
    return path


def read_csv(path: Path | str) -> Tuple[pd.DataFrame, str]:
    """Read an artifact written by `write_csv`; returns (frame, inputs digest)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Artifact not found: {path}")
    with path.open("r", encoding="utf-8") as handle:
        first = handle.readline().rstrip("\n")
        if not first.startswith(HASH_PREFIX):
            raise DataError(f"{path} lacks the '{HASH_PREFIX.strip()}' header line")
        frame = pd.read_csv(handle)
    return frame, first[len(HASH_PREFIX):]


def git_describe(cwd: Optional[Path] = None) -> Optional[str]:
    """`git describe --always --dirty`, or None outside a checkout."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=cwd or Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            check=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return result.stdout.strip() or None


def write_manifest(
    out_dir: Path | str,
    command: str,
    seeds: Mapping[str, int],
    config: Mapping[str, Any],
    inputs: Mapping[str, Path | str],
    outputs: Iterable[Path | str],
) -> Path:
    """Write `manifest-<command>.json` describing one command run."""
    from flipped_risk import __version__

    out_dir = Path(out_dir)
    document: Dict[str, Any] = {
        "command": command,
        "version": __version__,
        "git_describe": git_describe(),
        "seeds": dict(seeds),
        "config": config,
        "inputs": {name: {"path": str(path), "sha256": sha256_file(path)} for name, path in sorted(inputs.items())},
        "outputs": {
            Path(path).name: sha256_file(path) for path in sorted(outputs, key=lambda p: Path(p).name)
        },
    }
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(document, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    log.info(f"Wrote manifest {path}")
    return path

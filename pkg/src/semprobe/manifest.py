"""Run manifests: every file-producing command records how it was produced."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__
from .errors import StorageError


def file_digest(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise StorageError(f"cannot digest {path}: {exc}") from exc
    return h.hexdigest()


def write_manifest(
    primary_output,
    subcommand: str,
    flags: dict,
    inputs: dict,
    outputs: dict,
    seed,
    wall_time_s: float,
) -> Path:
    """Write `<primary_output>.manifest.json` describing one invocation.

    Re-running the same subcommand with the same flags and input digests
    reproduces every output byte-exactly; wall time is informational.
    """
    manifest = {
        "tool": "semprobe",
        "version": __version__,
        "subcommand": subcommand,
        "flags": flags,
        "inputs": {
            name: {"path": str(p), "sha256": file_digest(p)} for name, p in inputs.items()
        },
        "outputs": {
            name: {"path": str(p), "sha256": file_digest(p)} for name, p in outputs.items()
        },
        "seed": seed,
        "wall_time_s": wall_time_s,
    }
    path = Path(str(primary_output) + ".manifest.json")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise StorageError(f"cannot write manifest {path}: {exc}") from exc
    return path

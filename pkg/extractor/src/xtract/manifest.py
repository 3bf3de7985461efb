"""Export manifests: provenance for every file this tool writes."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    primary_output,
    *,
    model: str,
    checkpoint: str,
    input_resolution: int,
    feature_rule: str,
    stride: int | None,
    dataset_slice: str,
    outputs: dict,
    extra: dict | None = None,
) -> Path:
    """Write `<primary_output>.manifest.json` describing one export.

    Records everything needed to reproduce the export with the same
    checkpoint: the model and checkpoint id, the input resolution, which
    feature the export used (global-pooled vs dense patch and the exact
    token/stage rule), the patch stride, and digests of every output file.
    """
    manifest = {
        "tool": "xtract",
        "version": __version__,
        "model": model,
        "checkpoint": checkpoint,
        "input_resolution": input_resolution,
        "feature_rule": feature_rule,
        "stride": stride,
        "dataset_slice": dataset_slice,
        "outputs": {
            name: {"path": str(p), "sha256": _digest(p)} for name, p in outputs.items()
        },
    }
    if extra:
        manifest.update(extra)
    path = Path(str(primary_output) + ".manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path

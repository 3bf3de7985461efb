"""The three export operations behind the CLI."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import load_image
from .errors import ExtractError
from .manifest import write_manifest
from .tnsr import rle_encode_mask, write_json, write_tensor


def export_global_features(backend, image_paths, labels, out_dir,
                           resolution: int | None = None,
                           batch_size: int = 16,
                           dataset_slice: str = "") -> dict:
    """One pooled feature vector per image, in input order.

    Writes features.tnsr [N, D], labels.tnsr [N], ids.tnsr [N], and a
    manifest recording the encoder's pooling rule. Output order always
    follows the input list regardless of internal batching.
    """
    res = resolution or backend.global_resolution
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chunks = []
    for start in range(0, len(image_paths), batch_size):
        batch = np.stack(
            [load_image(p, res) for p in image_paths[start : start + batch_size]]
        )
        feats = backend.embed_images(batch)
        chunks.append(np.asarray(feats, dtype=np.float32))
    features = np.concatenate(chunks, axis=0)
    if features.shape[0] != len(image_paths):
        raise ExtractError(
            f"encoder returned {features.shape[0]} rows for {len(image_paths)} images"
        )
    write_tensor(out / "features.tnsr", features)
    write_tensor(out / "labels.tnsr", np.asarray(labels, dtype=np.int64))
    write_tensor(out / "ids.tnsr", np.arange(len(image_paths), dtype=np.int64))
    outputs = {
        "features": out / "features.tnsr",
        "labels": out / "labels.tnsr",
        "ids": out / "ids.tnsr",
    }
    write_manifest(
        out / "features.tnsr",
        model=backend.name,
        checkpoint=backend.checkpoint,
        input_resolution=res,
        feature_rule=f"global:{backend.global_rule}",
        stride=None,
        dataset_slice=dataset_slice,
        outputs=outputs,
        extra={"num_images": len(image_paths), "dim": int(features.shape[1])},
    )
    return {"features": features.shape, "out_dir": str(out)}


def export_dense_map(backend, image_path, image_id: int, out_path,
                     resolution: int | None = None) -> dict:
    """[Hp, Wp, D] patch map plus the sidecar the matcher consumes."""
    res = resolution or backend.dense_resolution
    image = load_image(image_path, res)
    fmap = np.asarray(backend.dense_map(image), dtype=np.float32)
    hp, wp = fmap.shape[:2]
    if res % hp or res % wp:
        raise ExtractError(
            f"resolution {res} is not an integer multiple of the {hp}x{wp} grid"
        )
    stride = res // hp
    write_tensor(out_path, fmap)
    meta_path = Path(str(out_path).removesuffix(".tnsr") + ".meta.json")
    write_json(
        meta_path,
        {"image_id": int(image_id), "stride": stride, "width": res, "height": res},
    )
    write_manifest(
        out_path,
        model=backend.name,
        checkpoint=backend.checkpoint,
        input_resolution=res,
        feature_rule=f"dense:{backend.dense_rule}",
        stride=stride,
        dataset_slice=str(image_path),
        outputs={"map": Path(out_path), "meta": meta_path},
        extra={"grid": [int(hp), int(wp)], "dim": int(fmap.shape[2])},
    )
    return {"grid": (hp, wp), "stride": stride, "meta": str(meta_path)}


def export_proposals(backend, image_path, image_id: int, points, out_path,
                     resolution: int | None = None,
                     points_space: tuple[int, int] | None = None) -> dict:
    """Per-point mask proposals with objectness scores; duplicates kept.

    `points` are (x, y) pairs; when `points_space` (width, height) differs
    from the model resolution the points are rescaled onto it. Masks are
    written at the model's input resolution, matching dense-map sidecars.
    """
    if not hasattr(backend, "propose_masks"):
        raise ExtractError(f"model {backend.name!r} does not generate mask proposals")
    res = resolution or backend.dense_resolution
    image = load_image(image_path, res)
    pts = [(float(x), float(y)) for x, y in points]
    if points_space is not None and (points_space[0] != res or points_space[1] != res):
        sx, sy = res / points_space[0], res / points_space[1]
        pts = [(x * sx, y * sy) for x, y in pts]
    proposals = backend.propose_masks(image, pts)
    records = [
        {
            "image_id": int(image_id),
            "score": float(score),
            "segmentation": rle_encode_mask(mask),
        }
        for mask, score in proposals
    ]
    write_json(out_path, records)
    write_manifest(
        out_path,
        model=backend.name,
        checkpoint=backend.checkpoint,
        input_resolution=res,
        feature_rule="proposals:per_point_masks",
        stride=None,
        dataset_slice=str(image_path),
        outputs={"proposals": Path(out_path)},
        extra={"num_points": len(pts), "num_proposals": len(records)},
    )
    return {"num_proposals": len(records)}

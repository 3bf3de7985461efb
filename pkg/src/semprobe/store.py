"""File formats shared across the toolkit and with external feature exporters.

Binary formats are fixed little-endian regardless of host:

* ``TNSR`` tensor files: magic, version u32, dtype u8 (1=f32, 2=i64),
  ndim u8, 2 pad bytes, dims as u64, then the raw row-major payload.
* ``LPCK`` probe checkpoints: magic, version u32, C u32, D u32,
  C*D f32 weights row-major, C f32 biases.

JSON files follow the COCO-style schemas documented in the README; unknown
fields are ignored on load. Loading never repairs data silently, except
bounding boxes clamped to image bounds, which is logged.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError, StorageError, ValidationError
from .matcher import Detection, Proposal
from .rle import RleMask

logger = logging.getLogger(__name__)

TENSOR_MAGIC = b"TNSR"
CHECKPOINT_MAGIC = b"LPCK"
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.int64): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<i8")}


def write_tensor(path, arr: np.ndarray) -> None:
    """Write an f32 or i64 array to a TNSR file; ndim >= 1 and all dims >= 1."""
    arr = np.asarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise InputError(f"unsupported tensor dtype {arr.dtype}; need float32 or int64")
    if arr.ndim < 1:
        raise InputError("tensor must have at least 1 dimension")
    arr = np.ascontiguousarray(arr)
    if any(d < 1 for d in arr.shape):
        raise InputError(f"tensor dims must be >= 1, got shape {arr.shape}")
    header = TENSOR_MAGIC + struct.pack("<IBB2x", 1, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(_CODE_DTYPES[code], copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(header + dims + payload)
    except OSError as exc:
        raise StorageError(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor(path) -> np.ndarray:
    """Read a TNSR file back into a native-endian numpy array."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read tensor from {path}: {exc}") from exc
    if len(blob) < 12:
        raise FormatError(f"{path}: file too short for a tensor header")
    if blob[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {TENSOR_MAGIC!r}")
    version, code, ndim = struct.unpack_from("<IBB", blob, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported tensor version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if ndim < 1:
        raise FormatError(f"{path}: tensor ndim must be >= 1")
    dims_end = 12 + 8 * ndim
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated dimension list")
    shape = struct.unpack_from(f"<{ndim}Q", blob, 12)
    if any(d < 1 for d in shape):
        raise FormatError(f"{path}: tensor dims must be >= 1, got {shape}")
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = len(blob) - dims_end
    if actual != expected:
        raise FormatError(
            f"{path}: payload byte count mismatch, {expected} expected / {actual} actual"
        )
    arr = np.frombuffer(blob, dtype=dtype, offset=dims_end).reshape(shape)
    return np.ascontiguousarray(arr.astype(dtype.newbyteorder("="), copy=False))


def save_checkpoint(path, weights: np.ndarray, bias: np.ndarray) -> None:
    """Persist linear-probe parameters; round-trips bit-exactly."""
    weights = np.ascontiguousarray(weights, dtype=np.float32)
    bias = np.ascontiguousarray(bias, dtype=np.float32)
    if weights.ndim != 2 or bias.ndim != 1 or weights.shape[0] != bias.shape[0]:
        raise InputError(
            f"checkpoint needs weights [C, D] and bias [C]; got {weights.shape} and {bias.shape}"
        )
    c, d = weights.shape
    blob = CHECKPOINT_MAGIC + struct.pack("<III", 1, c, d)
    blob += weights.astype("<f4", copy=False).tobytes(order="C")
    blob += bias.astype("<f4", copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint to {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint from {path}: {exc}") from exc
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a probe checkpoint")
    version, c, d = struct.unpack_from("<III", blob, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    expected = 16 + 4 * (c * d + c)
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload byte count mismatch, {expected} expected / {len(blob)} actual"
        )
    weights = np.frombuffer(blob, dtype="<f4", count=c * d, offset=16).reshape(c, d)
    bias = np.frombuffer(blob, dtype="<f4", count=c, offset=16 + 4 * c * d)
    return (
        np.ascontiguousarray(weights.astype(np.float32, copy=False)),
        np.ascontiguousarray(bias.astype(np.float32, copy=False)),
    )


@dataclass
class FeatureMatrix:
    """Per-image global features [N, D] with parallel image ids."""

    features: np.ndarray
    ids: np.ndarray

    def validate(self) -> "FeatureMatrix":
        if self.features.ndim != 2:
            raise ValidationError("features must be [N, D]")
        if len(self.ids) != self.features.shape[0]:
            raise ValidationError(
                f"{self.features.shape[0]} feature rows but {len(self.ids)} ids"
            )
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValidationError("image ids must be unique")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain non-finite values")
        return self


@dataclass
class LabelVector:
    labels: np.ndarray
    num_classes: int

    def validate(self) -> "LabelVector":
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ValidationError(
                f"labels must lie in [0, {self.num_classes}), got "
                f"range [{self.labels.min()}, {self.labels.max()}]"
            )
        return self


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: int
    height: int


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    segmentation: RleMask | None = None
    iscrowd: bool = False


@dataclass
class AnnotationSet:
    images: list[ImageInfo] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    categories: list[Category] = field(default_factory=list)

    def image_by_id(self) -> dict[int, ImageInfo]:
        return {im.id: im for im in self.images}

    def category_ids(self) -> list[int]:
        return [c.id for c in self.categories]


def _clamp_bbox(bbox, image: ImageInfo, ann_id: int):
    x, y, w, h = (float(v) for v in bbox)
    x2 = min(x + w, image.width)
    y2 = min(y + h, image.height)
    cx = min(max(x, 0.0), image.width)
    cy = min(max(y, 0.0), image.height)
    clamped = (cx, cy, max(0.0, x2 - cx), max(0.0, y2 - cy))
    if clamped != (x, y, w, h):
        logger.warning(
            "annotation %d: bbox %s clamped to %s for %dx%d image",
            ann_id, (x, y, w, h), clamped, image.width, image.height,
        )
    return clamped


def _parse_segmentation(obj, image: ImageInfo | None, what: str) -> RleMask | None:
    if obj is None:
        return None
    try:
        mask = RleMask.from_dict(obj)
    except ValidationError as exc:
        raise ValidationError(f"{what}: {exc}") from exc
    if image is not None and (mask.height, mask.width) != (image.height, image.width):
        raise ValidationError(
            f"{what}: mask size {mask.height}x{mask.width} does not match "
            f"image size {image.height}x{image.width}"
        )
    return mask


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


def _write_json(path, obj) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_annotations(path) -> AnnotationSet:
    """Load a COCO-style annotation file, enforcing referential integrity."""
    raw = _read_json(path)
    images = [
        ImageInfo(int(im["id"]), int(im["width"]), int(im["height"]))
        for im in raw.get("images", [])
    ]
    categories = [
        Category(int(c["id"]), str(c.get("name", str(c["id"]))))
        for c in raw.get("categories", [])
    ]
    by_id = {im.id: im for im in images}
    dangling = [
        int(a["id"])
        for a in raw.get("annotations", [])
        if int(a["image_id"]) not in by_id
    ]
    if dangling:
        raise ValidationError(
            f"{path}: annotations {dangling} reference unknown image ids"
        )
    annotations = []
    for a in raw.get("annotations", []):
        ann_id = int(a["id"])
        image = by_id[int(a["image_id"])]
        bbox = _clamp_bbox(a["bbox"], image, ann_id)
        seg = _parse_segmentation(a.get("segmentation"), image, f"annotation {ann_id}")
        annotations.append(
            Annotation(
                id=ann_id,
                image_id=image.id,
                category_id=int(a["category_id"]),
                bbox=bbox,
                segmentation=seg,
                iscrowd=bool(a.get("iscrowd", 0)),
            )
        )
    return AnnotationSet(images=images, annotations=annotations, categories=categories)


def save_annotations(path, anns: AnnotationSet) -> None:
    obj = {
        "images": [
            {"id": im.id, "width": im.width, "height": im.height}
            for im in anns.images
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": list(a.bbox),
                "segmentation": a.segmentation.to_dict() if a.segmentation else None,
                "iscrowd": int(a.iscrowd),
            }
            for a in anns.annotations
        ],
        "categories": [{"id": c.id, "name": c.name} for c in anns.categories],
    }
    _write_json(path, obj)


def save_detections(path, dets: list[Detection]) -> None:
    obj = [
        {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "bbox": list(d.box),
            "score": d.score,
            "segmentation": d.mask.to_dict() if d.mask is not None else None,
        }
        for d in dets
    ]
    _write_json(path, obj)


def load_detections(path) -> list[Detection]:
    raw = _read_json(path)
    if not isinstance(raw, list):
        raise FormatError(f"{path}: detections file must hold a JSON list")
    dets = []
    for i, d in enumerate(raw):
        seg = _parse_segmentation(d.get("segmentation"), None, f"detection {i}")
        dets.append(
            Detection(
                image_id=int(d["image_id"]),
                category_id=int(d["category_id"]),
                score=float(d["score"]),
                box=tuple(float(v) for v in d["bbox"]),
                mask=seg,
            )
        )
    return dets


def load_proposals(path) -> list[Proposal]:
    """Load proposals from a detections-schema file (objectness in `score`).

    The box is derived from the mask, so a `bbox` field is not required.
    """
    raw = _read_json(path)
    if not isinstance(raw, list):
        raise FormatError(f"{path}: proposals file must hold a JSON list")
    proposals = []
    for i, d in enumerate(raw):
        seg = _parse_segmentation(d.get("segmentation"), None, f"proposal {i}")
        if seg is None:
            raise ValidationError(f"{path}: proposal {i} has no segmentation mask")
        proposals.append(
            Proposal(
                image_id=int(d["image_id"]),
                mask=seg,
                objectness=float(d.get("score", 0.0)),
            )
        )
    return proposals

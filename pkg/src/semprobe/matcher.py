"""Training-free semantic matching of region proposals against prototypes.

A prototype is the L2-normalized masked-mean feature of a reference region.
Each proposal is pooled the same way from the target image's dense feature
map, assigned the category whose prototypes it is most cosine-similar to,
and duplicate detections are removed with class-wise greedy NMS on mask IoU.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InputError, ShapeError
from .rle import RleMask, mask_iou, rle_decode, rle_to_bbox
from .validation import as_f32


@dataclass
class DenseFeatureMap:
    """A [Hp, Wp, D] patch-feature grid for one image."""

    features: np.ndarray
    image_id: int
    stride: int
    width: int
    height: int

    def validate(self) -> "DenseFeatureMap":
        if self.features.ndim != 3:
            raise ShapeError("dense feature map must be [Hp, Wp, D]")
        hp = math.ceil(self.height / self.stride)
        wp = math.ceil(self.width / self.stride)
        if self.features.shape[:2] != (hp, wp):
            raise ShapeError(
                f"feature grid {self.features.shape[:2]} does not match "
                f"{self.height}x{self.width} image at stride {self.stride} "
                f"(expected {(hp, wp)})"
            )
        return self


@dataclass
class Reference:
    """One annotated reference region for a category.

    `stride` overrides the global stride when this reference's mask lives at
    a different resolution (1 for masks already on the feature grid).
    """

    category_id: int
    features: np.ndarray
    mask: RleMask
    stride: int | None = None


@dataclass
class Prototype:
    category_id: int
    vector: np.ndarray
    source_ref: int


@dataclass
class Proposal:
    """A class-agnostic candidate mask; box is the tight bound of the mask."""

    image_id: int
    mask: RleMask
    objectness: float = 0.0
    feature: np.ndarray | None = None
    box: tuple[int, int, int, int] = field(init=False)

    def __post_init__(self):
        if self.mask.area() == 0:
            raise InputError("proposal mask is empty")
        self.box = rle_to_bbox(self.mask)


@dataclass
class Detection:
    image_id: int
    category_id: int
    score: float
    box: tuple
    mask: RleMask | None = None


def grid_points(width: int, height: int, points_per_side: int) -> list[tuple[float, float]]:
    """Cell-center point grid, row-major: x = (i+0.5)*w/n, y = (j+0.5)*h/n."""
    n = int(points_per_side)
    if n < 1:
        raise InputError(f"points_per_side must be >= 1, got {n}")
    if width < 1 or height < 1:
        raise InputError(f"image size must be >= 1, got {width}x{height}")
    return [
        ((i + 0.5) * width / n, (j + 0.5) * height / n)
        for j in range(n)
        for i in range(n)
    ]


def _patch_coverage(mask: RleMask, stride: int, hp: int, wp: int) -> np.ndarray:
    """Fraction of each patch's own pixels covered by the mask, [Hp, Wp]."""
    dense = rle_decode(mask)
    h, w = dense.shape
    padded = np.zeros((hp * stride, wp * stride), dtype=np.int64)
    padded[:h, :w] = dense
    counts = padded.reshape(hp, stride, wp, stride).sum(axis=(1, 3))
    row_sizes = np.minimum(stride, h - np.arange(hp) * stride)
    col_sizes = np.minimum(stride, w - np.arange(wp) * stride)
    return counts / np.outer(row_sizes, col_sizes)


def pool_region_feature(fmap: np.ndarray, mask: RleMask, stride: int) -> np.ndarray:
    """Masked mean over patch vectors.

    A patch counts as covered when >= 50% of its pixels fall inside the mask;
    if no patch reaches that, the single patch with maximum coverage is used.
    """
    fmap = as_f32(fmap, 3, "feature map")
    hp, wp, _ = fmap.shape
    if mask.area() == 0:
        raise InputError("cannot pool an empty mask")
    if math.ceil(mask.height / stride) != hp or math.ceil(mask.width / stride) != wp:
        raise ShapeError(
            f"mask {mask.height}x{mask.width} at stride {stride} does not map onto "
            f"a {hp}x{wp} patch grid"
        )
    coverage = _patch_coverage(mask, stride, hp, wp)
    covered = coverage >= 0.5
    if not covered.any():
        covered.flat[int(np.argmax(coverage))] = True
    return fmap[covered].mean(axis=0, dtype=np.float64).astype(np.float32)


def build_prototypes(refs: list[Reference], stride: int) -> list[Prototype]:
    """One unit-norm prototype per reference; rejects degenerate references."""
    prototypes = []
    for i, ref in enumerate(refs):
        pooled = pool_region_feature(
            ref.features, ref.mask, ref.stride if ref.stride is not None else stride
        )
        norm = float(np.linalg.norm(pooled.astype(np.float64)))
        if norm == 0.0:
            raise InputError(
                f"degenerate reference: category {ref.category_id} reference {i} "
                "pooled to a zero vector"
            )
        prototypes.append(
            Prototype(
                category_id=ref.category_id,
                vector=(pooled / norm).astype(np.float32),
                source_ref=i,
            )
        )
    return prototypes


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|), clamped to [-1, 1]; zero vectors are rejected.

    The denominator is sqrt((a.a)(b.b)), so identical and opposite vectors
    land on exactly +/-1.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na2, nb2 = np.dot(a, a), np.dot(b, b)
    if na2 == 0.0 or nb2 == 0.0:
        raise InputError("cosine similarity undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / np.sqrt(na2 * nb2), -1.0, 1.0))


def match_proposals(
    proposals: list[Proposal],
    prototypes: list[Prototype],
    target_map: np.ndarray,
    stride: int,
    sim_threshold: float = 0.5,
    threads: int | None = None,
) -> list[Detection]:
    """Assign each proposal the best-matching category, or drop it.

    Per-category similarity is the max over that category's prototypes; the
    proposal takes the argmax category (ties -> lower id) with score
    (sim+1)/2, and is dropped when the best similarity is below the
    threshold. Proposal objectness is ignored for ranking.
    """
    if not prototypes:
        raise InputError("no prototypes configured for matching")
    image_ids = {p.image_id for p in proposals}
    if len(image_ids) > 1:
        raise InputError(f"proposals span multiple images: {sorted(image_ids)}")

    proto_cats = np.array([p.category_id for p in prototypes])
    categories = np.unique(proto_cats)

    def pooled(prop: Proposal) -> np.ndarray:
        if prop.feature is not None:
            return np.asarray(prop.feature, dtype=np.float64).ravel()
        return pool_region_feature(target_map, prop.mask, stride).astype(np.float64)

    if threads is not None and threads > 1 and len(proposals) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            features = list(pool.map(pooled, proposals))
    else:
        features = [pooled(p) for p in proposals]

    detections = []
    for prop, feat in zip(proposals, features):
        if not np.any(feat):
            raise InputError("proposal pooled to a zero vector")
        sims = np.array([cosine_similarity(feat, p.vector) for p in prototypes])
        best_cat, best_sim = None, -np.inf
        for cat in categories:  # ascending ids, strict > keeps the lower id on ties
            cat_sim = float(sims[proto_cats == cat].max())
            if cat_sim > best_sim:
                best_cat, best_sim = int(cat), cat_sim
        if best_sim < sim_threshold:
            continue
        detections.append(
            Detection(
                image_id=prop.image_id,
                category_id=best_cat,
                score=(best_sim + 1.0) / 2.0,
                box=prop.box,
                mask=prop.mask,
            )
        )
    return detections


def dedup(dets: list[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Class-wise greedy NMS on mask IoU.

    Candidates are visited by score descending (ties -> lower category id,
    then input order); one survives iff its IoU with every kept same-class
    detection is below the threshold.
    """
    order = sorted(
        range(len(dets)), key=lambda i: (-dets[i].score, dets[i].category_id, i)
    )
    kept: list[Detection] = []
    for i in order:
        det = dets[i]
        suppressed = any(
            k.category_id == det.category_id
            and mask_iou(det.mask, k.mask) >= iou_threshold
            for k in kept
        )
        if not suppressed:
            kept.append(det)
    return kept


class PrototypeMatcher(BaseEstimator):
    """In-context instance matcher with a fit/predict interface.

    fit() builds prototypes from annotated references; predict() labels the
    proposals of one target image and suppresses duplicates.
    """

    def __init__(self, stride=14, sim_threshold=0.5, nms_iou_threshold=0.5, threads=None):
        self.stride = stride
        self.sim_threshold = sim_threshold
        self.nms_iou_threshold = nms_iou_threshold
        self.threads = threads

    def fit(self, references: list[Reference], y=None):
        if not references:
            raise InputError("at least one reference is required")
        self.prototypes_ = build_prototypes(references, self.stride)
        return self

    def predict(self, target_map: np.ndarray, proposals: list[Proposal]) -> list[Detection]:
        if not hasattr(self, "prototypes_"):
            raise InputError("matcher is not fitted; call fit(references) first")
        matched = match_proposals(
            proposals,
            self.prototypes_,
            target_map,
            self.stride,
            sim_threshold=self.sim_threshold,
            threads=self.threads,
        )
        return dedup(matched, self.nms_iou_threshold)

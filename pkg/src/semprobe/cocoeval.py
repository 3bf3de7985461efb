"""COCO-protocol detection evaluation: AP/AP50/AP75 and AR@N, box or mask.

Follows the reference protocol: greedy score-ordered matching per image and
category, 101-point interpolated precision, IoU thresholds 0.50:0.05:0.95,
crowd regions matchable without penalty, and category means taken only over
categories that have ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ValidationError
from .matcher import Detection
from .rle import box_iou, mask_iou
from .store import AnnotationSet

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class EvalConfig:
    iou_thresholds: tuple = DEFAULT_IOU_THRESHOLDS
    recall_points: int = 101
    max_detections: int = 100
    iou_type: str = "mask"
    category_ids: list[int] | None = None

    def validate(self) -> "EvalConfig":
        t = self.iou_thresholds
        if not t or any(not (0.0 < x <= 1.0) for x in t) or any(
            t[i] >= t[i + 1] for i in range(len(t) - 1)
        ):
            raise InputError(
                f"iou_thresholds must be strictly increasing in (0, 1], got {t}"
            )
        if self.iou_type not in ("box", "mask"):
            raise InputError(f"iou_type must be 'box' or 'mask', got {self.iou_type!r}")
        if self.recall_points < 2:
            raise InputError("recall_points must be >= 2")
        if self.max_detections < 1:
            raise InputError("max_detections must be >= 1")
        return self


@dataclass
class CategoryResult:
    category_id: int
    ap: float
    ap50: float | None
    ap75: float | None
    ar: float
    num_detections: int
    num_gt: int


@dataclass
class EvalResult:
    per_category: dict[int, CategoryResult]
    ap: float | None
    ap50: float | None
    ap75: float | None
    ar: float | None
    num_detections: int
    num_gt: int

    def to_dict(self) -> dict:
        return {
            "mean": {"ap": self.ap, "ap50": self.ap50, "ap75": self.ap75, "ar": self.ar},
            "num_detections": self.num_detections,
            "num_gt": self.num_gt,
            "per_category": {
                str(cid): {
                    "ap": r.ap,
                    "ap50": r.ap50,
                    "ap75": r.ap75,
                    "ar": r.ar,
                    "num_detections": r.num_detections,
                    "num_gt": r.num_gt,
                }
                for cid, r in sorted(self.per_category.items())
            },
        }


def match_detections(dets, gts, iou_fn, threshold: float):
    """Greedy matching for one (image, category) group.

    `dets` must already be sorted by score descending. Each detection takes
    the unmatched non-crowd GT with the highest IoU >= threshold (earliest
    GT on ties); unmatched detections that overlap a crowd GT at or above
    the threshold are ignored rather than counted as false positives.

    Returns (flags, matched_gt): flags hold 1 for TP, 0 for FP, -1 for
    ignored; matched_gt holds the GT index or -1.
    """
    non_crowd = [i for i, g in enumerate(gts) if not g.iscrowd]
    crowd = [i for i, g in enumerate(gts) if g.iscrowd]
    taken = set()
    flags, matched = [], []
    for det in dets:
        best, best_iou = -1, None
        for gi in non_crowd:
            if gi in taken:
                continue
            iou = iou_fn(det, gts[gi], False)
            if iou >= threshold and (best_iou is None or iou > best_iou):
                best, best_iou = gi, iou
        if best >= 0:
            taken.add(best)
            flags.append(1)
            matched.append(best)
            continue
        ignored = any(iou_fn(det, gts[gi], True) >= threshold for gi in crowd)
        flags.append(-1 if ignored else 0)
        matched.append(-1)
    return flags, matched


def average_precision(flags, num_gt: int, recall_points: int = 101) -> float:
    """101-point interpolated AP from pooled, score-ordered TP/FP flags.

    The precision envelope (running max from the right) is sampled at
    equally spaced recall values; samples beyond the attained recall
    contribute zero. Ignored flags (-1) are skipped.
    """
    if num_gt == 0:
        return 0.0
    kept = [f for f in flags if f >= 0]
    if not kept:
        return 0.0
    arr = np.asarray(kept)
    tp = np.cumsum(arr == 1)
    fp = np.cumsum(arr == 0)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    points = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, points, side="left")
    sampled = np.zeros(recall_points, dtype=np.float64)
    valid = idx < len(recall)
    sampled[valid] = envelope[idx[valid]]
    return float(np.mean(sampled))


def _det_key(entry):
    # (score desc, image_id, per-image input index): the deterministic pooled order
    return (-entry[0], entry[1], entry[2])


def _iou_callable(iou_type: str):
    if iou_type == "box":
        def fn(det, gt, crowd):
            return box_iou(det.box, gt.bbox, crowd_b=crowd)
    else:
        def fn(det, gt, crowd):
            if det.mask is None:
                raise ValidationError("detection has no mask but iou_type is 'mask'")
            if gt.segmentation is None:
                raise ValidationError(
                    f"annotation {gt.id} has no mask but iou_type is 'mask'"
                )
            return mask_iou(det.mask, gt.segmentation, crowd_b=crowd)
    return fn


def evaluate(dets: list[Detection], gts: AnnotationSet, config: EvalConfig | None = None) -> EvalResult:
    """Full evaluation over every category; deterministic for fixed inputs."""
    config = (config or EvalConfig()).validate()
    categories = config.category_ids if config.category_ids is not None else gts.category_ids()
    cat_set = set(categories)
    image_ids = {im.id for im in gts.images}

    unknown_cats = sorted({d.category_id for d in dets} - set(gts.category_ids()))
    if unknown_cats:
        raise ValidationError(f"detections use unknown category ids {unknown_cats}")
    unknown_imgs = sorted({d.image_id for d in dets} - image_ids)
    if unknown_imgs:
        raise ValidationError(f"detections reference unknown image ids {unknown_imgs}")

    # Top max_detections per image by score (ties keep input order).
    by_image: dict[int, list[tuple[float, int, Detection]]] = {}
    for i, det in enumerate(dets):
        by_image.setdefault(det.image_id, []).append((det.score, i, det))
    kept: dict[tuple[int, int], list[tuple[float, int, Detection]]] = {}
    for img, entries in by_image.items():
        entries.sort(key=lambda e: (-e[0], e[1]))
        for rank, (score, _, det) in enumerate(entries[: config.max_detections]):
            kept.setdefault((img, det.category_id), []).append((score, rank, det))

    gts_by = {}
    for ann in gts.annotations:
        gts_by.setdefault((ann.image_id, ann.category_id), []).append(ann)

    iou_fn = _iou_callable(config.iou_type)
    thresholds = tuple(config.iou_thresholds)
    per_category: dict[int, CategoryResult] = {}
    total_dets = 0
    total_gt = 0

    for cat in categories:
        num_gt = sum(
            sum(1 for g in group if not g.iscrowd)
            for (img, c), group in gts_by.items()
            if c == cat and img in image_ids
        )
        images_involved = sorted(
            {img for (img, c) in kept if c == cat} | {img for (img, c) in gts_by if c == cat}
        )
        aps, recalls = [], []
        cat_n_dets = sum(len(kept.get((img, cat), [])) for img in images_involved)
        for thr in thresholds:
            pooled = []
            n_matched = 0
            for img in images_involved:
                group = kept.get((img, cat), [])
                group_dets = [d for (_, _, d) in group]
                flags, _ = match_detections(
                    group_dets, gts_by.get((img, cat), []), iou_fn, thr
                )
                n_matched += sum(1 for f in flags if f == 1)
                pooled.extend(
                    (score, img, rank, flag)
                    for (score, rank, _), flag in zip(group, flags)
                )
            pooled.sort(key=lambda e: _det_key((e[0], e[1], e[2])))
            aps.append(
                average_precision([f for (_, _, _, f) in pooled], num_gt, config.recall_points)
            )
            recalls.append(n_matched / num_gt if num_gt > 0 else 0.0)

        def _at(thr_value):
            return (
                aps[thresholds.index(thr_value)] if thr_value in thresholds else None
            )

        per_category[cat] = CategoryResult(
            category_id=cat,
            ap=float(np.mean(aps)),
            ap50=_at(0.5),
            ap75=_at(0.75),
            ar=float(np.mean(recalls)),
            num_detections=cat_n_dets,
            num_gt=num_gt,
        )
        total_dets += cat_n_dets
        total_gt += num_gt

    with_gt = [r for r in per_category.values() if r.num_gt > 0]

    def _mean(getter):
        vals = [getter(r) for r in with_gt]
        if not vals or any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    return EvalResult(
        per_category=per_category,
        ap=_mean(lambda r: r.ap),
        ap50=_mean(lambda r: r.ap50),
        ap75=_mean(lambda r: r.ap75),
        ar=_mean(lambda r: r.ar),
        num_detections=total_dets,
        num_gt=total_gt,
    )


@dataclass
class SplitRow:
    name: str
    category_ids: list[int]
    num_evaluated: int
    ap: float | None
    ap50: float | None
    ap75: float | None
    ar: float | None


def split_report(result: EvalResult, base_ids, novel_ids) -> dict[str, SplitRow]:
    """Aggregate per-category results into disjoint BASE and NOVEL rows."""
    base_ids, novel_ids = list(base_ids), list(novel_ids)
    shared = sorted(set(base_ids) & set(novel_ids))
    if shared:
        raise InputError(f"base and novel splits share category ids {shared}")

    def row(name, ids):
        rows = [
            result.per_category[c]
            for c in ids
            if c in result.per_category and result.per_category[c].num_gt > 0
        ]
        def m(getter):
            vals = [getter(r) for r in rows]
            if not vals or any(v is None for v in vals):
                return None
            return float(np.mean(vals))
        return SplitRow(
            name=name,
            category_ids=list(ids),
            num_evaluated=len(rows),
            ap=m(lambda r: r.ap),
            ap50=m(lambda r: r.ap50),
            ap75=m(lambda r: r.ap75),
            ar=m(lambda r: r.ar),
        )

    return {"base": row("BASE", base_ids), "novel": row("NOVEL", novel_ids)}


def format_table(result: EvalResult, iou_type: str) -> str:
    """Human-readable summary; metrics reported x100."""
    def pct(v):
        return f"{100.0 * v:6.1f}" if v is not None else "   n/a"

    lines = [
        f"{'metric':<10}{'value':>8}",
        f"{'AP_' + iou_type:<10}{pct(result.ap):>8}",
        f"{'AP50_' + iou_type:<10}{pct(result.ap50):>8}",
        f"{'AP75_' + iou_type:<10}{pct(result.ap75):>8}",
        f"{'AR_' + iou_type:<10}{pct(result.ar):>8}",
        f"detections: {result.num_detections}  ground truth: {result.num_gt}  "
        f"categories with GT: {sum(1 for r in result.per_category.values() if r.num_gt > 0)}",
    ]
    return "\n".join(lines)

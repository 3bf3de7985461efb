"""Seeded synthetic fixtures and naive reference implementations.

Everything here exists so the numerical paths can be exercised without any
pretrained encoder: Gaussian blob features for probing, planted scenes for
the matcher, and deliberately slow oracle implementations of NMS, matching,
and AP/AR that share no logic with the optimized modules.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .matcher import Detection, DenseFeatureMap, Proposal, Reference
from .rle import RleMask, rle_decode, rle_encode
from .store import Annotation, AnnotationSet, Category, FeatureMatrix, ImageInfo, LabelVector


@dataclass
class BlobSpec:
    num_classes: int = 10
    dim: int = 64
    per_class: int = 500
    separation: float = 6.0
    seed: int = 0

    def validate(self) -> "BlobSpec":
        if self.num_classes < 2:
            raise InputError("need at least 2 classes")
        if self.separation < 0:
            raise InputError("separation must be >= 0")
        if self.dim < self.num_classes:
            raise InputError(
                f"dim must be >= num_classes to place orthogonal means, "
                f"got dim={self.dim} < {self.num_classes}"
            )
        if self.per_class < 1:
            raise InputError("per_class must be >= 1")
        return self


def gen_blobs(spec: BlobSpec) -> tuple[FeatureMatrix, LabelVector]:
    """Isotropic unit-variance Gaussian clusters.

    Class c's mean sits at `separation` along axis c, so distinct means are
    separation*sqrt(2) apart; separation 0 collapses every class onto one
    cloud (class-blind data).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    c, d, n = spec.num_classes, spec.dim, spec.num_classes * spec.per_class
    means = np.zeros((c, d))
    means[np.arange(c), np.arange(c)] = spec.separation
    labels = np.repeat(np.arange(c, dtype=np.int64), spec.per_class)
    features = means[labels] + rng.standard_normal((n, d))
    order = rng.permutation(n)
    fm = FeatureMatrix(
        features=features[order].astype(np.float32),
        ids=np.arange(n, dtype=np.int64),
    ).validate()
    lv = LabelVector(labels=labels[order], num_classes=c).validate()
    return fm, lv


@dataclass
class PlantedSceneSpec:
    width: int = 224
    height: int = 224
    stride: int = 14
    dim: int = 128
    num_categories: int = 3
    num_objects: int = 6
    num_distractors: int = 4
    noise_sigma: float = 0.1
    seed: int = 0
    max_rect_patches: int = 3

    def validate(self) -> "PlantedSceneSpec":
        if self.num_categories < 1:
            raise InputError("need at least 1 category")
        if self.num_objects < 0 or self.num_distractors < 0:
            raise InputError("object/distractor counts must be >= 0")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be >= 0")
        return self


@dataclass
class PlantedScene:
    feature_map: DenseFeatureMap
    references: list[Reference]
    annotations: AnnotationSet
    proposals: list[Proposal]
    prototypes: np.ndarray
    object_categories: list[int]


def _rect_mask(h: int, w: int, y0: int, y1: int, x0: int, x1: int) -> RleMask:
    dense = np.zeros((h, w), dtype=bool)
    dense[y0:y1, x0:x1] = True
    return rle_encode(dense)


def _place_rects(rng, hp, wp, count, max_side, occupied):
    """Sample non-overlapping patch-grid rectangles; raises when infeasible."""
    rects = []
    for _ in range(count):
        for _attempt in range(1000):
            rh = int(rng.integers(1, max_side + 1))
            rw = int(rng.integers(1, max_side + 1))
            if rh > hp or rw > wp:
                continue
            py = int(rng.integers(0, hp - rh + 1))
            px = int(rng.integers(0, wp - rw + 1))
            if occupied[py : py + rh, px : px + rw].any():
                continue
            occupied[py : py + rh, px : px + rw] = True
            rects.append((py, px, rh, rw))
            break
        else:
            raise InputError(
                f"could not place {count} non-overlapping rectangles on a "
                f"{hp}x{wp} patch grid"
            )
    return rects


def gen_planted_scene(spec: PlantedSceneSpec) -> PlantedScene:
    """A target scene with planted objects plus matching references and GT.

    Background patches are normalized Gaussian noise; each object's patches
    are its category prototype plus N(0, sigma^2) noise. Proposals are the
    exact object masks plus distractor rectangles over pure background.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    hp = -(-spec.height // spec.stride)
    wp = -(-spec.width // spec.stride)

    protos = rng.standard_normal((spec.num_categories, spec.dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    background = rng.standard_normal((hp, wp, spec.dim))
    background /= np.linalg.norm(background, axis=2, keepdims=True)
    fmap = background.copy()

    occupied = np.zeros((hp, wp), dtype=bool)
    object_rects = _place_rects(rng, hp, wp, spec.num_objects, spec.max_rect_patches, occupied)
    distractor_rects = _place_rects(
        rng, hp, wp, spec.num_distractors, spec.max_rect_patches, occupied
    )

    categories = [i % spec.num_categories for i in range(spec.num_objects)]
    for (py, px, rh, rw), cat in zip(object_rects, categories):
        noise = rng.normal(scale=spec.noise_sigma, size=(rh, rw, spec.dim))
        fmap[py : py + rh, px : px + rw] = protos[cat] + noise

    def pixel_rect(py, px, rh, rw):
        y0, x0 = py * spec.stride, px * spec.stride
        y1 = min((py + rh) * spec.stride, spec.height)
        x1 = min((px + rw) * spec.stride, spec.width)
        return y0, y1, x0, x1

    image_id = 1
    annotations, proposals = [], []
    for i, ((py, px, rh, rw), cat) in enumerate(zip(object_rects, categories)):
        y0, y1, x0, x1 = pixel_rect(py, px, rh, rw)
        mask = _rect_mask(spec.height, spec.width, y0, y1, x0, x1)
        annotations.append(
            Annotation(
                id=i + 1,
                image_id=image_id,
                category_id=cat + 1,
                bbox=(float(x0), float(y0), float(x1 - x0), float(y1 - y0)),
                segmentation=mask,
            )
        )
        proposals.append(
            Proposal(image_id=image_id, mask=mask, objectness=float(rng.uniform(0.5, 1.0)))
        )
    for py, px, rh, rw in distractor_rects:
        y0, y1, x0, x1 = pixel_rect(py, px, rh, rw)
        mask = _rect_mask(spec.height, spec.width, y0, y1, x0, x1)
        proposals.append(
            Proposal(image_id=image_id, mask=mask, objectness=float(rng.uniform(0.0, 0.5)))
        )

    # One clean reference per category: an 8x8-patch image holding a 2x2 object.
    ref_hp = ref_wp = 8
    references = []
    for cat in range(spec.num_categories):
        ref_map = rng.standard_normal((ref_hp, ref_wp, spec.dim))
        ref_map /= np.linalg.norm(ref_map, axis=2, keepdims=True)
        noise = rng.normal(scale=spec.noise_sigma, size=(2, 2, spec.dim))
        ref_map[3:5, 3:5] = protos[cat] + noise
        ref_mask = _rect_mask(
            ref_hp * spec.stride, ref_wp * spec.stride,
            3 * spec.stride, 5 * spec.stride, 3 * spec.stride, 5 * spec.stride,
        )
        references.append(
            Reference(
                category_id=cat + 1,
                features=ref_map.astype(np.float32),
                mask=ref_mask,
                stride=spec.stride,
            )
        )

    anns = AnnotationSet(
        images=[ImageInfo(id=image_id, width=spec.width, height=spec.height)],
        annotations=annotations,
        categories=[Category(id=c + 1, name=f"category_{c + 1}") for c in range(spec.num_categories)],
    )
    feature_map = DenseFeatureMap(
        features=fmap.astype(np.float32),
        image_id=image_id,
        stride=spec.stride,
        width=spec.width,
        height=spec.height,
    ).validate()
    return PlantedScene(
        feature_map=feature_map,
        references=references,
        annotations=anns,
        proposals=proposals,
        prototypes=protos.astype(np.float32),
        object_categories=[c + 1 for c in categories],
    )


# ---------------------------------------------------------------------------
# Brute-force oracles. These decode masks to pixels and loop explicitly; they
# exist only to cross-check the optimized implementations in tests.
# ---------------------------------------------------------------------------


def oracle_pixel_iou(a: RleMask, b: RleMask, crowd_b: bool = False) -> float:
    da, db = rle_decode(a), rle_decode(b)
    inter = int(np.logical_and(da, db).sum())
    denom = int(da.sum()) if crowd_b else int(da.sum()) + int(db.sum()) - inter
    return 0.0 if denom == 0 else inter / denom


def oracle_box_iou(a, b, crowd_b: bool = False) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    denom = aw * ah if crowd_b else aw * ah + bw * bh - inter
    return 0.0 if denom <= 0 else min(1.0, inter / denom)


def oracle_nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Quadratic class-wise NMS over decoded pixel masks."""
    order = sorted(
        range(len(dets)), key=lambda i: (-dets[i].score, dets[i].category_id, i)
    )
    kept_idx: list[int] = []
    for i in order:
        ok = True
        for j in kept_idx:
            if dets[j].category_id != dets[i].category_id:
                continue
            if oracle_pixel_iou(dets[i].mask, dets[j].mask) >= iou_threshold:
                ok = False
                break
        if ok:
            kept_idx.append(i)
    return [dets[i] for i in kept_idx]


def _oracle_iou(det: Detection, ann: Annotation, iou_type: str, crowd: bool) -> float:
    if iou_type == "box":
        return oracle_box_iou(det.box, ann.bbox, crowd_b=crowd)
    return oracle_pixel_iou(det.mask, ann.segmentation, crowd_b=crowd)


def oracle_match_flags(dets, gts, iou_type: str, threshold: float):
    """Greedy matching flags for one (image, category) group, from scratch."""
    taken = [False] * len(gts)
    flags = []
    for det in dets:
        best, best_iou = -1, -1.0
        for gi, gt in enumerate(gts):
            if gt.iscrowd or taken[gi]:
                continue
            iou = _oracle_iou(det, gt, iou_type, False)
            if iou >= threshold and iou > best_iou:
                best, best_iou = gi, iou
        if best >= 0:
            taken[best] = True
            flags.append(1)
            continue
        crowd_hit = False
        for gi, gt in enumerate(gts):
            if gt.iscrowd and _oracle_iou(det, gt, iou_type, True) >= threshold:
                crowd_hit = True
                break
        flags.append(-1 if crowd_hit else 0)
    return flags


def _oracle_ap(flag_score_list, num_gt: int, recall_points: int) -> float:
    if num_gt == 0:
        return 0.0
    flags = [f for f, _ in flag_score_list if f >= 0]
    if not flags:
        return 0.0
    precisions, recalls = [], []
    tp = fp = 0
    for f in flags:
        if f == 1:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / num_gt)
    env = precisions[:]
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    sampled = []
    for r in np.linspace(0.0, 1.0, recall_points):  # the protocol's sample grid
        hit = 0.0
        for i, rec in enumerate(recalls):
            if rec >= r:
                hit = env[i]
                break
        sampled.append(hit)
    return float(np.mean(sampled))


def oracle_match_ap(dets: list[Detection], gts: AnnotationSet, iou_type: str,
                    iou_thresholds=None, max_detections: int = 100,
                    recall_points: int = 101) -> dict:
    """Definitional AP/AR over all categories; mirrors the protocol contract
    sentence by sentence without touching the optimized evaluator."""
    if iou_thresholds is None:
        iou_thresholds = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

    per_image: dict[int, list[Detection]] = {}
    for det in dets:
        per_image.setdefault(det.image_id, []).append(det)
    truncated: dict[int, list[Detection]] = {}
    for img, group in per_image.items():
        idx = sorted(range(len(group)), key=lambda i: (-group[i].score, i))
        truncated[img] = [group[i] for i in idx[:max_detections]]

    result: dict = {"per_category": {}}
    cat_ids = [c.id for c in gts.categories]
    means = {"ap": [], "ap50": [], "ap75": [], "ar": []}
    for cat in cat_ids:
        gt_groups: dict[int, list[Annotation]] = {}
        for ann in gts.annotations:
            if ann.category_id == cat:
                gt_groups.setdefault(ann.image_id, []).append(ann)
        num_gt = sum(
            1 for anns in gt_groups.values() for a in anns if not a.iscrowd
        )
        det_groups: dict[int, list[Detection]] = {}
        for img, group in truncated.items():
            cat_dets = [d for d in group if d.category_id == cat]
            if cat_dets:
                det_groups[img] = cat_dets
        images = sorted(set(det_groups) | set(gt_groups))
        aps, recalls = [], []
        for thr in iou_thresholds:
            pooled = []
            matched = 0
            for img in images:
                group = det_groups.get(img, [])
                flags = oracle_match_flags(group, gt_groups.get(img, []), iou_type, thr)
                matched += sum(1 for f in flags if f == 1)
                pooled.extend(
                    (d.score, img, k, f) for k, (d, f) in enumerate(zip(group, flags))
                )
            pooled.sort(key=lambda e: (-e[0], e[1], e[2]))
            aps.append(_oracle_ap([(f, s) for (s, _, _, f) in pooled], num_gt, recall_points))
            recalls.append(matched / num_gt if num_gt else 0.0)
        entry = {
            "ap": float(np.mean(aps)),
            "ap50": aps[list(iou_thresholds).index(0.5)] if 0.5 in iou_thresholds else None,
            "ap75": aps[list(iou_thresholds).index(0.75)] if 0.75 in iou_thresholds else None,
            "ar": float(np.mean(recalls)),
            "num_gt": num_gt,
        }
        result["per_category"][cat] = entry
        if num_gt > 0:
            for key in means:
                means[key].append(entry[key])
    for key, vals in means.items():
        result[key] = float(np.mean(vals)) if vals else None
    return result

"""Shared random-instance builders for the oracle-equivalence suites."""
from __future__ import annotations

import numpy as np

from semprobe.matcher import Detection
from semprobe.rle import rle_encode
from semprobe.store import Annotation, AnnotationSet, Category, ImageInfo


def random_mask(rng, height, width):
    """A random non-empty rectangle-plus-noise mask."""
    dense = rng.random((height, width)) < rng.uniform(0.05, 0.5)
    y0, x0 = rng.integers(0, height - 1), rng.integers(0, width - 1)
    y1 = rng.integers(y0 + 1, height + 1)
    x1 = rng.integers(x0 + 1, width + 1)
    dense[y0:y1, x0:x1] = True
    return rle_encode(dense)


def random_box(rng, height, width):
    x = float(rng.uniform(0, width - 2))
    y = float(rng.uniform(0, height - 2))
    w = float(rng.uniform(1, width - x))
    h = float(rng.uniform(1, height - y))
    return (x, y, w, h)


def random_eval_instance(seed, max_images=10, max_dets=10, max_gts=10,
                         num_categories=3, size=24, crowd_prob=0.2):
    """A random (detections, annotations) pair for protocol cross-checks."""
    rng = np.random.default_rng(seed)
    n_images = int(rng.integers(1, max_images + 1))
    images = [ImageInfo(id=i + 1, width=size, height=size) for i in range(n_images)]
    categories = [Category(id=c + 1, name=f"c{c + 1}") for c in range(num_categories)]

    annotations = []
    ann_id = 0
    for im in images:
        for _ in range(int(rng.integers(0, max_gts + 1))):
            ann_id += 1
            mask = random_mask(rng, size, size)
            x, y, w, h = random_box(rng, size, size)
            annotations.append(
                Annotation(
                    id=ann_id,
                    image_id=im.id,
                    category_id=int(rng.integers(1, num_categories + 1)),
                    bbox=(x, y, w, h),
                    segmentation=mask,
                    iscrowd=bool(rng.random() < crowd_prob),
                )
            )

    detections = []
    for im in images:
        for _ in range(int(rng.integers(0, max_dets + 1))):
            # bias some detections toward real GT regions so TPs exist
            if annotations and rng.random() < 0.5:
                src = annotations[int(rng.integers(0, len(annotations)))]
                mask, box = src.segmentation, src.bbox
            else:
                mask = random_mask(rng, size, size)
                box = random_box(rng, size, size)
            detections.append(
                Detection(
                    image_id=im.id,
                    category_id=int(rng.integers(1, num_categories + 1)),
                    score=float(rng.random()),
                    box=box,
                    mask=mask,
                )
            )
    gts = AnnotationSet(images=images, annotations=annotations, categories=categories)
    return detections, gts

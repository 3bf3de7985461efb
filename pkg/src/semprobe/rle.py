"""Run-length-encoded binary masks and the IoU math built on them.

Masks are encoded column-major (Fortran order): ``counts`` holds alternating
run lengths of 0s then 1s, always starting with the 0-run (which may be 0).
All IoU computations work directly on the run lists; decoding exists for
tests and for consumers that need a dense bitmap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError, ShapeError, ValidationError


@dataclass(frozen=True)
class RleMask:
    height: int
    width: int
    counts: tuple[int, ...]

    def __init__(self, height: int, width: int, counts) -> None:
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "counts", tuple(int(c) for c in counts))

    def validate(self) -> "RleMask":
        """Check the run list is canonical for the declared size."""
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"mask size {self.height}x{self.width} invalid")
        if any(c < 0 for c in self.counts):
            raise ValidationError("negative run length")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise ValidationError(
                f"run lengths sum to {total}, expected {self.height * self.width}"
            )
        if any(c == 0 for c in self.counts[1:]):
            raise ValidationError("zero-length run after the first count")
        return self

    def area(self) -> int:
        """Number of 1-pixels (sum of the odd-indexed runs)."""
        return int(sum(self.counts[1::2]))

    def to_dict(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, obj: dict) -> "RleMask":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed RLE object: {exc}") from exc
        return cls(h, w, counts).validate()


def rle_encode(bitmask: np.ndarray) -> RleMask:
    """Encode a 2-D binary array, traversed column-major."""
    mask = np.asarray(bitmask)
    if mask.ndim != 2:
        raise ShapeError(f"bitmask must be 2-D, got {mask.ndim}-D")
    h, w = mask.shape
    if h < 1 or w < 1:
        raise InputError(f"mask dimensions must be >= 1, got {h}x{w}")
    flat = np.ravel(mask != 0, order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return RleMask(h, w, runs)


def rle_decode(rle: RleMask) -> np.ndarray:
    """Decode to a 2-D bool array; inverse of :func:`rle_encode`."""
    total = sum(rle.counts)
    if total != rle.height * rle.width:
        raise FormatError(
            f"run lengths sum to {total}, expected {rle.height * rle.width}"
        )
    values = np.arange(len(rle.counts)) % 2 == 1
    flat = np.repeat(values, rle.counts)
    return flat.reshape((rle.height, rle.width), order="F")


def _one_run_spans(rle: RleMask) -> tuple[np.ndarray, np.ndarray]:
    """Half-open [start, end) pixel spans of the 1-runs, column-major index."""
    counts = np.asarray(rle.counts, dtype=np.int64)
    ends = np.cumsum(counts)
    starts = ends - counts
    return starts[1::2], ends[1::2]


def rle_to_bbox(rle: RleMask) -> tuple[int, int, int, int]:
    """Tight [x, y, w, h] bounds of the 1-pixels.

    Works on the run list: a run confined to one column bounds rows by its
    offsets; a run crossing a column boundary necessarily touches rows 0 and
    height-1.
    """
    starts, ends = _one_run_spans(rle)
    keep = ends > starts
    starts, ends = starts[keep], ends[keep]
    if starts.size == 0:
        raise InputError("empty mask has no bounding box")
    h = rle.height
    col_first = starts // h
    col_last = (ends - 1) // h
    xmin = int(col_first.min())
    xmax = int(col_last.max())
    single = col_first == col_last
    ymin, ymax = h - 1, 0
    if np.any(~single):
        ymin, ymax = 0, h - 1
    if np.any(single):
        ymin = min(ymin, int((starts[single] % h).min()))
        ymax = max(ymax, int(((ends[single] - 1) % h).max()))
    return (xmin, ymin, xmax - xmin + 1, ymax - ymin + 1)


def _run_intersection(a: RleMask, b: RleMask) -> int:
    sa, ea = _one_run_spans(a)
    sb, eb = _one_run_spans(b)
    ia = ib = 0
    inter = 0
    while ia < len(sa) and ib < len(sb):
        lo = max(sa[ia], sb[ib])
        hi = min(ea[ia], eb[ib])
        if hi > lo:
            inter += int(hi - lo)
        if ea[ia] <= eb[ib]:
            ia += 1
        else:
            ib += 1
    return inter


def mask_iou(a: RleMask, b: RleMask, crowd_b: bool = False) -> float:
    """IoU of two masks of equal size, computed on the run lists.

    With ``crowd_b`` the denominator is the area of `a` (COCO crowd rule:
    the crowd region `b` is allowed to cover `a` without penalty).
    """
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeError(
            f"mask sizes differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    inter = _run_intersection(a, b)
    if crowd_b:
        denom = a.area()
    else:
        denom = a.area() + b.area() - inter
    if denom == 0:
        return 0.0
    return inter / denom


def box_iou(a, b, crowd_b: bool = False) -> float:
    """IoU of two [x, y, w, h] boxes; 0 when the union is empty."""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    if aw < 0 or ah < 0 or bw < 0 or bh < 0:
        raise InputError("box width/height must be >= 0")
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    inter = max(0.0, iw) * max(0.0, ih)
    if crowd_b:
        denom = aw * ah
    else:
        denom = aw * ah + bw * bh - inter
    if denom <= 0:
        return 0.0
    return min(1.0, inter / denom)  # rounding can push identical boxes past 1

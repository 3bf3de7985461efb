"""Image loading and the class-folder dataset layout.

A dataset directory holds one subdirectory per class; class ids follow the
sorted subdirectory names, images the sorted file names within each. This
is the plain ImageNet-style layout.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ExtractError

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}


def load_image(path, resolution: int) -> np.ndarray:
    """RGB uint8 array resized (bicubic) to resolution x resolution."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((resolution, resolution), Image.BICUBIC)
            return np.asarray(im, dtype=np.uint8)
    except OSError as exc:
        raise ExtractError(f"cannot read image {path}: {exc}") from exc


def scan_class_folders(data_dir, limit_per_class: int | None = None):
    """Returns (paths, labels, class_names) for a class-subfolder dataset."""
    root = Path(data_dir)
    if not root.is_dir():
        raise ExtractError(f"dataset directory {root} does not exist")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ExtractError(f"{root} contains no class subdirectories")
    paths, labels, names = [], [], []
    for label, cdir in enumerate(class_dirs):
        names.append(cdir.name)
        files = sorted(
            p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
        if limit_per_class is not None:
            files = files[:limit_per_class]
        paths.extend(files)
        labels.extend([label] * len(files))
    if not paths:
        raise ExtractError(f"{root} contains no images")
    return paths, np.asarray(labels, dtype=np.int64), names

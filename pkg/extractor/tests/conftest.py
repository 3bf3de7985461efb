"""Shared fixtures: tiny images and checkpoint-availability probes."""
import numpy as np
import pytest
from PIL import Image


def save_png(path, array):
    Image.fromarray(array.astype(np.uint8)).save(path)


@pytest.fixture()
def scene_images(tmp_path):
    """A 64x64 target with a red and a blue patch-aligned square, plus one
    reference image per color. Returns paths and the ground-truth rects."""
    rng = np.random.default_rng(0)

    def gray(shape):
        return rng.integers(100, 140, size=shape).astype(np.uint8)

    target = gray((64, 64, 3))
    target[8:24, 8:24] = (220, 30, 30)
    target[40:56, 40:56] = (30, 30, 220)
    ref_red = gray((64, 64, 3))
    ref_red[16:32, 32:48] = (220, 30, 30)
    ref_blue = gray((64, 64, 3))
    ref_blue[32:48, 8:24] = (30, 30, 220)

    paths = {
        "target": tmp_path / "target.png",
        "ref_red": tmp_path / "ref_red.png",
        "ref_blue": tmp_path / "ref_blue.png",
    }
    save_png(paths["target"], target)
    save_png(paths["ref_red"], ref_red)
    save_png(paths["ref_blue"], ref_blue)
    rects = {
        "target_red": (8, 24, 8, 24),
        "target_blue": (40, 56, 40, 56),
        "ref_red": (16, 32, 32, 48),
        "ref_blue": (32, 48, 8, 24),
    }
    return paths, rects


def rect_mask_dict(h, w, y0, y1, x0, x1):
    mask = np.zeros((h, w), dtype=bool)
    mask[y0:y1, x0:x1] = True
    from xtract.tnsr import rle_encode_mask

    return rle_encode_mask(mask)


def checkpoint_cached(checkpoint: str) -> bool:
    """True when the HF processor config for `checkpoint` is cached locally."""
    try:
        from transformers import AutoImageProcessor

        AutoImageProcessor.from_pretrained(checkpoint, local_files_only=True)
        return True
    except Exception:
        return False

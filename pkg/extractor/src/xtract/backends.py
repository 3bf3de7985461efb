"""Encoder backends.

Every backend exposes the same small surface: batched global embeddings,
a dense patch-feature map for one image, and (for promptable segmenters)
per-point mask proposals. Real models are loaded strictly from the local
cache; a missing checkpoint raises with download instructions rather than
substituting anything.

The `toy` backend is a deterministic numpy-only encoder for exercising the
export pipeline and file formats without any checkpoint. It is selected
only by explicit request.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import CheckpointError, ExtractError


def _require_local(loader, checkpoint: str, what: str):
    try:
        return loader(checkpoint)
    except (OSError, ValueError) as exc:
        raise CheckpointError(
            f"{what} checkpoint '{checkpoint}' is not available locally. "
            f"Download it first, e.g.:\n"
            f"    huggingface-cli download {checkpoint}\n"
            f"and re-run with the cache populated. No substitute model is used."
        ) from exc


class ToyEncoder:
    """Seeded patch-statistics encoder (no weights, no torch).

    Each patch is summarized by channel means/std and its grid position,
    then projected through a fixed random matrix. Useful for format and
    pipeline tests only; the manifest records it as such.
    """

    name = "toy"
    checkpoint = "builtin:toy-v1"
    global_resolution = 64
    dense_resolution = 64
    patch_size = 8
    dim = 32
    global_rule = "mean_patch(toy)"
    dense_rule = "patch_stats(toy)"

    def __init__(self):
        rng = np.random.default_rng(12345)
        self._proj = rng.standard_normal((7, self.dim)).astype(np.float32)

    def dense_map(self, image: np.ndarray) -> np.ndarray:
        if image.ndim != 3 or image.shape[2] != 3:
            raise ExtractError(f"expected [H, W, 3] image, got {image.shape}")
        r = image.shape[0]
        if r % self.patch_size:
            raise ExtractError(f"image side {r} not divisible by patch {self.patch_size}")
        grid = r // self.patch_size
        x = image.astype(np.float32) / 255.0
        patches = x.reshape(grid, self.patch_size, grid, self.patch_size, 3)
        # center on mid-gray so achromatic regions sit near the origin and
        # cosine similarity separates hues instead of brightness
        means = patches.mean(axis=(1, 3)) - 0.5
        stds = patches.std(axis=(1, 3)).mean(axis=2, keepdims=True)
        ys, xs = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
        # position gets little weight and a shared bias anchors flat regions,
        # so cosine similarity separates hues rather than brightness or place
        pos = 0.05 * np.stack([ys / grid, xs / grid], axis=2).astype(np.float32)
        bias = np.full((grid, grid, 1), 0.5, dtype=np.float32)
        stats = np.concatenate([means, stds, pos, bias], axis=2)
        return np.tanh(stats @ self._proj).astype(np.float32)

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        return np.stack([self.dense_map(im).mean(axis=(0, 1)) for im in images])

    def propose_masks(self, image: np.ndarray, points):
        r = image.shape[0]
        half = max(2, r // 10)
        out = []
        for x, y in points:
            mask = np.zeros((r, r), dtype=bool)
            y0, y1 = max(0, int(y) - half), min(r, int(y) + half)
            x0, x1 = max(0, int(x) - half), min(r, int(x) + half)
            mask[y0:y1, x0:x1] = True
            seed = hashlib.sha256(f"{x:.3f},{y:.3f}".encode()).digest()
            objectness = int.from_bytes(seed[:4], "little") / 2**32
            out.append((mask, float(objectness)))
        return out


class _HfVisionEncoder:
    """Shared plumbing for transformers-based encoders."""

    def __init__(self, checkpoint: str):
        self.checkpoint = checkpoint
        self._model = None
        self._processor = None

    def _load(self):
        raise NotImplementedError

    def _ensure(self):
        if self._model is None:
            self._load()

    def _pixel_values(self, images: np.ndarray):
        import torch

        self._ensure()
        # images come pre-resized; hand the processor raw uint8 RGB arrays
        inputs = self._processor(images=list(images), return_tensors="pt",
                                 do_resize=False)
        return inputs["pixel_values"].to(torch.float32)


class Dinov2Encoder(_HfVisionEncoder):
    name = "dinov2"
    global_resolution = 224
    dense_resolution = 518
    patch_size = 14
    global_rule = "cls_token"
    dense_rule = "last_layer_patches"

    def __init__(self, checkpoint: str = "facebook/dinov2-base"):
        super().__init__(checkpoint)

    def _load(self):
        from transformers import AutoImageProcessor, Dinov2Model

        self._processor = _require_local(
            lambda c: AutoImageProcessor.from_pretrained(c, local_files_only=True),
            self.checkpoint, "DINOv2 processor",
        )
        self._model = _require_local(
            lambda c: Dinov2Model.from_pretrained(c, local_files_only=True),
            self.checkpoint, "DINOv2",
        ).eval()

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        import torch

        with torch.no_grad():
            out = self._model(pixel_values=self._pixel_values(images))
        return out.last_hidden_state[:, 0].cpu().numpy().astype(np.float32)

    def dense_map(self, image: np.ndarray) -> np.ndarray:
        import torch

        r = image.shape[0]
        grid = r // self.patch_size
        with torch.no_grad():
            out = self._model(pixel_values=self._pixel_values(image[None]))
        patches = out.last_hidden_state[0, 1:]  # drop CLS
        return (
            patches.reshape(grid, grid, -1).cpu().numpy().astype(np.float32)
        )


class ClipEncoder(_HfVisionEncoder):
    name = "clip"
    global_resolution = 224
    dense_resolution = 224
    patch_size = 32
    global_rule = "pooled_cls"
    dense_rule = "last_layer_patches"

    def __init__(self, checkpoint: str = "openai/clip-vit-base-patch32"):
        super().__init__(checkpoint)

    def _load(self):
        from transformers import AutoImageProcessor, CLIPVisionModel

        self._processor = _require_local(
            lambda c: AutoImageProcessor.from_pretrained(c, local_files_only=True),
            self.checkpoint, "CLIP processor",
        )
        self._model = _require_local(
            lambda c: CLIPVisionModel.from_pretrained(c, local_files_only=True),
            self.checkpoint, "CLIP",
        ).eval()

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        import torch

        with torch.no_grad():
            out = self._model(pixel_values=self._pixel_values(images))
        return out.pooler_output.cpu().numpy().astype(np.float32)

    def dense_map(self, image: np.ndarray) -> np.ndarray:
        import torch

        r = image.shape[0]
        grid = r // self.patch_size
        with torch.no_grad():
            out = self._model(pixel_values=self._pixel_values(image[None]))
        patches = out.last_hidden_state[0, 1:]
        return patches.reshape(grid, grid, -1).cpu().numpy().astype(np.float32)


class SamEncoder(_HfVisionEncoder):
    """SAM image encoder plus grid-point mask proposals.

    `stage` picks the classification feature: `pre_neck` uses the last ViT
    layer's patch tokens, `post_neck` the convolutional neck output. The
    choice is recorded in every manifest.
    """

    name = "sam"
    global_resolution = 1024
    dense_resolution = 1024
    patch_size = 16
    dense_rule = "vit_patches"

    def __init__(self, checkpoint: str = "facebook/sam-vit-base", stage: str = "pre_neck"):
        super().__init__(checkpoint)
        if stage not in ("pre_neck", "post_neck"):
            raise ExtractError(f"sam stage must be pre_neck or post_neck, got {stage!r}")
        self.stage = stage
        self.global_rule = f"mean_patch({stage})"

    def _load(self):
        from transformers import SamModel, SamProcessor

        self._processor = _require_local(
            lambda c: SamProcessor.from_pretrained(c, local_files_only=True),
            self.checkpoint, "SAM processor",
        )
        self._model = _require_local(
            lambda c: SamModel.from_pretrained(c, local_files_only=True),
            self.checkpoint, "SAM",
        ).eval()

    def _patch_grid(self, image: np.ndarray):
        import torch

        self._ensure()
        inputs = self._processor(images=[image], return_tensors="pt")
        with torch.no_grad():
            out = self._model.vision_encoder(
                inputs["pixel_values"].to(torch.float32), output_hidden_states=True
            )
        if self.stage == "pre_neck":
            grid = out.hidden_states[-1][0]  # [H/16, W/16, 768]
            return grid.cpu().numpy().astype(np.float32)
        neck = out.last_hidden_state[0]  # [256, 64, 64]
        return neck.permute(1, 2, 0).cpu().numpy().astype(np.float32)

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        return np.stack([self._patch_grid(im).mean(axis=(0, 1)) for im in images])

    def dense_map(self, image: np.ndarray) -> np.ndarray:
        return self._patch_grid(image)

    def propose_masks(self, image: np.ndarray, points):
        import torch

        self._ensure()
        r = image.shape[0]
        out = []
        for x, y in points:
            inputs = self._processor(
                images=[image], input_points=[[[float(x), float(y)]]],
                return_tensors="pt",
            )
            model_keys = ("pixel_values", "input_points", "input_labels", "input_boxes")
            with torch.no_grad():
                res = self._model(**{k: inputs[k] for k in model_keys if k in inputs})
            masks = self._processor.image_processor.post_process_masks(
                res.pred_masks.cpu(), inputs["original_sizes"].cpu(),
                inputs["reshaped_input_sizes"].cpu(),
            )[0][0]  # [3, H, W] bool at the original (resized) size
            scores = res.iou_scores[0, 0].cpu().numpy()
            for m, s in zip(masks.numpy(), scores):
                if m.any():
                    out.append((m.astype(bool), float(s)))
        return out


class Sam2Encoder:
    """Placeholder wiring for the video-capable successor model.

    Requires the `sam2` package and a local checkpoint; both are reported
    with install/download instructions when missing.
    """

    name = "sam2"
    global_resolution = 1024
    dense_resolution = 1024
    patch_size = 16
    global_rule = "mean_patch(hiera)"
    dense_rule = "hiera_patches"

    def __init__(self, checkpoint: str = "facebook/sam2-hiera-base-plus"):
        self.checkpoint = checkpoint
        try:
            import sam2  # noqa: F401
        except ImportError as exc:
            raise CheckpointError(
                "the sam2 package is not installed. Install it with\n"
                "    pip install 'sam2 @ git+https://github.com/facebookresearch/sam2'\n"
                f"and download the checkpoint '{checkpoint}' before re-running."
            ) from exc
        raise CheckpointError(
            f"sam2 checkpoint '{checkpoint}' is not available locally; download it "
            "per the sam2 repository instructions and pass --checkpoint."
        )


_BACKENDS = {
    "toy": ToyEncoder,
    "dinov2": Dinov2Encoder,
    "clip": ClipEncoder,
    "sam": SamEncoder,
    "sam2": Sam2Encoder,
}


def available() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str, checkpoint: str | None = None, **opts):
    if name not in _BACKENDS:
        raise ExtractError(f"unknown model {name!r}; available: {', '.join(available())}")
    cls = _BACKENDS[name]
    if checkpoint is not None:
        return cls(checkpoint=checkpoint, **opts) if name != "toy" else cls()
    return cls(**opts)

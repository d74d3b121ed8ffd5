"""The model bundle: encode images, decode prompted masks, embed text.

Geometry contract: for an H x W image the served feature map has shape
(ceil(H/stride), ceil(W/stride), channels) with stride = patch size. The
native path pads the image to a patch multiple and gets that grid directly;
the fixed-resolution path (``input_resolution > 0``) resizes the longest
side, encodes the padded square, then crops the valid cells and resamples
them onto the contract grid. Decoding always works in the contract grid's
pixel extent (grid * stride), so prompt normalization and mask cropping
agree between both paths and between training and serving.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .errors import CheckpointError
from .modules import (
    ImageEncoder,
    MaskDecoder,
    PromptEncoder,
    TextEncoder,
    TextSimilarityHead,
)
from .presets import ModelPreset, get_preset

CHECKPOINT_FORMAT = 1

PointPrompt = tuple[float, float, int]  # x, y, label
BoxPrompt = tuple[float, float, float, float]  # x0, y0, x1, y1


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class PromptSegmenter(nn.Module):
    """Image encoder + prompt encoder + mask decoder + text tower."""

    def __init__(self, preset: ModelPreset):
        super().__init__()
        self.preset = preset
        self.image_encoder = ImageEncoder(
            preset.patch_size,
            preset.encoder_width,
            preset.encoder_depth,
            preset.encoder_heads,
            preset.feature_channels,
        )
        self.prompt_encoder = PromptEncoder(preset.decoder_width, preset.feature_channels)
        self.mask_decoder = MaskDecoder(
            preset.decoder_width,
            preset.decoder_heads,
            preset.decoder_depth,
            preset.feature_channels,
        )
        self.text_encoder = TextEncoder(
            preset.text_width,
            preset.text_depth,
            preset.text_heads,
            preset.vocab_buckets,
            preset.max_text_tokens,
            preset.feature_channels,
        )
        self.text_head = TextSimilarityHead(preset.feature_channels)

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    # ===== differentiable core (training and inference share these) =====

    @staticmethod
    def preprocess(image: np.ndarray) -> Tensor:
        """uint8 RGB (H, W, 3) -> normalized float tensor (1, 3, H, W)."""
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected an RGB image, got shape {image.shape}")
        x = torch.from_numpy(np.ascontiguousarray(image)).float() / 255.0
        return ((x - 0.5) / 0.5).permute(2, 0, 1).unsqueeze(0)

    def encode_features(self, image: Tensor) -> Tensor:
        """Normalized (B, 3, H, W) -> contract-grid features (B, gh, gw, C)."""
        patch = self.preset.patch_size
        h, w = int(image.shape[-2]), int(image.shape[-1])
        grid_h, grid_w = _ceil_div(h, patch), _ceil_div(w, patch)
        if self.preset.input_resolution == 0:
            pad_b = grid_h * patch - h
            pad_r = grid_w * patch - w
            if pad_b or pad_r:
                image = F.pad(image, (0, pad_r, 0, pad_b))
            return self.image_encoder(image)
        side = self.preset.input_resolution
        scale = side / max(h, w)
        rh, rw = max(1, round(h * scale)), max(1, round(w * scale))
        image = F.interpolate(
            image, size=(rh, rw), mode="bilinear", align_corners=False, antialias=True
        )
        image = F.pad(image, (0, side - rw, 0, side - rh))
        full = self.image_encoder(image)
        valid = full[:, : _ceil_div(rh, patch), : _ceil_div(rw, patch)]
        resampled = F.interpolate(
            valid.permute(0, 3, 1, 2),
            size=(grid_h, grid_w),
            mode="bilinear",
            align_corners=False,
        )
        return resampled.permute(0, 2, 3, 1)

    def decode_logits(
        self,
        features: Tensor,
        image_hw: tuple[int, int],
        points: list[PointPrompt],
        box: BoxPrompt | None,
        semantic: Tensor | None,
    ) -> tuple[Tensor, Tensor]:
        """Mask logits at image resolution plus the quality estimate."""
        grid_h, grid_w, _ = features.shape
        stride = self.preset.patch_size
        extent = (float(grid_w * stride), float(grid_h * stride))
        tokens = self.prompt_encoder(points, box, semantic, extent, features.device)
        logits, quality = self.mask_decoder(features, tokens)
        h, w = image_hw
        full = F.interpolate(
            logits[None, None],
            size=(grid_h * stride, grid_w * stride),
            mode="bilinear",
            align_corners=False,
        )[0, 0]
        return full[:h, :w], quality

    def text_map(self, features: Tensor, text: str) -> Tensor:
        embedding = self.text_encoder(text, features.device)
        return self.text_head(features, embedding)

    # ===== numpy inference wrappers =====

    @torch.no_grad()
    def encode_array(self, image: np.ndarray) -> np.ndarray:
        features = self.encode_features(self.preprocess(image).to(self.device))[0]
        return features.cpu().numpy().astype(np.float32, copy=False)

    @torch.no_grad()
    def decode_array(
        self,
        features: np.ndarray,
        image_hw: tuple[int, int],
        points: list[PointPrompt],
        box: BoxPrompt | None,
        semantic: np.ndarray | None,
    ) -> tuple[np.ndarray, float]:
        features_t = torch.from_numpy(np.ascontiguousarray(features)).to(self.device)
        semantic_t = None
        if semantic is not None:
            semantic_t = torch.from_numpy(
                np.ascontiguousarray(semantic, dtype=np.float32)
            ).to(self.device)
        logits, quality = self.decode_logits(features_t, image_hw, points, box, semantic_t)
        return (logits > 0).cpu().numpy(), float(quality)

    @torch.no_grad()
    def text_map_array(self, features: np.ndarray, text: str) -> np.ndarray:
        features_t = torch.from_numpy(np.ascontiguousarray(features)).to(self.device)
        return self.text_map(features_t, text).cpu().numpy().astype(np.float32, copy=False)


# ===== construction and checkpoints =====


def build_segmenter(preset_name: str, seed: int | None = None) -> PromptSegmenter:
    """Fresh model; a seed makes the random initialization reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return PromptSegmenter(get_preset(preset_name)).eval()


def save_checkpoint(model: PromptSegmenter, path: str, **meta) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "preset": model.preset.name,
        "state_dict": model.state_dict(),
        **meta,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_segmenter(path: str, device: str = "cpu") -> PromptSegmenter:
    """Load weights; failure messages say how to obtain a checkpoint."""
    file = Path(path)
    if not file.is_file():
        raise CheckpointError(
            f"model checkpoint not found at '{path}'; point the config at an "
            f"existing file, or train the development checkpoint with "
            f"'python3 -m model_backend.train --out {path}'"
        )
    try:
        payload = torch.load(file, map_location=device, weights_only=True)
    except Exception as exc:  # torch raises several unpickling types
        raise CheckpointError(f"cannot read checkpoint '{path}': {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"'{path}' is not a format-{CHECKPOINT_FORMAT} checkpoint of this package"
        )
    model = PromptSegmenter(get_preset(str(payload["preset"])))
    model.load_state_dict(payload["state_dict"])
    return model.to(device).eval()

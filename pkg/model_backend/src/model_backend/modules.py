"""Network building blocks: encoders, prompt embedding, mask decoding.

The graph follows the classic promptable-segmentation layout — an image
encoder producing a cell-resolution feature map, a prompt encoder turning
clicks/boxes into sparse tokens, and a mask decoder whose tokens and image
features attend to each other both ways. A hash-bucket text encoder plus a
projection head supply coarse text-to-image similarity. All positional
information is fixed sin-cos Fourier features of normalized coordinates,
so every module works at any grid size.
"""

from __future__ import annotations

import math
import re
import zlib

import torch
from torch import Tensor, nn

_MAX_POSITION_FREQ = 128.0  # cycles across the unit extent at the finest band


class FourierPosition(nn.Module):
    """Fixed sin-cos features of coordinates normalized to [0, 1]."""

    def __init__(self, width: int):
        super().__init__()
        if width % 4:
            raise ValueError(f"position width must be divisible by 4, got {width}")
        n_freq = width // 4
        exponents = torch.linspace(0.0, math.log2(_MAX_POSITION_FREQ), n_freq)
        self.register_buffer("freqs", math.pi * torch.pow(2.0, exponents))

    def forward(self, coords: Tensor) -> Tensor:
        # (..., 2) -> (..., width)
        angles = coords.unsqueeze(-1) * self.freqs
        return torch.cat([angles.sin(), angles.cos()], dim=-1).flatten(-2)


def grid_cell_centers(grid_h: int, grid_w: int, device: torch.device) -> Tensor:
    """(grid_h * grid_w, 2) cell-center coordinates normalized by the grid extent."""
    ys = (torch.arange(grid_h, device=device, dtype=torch.float32) + 0.5) / grid_h
    xs = (torch.arange(grid_w, device=device, dtype=torch.float32) + 0.5) / grid_w
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([xx, yy], dim=-1).reshape(-1, 2)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with a 4x MLP."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ImageEncoder(nn.Module):
    """Patchify, run transformer blocks, project through a feature neck."""

    def __init__(self, patch_size: int, width: int, depth: int, heads: int, channels: int):
        super().__init__()
        self.patch_size = patch_size
        self.patch = nn.Conv2d(3, width, kernel_size=patch_size, stride=patch_size)
        self.pos = FourierPosition(width)
        self.blocks = nn.ModuleList(TransformerBlock(width, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(width)
        self.neck = nn.Linear(width, channels)

    def forward(self, image: Tensor) -> Tensor:
        # (B, 3, H, W) with H, W patch multiples -> (B, grid_h, grid_w, channels)
        x = self.patch(image)
        grid_h, grid_w = x.shape[-2:]
        x = x.flatten(2).transpose(1, 2)
        x = x + self.pos(grid_cell_centers(grid_h, grid_w, x.device))
        for block in self.blocks:
            x = block(x)
        x = self.neck(self.norm(x))
        return x.reshape(-1, grid_h, grid_w, x.shape[-1])


class PromptEncoder(nn.Module):
    """Sparse prompt tokens: points, box corners, optional semantic embedding."""

    NEGATIVE_POINT, POSITIVE_POINT, BOX_MIN, BOX_MAX, SEMANTIC = range(5)

    def __init__(self, width: int, feature_channels: int):
        super().__init__()
        self.pos = FourierPosition(width)
        self.kinds = nn.Embedding(5, width)
        self.semantic_proj = nn.Linear(feature_channels, width)

    def _place(self, xy: tuple[float, float], kind: int, device) -> Tensor:
        coords = torch.tensor(xy, dtype=torch.float32, device=device)
        kind_idx = torch.tensor(kind, device=device)
        return self.pos(coords) + self.kinds(kind_idx)

    def forward(
        self,
        points: list[tuple[float, float, int]],
        box: tuple[float, float, float, float] | None,
        semantic: Tensor | None,
        extent: tuple[float, float],
        device: torch.device,
    ) -> Tensor:
        """Tokens (n, width); coordinates are pixels, normalized here by extent."""
        ew, eh = extent
        tokens = []
        for x, y, label in points:
            kind = self.POSITIVE_POINT if label else self.NEGATIVE_POINT
            tokens.append(self._place((x / ew, y / eh), kind, device))
        if box is not None:
            x0, y0, x1, y1 = box
            tokens.append(self._place((x0 / ew, y0 / eh), self.BOX_MIN, device))
            tokens.append(self._place((x1 / ew, y1 / eh), self.BOX_MAX, device))
        if semantic is not None:
            kind_idx = torch.tensor(self.SEMANTIC, device=device)
            tokens.append(self.semantic_proj(semantic) + self.kinds(kind_idx))
        return torch.stack(tokens)


class TwoWayBlock(nn.Module):
    """Tokens attend to themselves, then to the image, then the image back."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(width)
        self.cross_tokens = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )
        self.norm3 = nn.LayerNorm(width)
        self.cross_image = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm4 = nn.LayerNorm(width)

    def forward(self, tokens: Tensor, image: Tensor, image_pe: Tensor) -> tuple[Tensor, Tensor]:
        tokens = self.norm1(tokens + self.self_attn(tokens, tokens, tokens, need_weights=False)[0])
        keys = image + image_pe
        tokens = self.norm2(
            tokens + self.cross_tokens(tokens, keys, image, need_weights=False)[0]
        )
        tokens = self.norm3(tokens + self.mlp(tokens))
        image = self.norm4(
            image + self.cross_image(keys, tokens, tokens, need_weights=False)[0]
        )
        return tokens, image


class Mlp(nn.Module):
    def __init__(self, width: int, hidden: int, out: int, layers: int = 3):
        super().__init__()
        dims = [width] + [hidden] * (layers - 1) + [out]
        steps: list[nn.Module] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            steps.append(nn.Linear(a, b))
            if i < layers - 1:
                steps.append(nn.GELU())
        self.net = nn.Sequential(*steps)

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class MaskDecoder(nn.Module):
    """Query tokens against image features; emit mask logits and a quality score.

    The mask head upscales the attended feature grid 4x and dots it with a
    weight vector predicted from the mask token, so logits live at one
    quarter of the feature stride before final resizing.
    """

    def __init__(self, width: int, heads: int, depth: int, feature_channels: int):
        super().__init__()
        self.input_proj = nn.Linear(feature_channels, width)
        self.pos = FourierPosition(width)
        self.quality_token = nn.Parameter(torch.zeros(width))
        self.mask_token = nn.Parameter(torch.zeros(width))
        self.blocks = nn.ModuleList(TwoWayBlock(width, heads) for _ in range(depth))
        self.upscale = nn.Sequential(
            nn.ConvTranspose2d(width, width // 2, kernel_size=2, stride=2),
            nn.GELU(),
            nn.ConvTranspose2d(width // 2, width // 4, kernel_size=2, stride=2),
            nn.GELU(),
        )
        self.hyper = Mlp(width, width, width // 4)
        self.quality_head = Mlp(width, width, 1)
        nn.init.normal_(self.quality_token, std=0.02)
        nn.init.normal_(self.mask_token, std=0.02)

    def forward(self, features: Tensor, prompt_tokens: Tensor) -> tuple[Tensor, Tensor]:
        # features (grid_h, grid_w, C), prompt_tokens (n, width)
        grid_h, grid_w, _ = features.shape
        image = self.input_proj(features).reshape(1, grid_h * grid_w, -1)
        image_pe = self.pos(grid_cell_centers(grid_h, grid_w, image.device)).unsqueeze(0)
        tokens = torch.cat(
            [self.quality_token[None], self.mask_token[None], prompt_tokens]
        ).unsqueeze(0)
        for block in self.blocks:
            tokens, image = block(tokens, image, image_pe)
        grid = image.transpose(1, 2).reshape(1, -1, grid_h, grid_w)
        upscaled = self.upscale(grid)
        weights = self.hyper(tokens[:, 1])
        logits = torch.einsum("bc,bchw->bhw", weights, upscaled)[0]
        quality = torch.sigmoid(self.quality_head(tokens[:, 0]))[0, 0]
        return logits, quality


def hash_token_ids(text: str, buckets: int, max_tokens: int) -> list[int]:
    """Stable word-hash token ids; empty text maps to the reserved bucket 0."""
    words = re.findall(r"[a-z0-9]+", text.lower())[:max_tokens]
    if not words:
        return [0]
    return [1 + zlib.crc32(w.encode()) % (buckets - 1) for w in words]


class TextEncoder(nn.Module):
    """Hash-bucket vocabulary, transformer, mean pool, projection to feature space."""

    def __init__(
        self,
        width: int,
        depth: int,
        heads: int,
        buckets: int,
        max_tokens: int,
        feature_channels: int,
    ):
        super().__init__()
        self.buckets = buckets
        self.max_tokens = max_tokens
        self.embed = nn.Embedding(buckets, width)
        self.pos_embed = nn.Parameter(torch.zeros(max_tokens, width))
        self.blocks = nn.ModuleList(TransformerBlock(width, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(width)
        self.proj = nn.Linear(width, feature_channels)
        nn.init.normal_(self.pos_embed, std=0.02)

    def forward(self, text: str, device: torch.device) -> Tensor:
        ids = hash_token_ids(text, self.buckets, self.max_tokens)
        x = self.embed(torch.tensor(ids, device=device)) + self.pos_embed[: len(ids)]
        x = x.unsqueeze(0)
        for block in self.blocks:
            x = block(x)
        return self.proj(self.norm(x).mean(dim=1))[0]


class TextSimilarityHead(nn.Module):
    """Cosine between projected image cells and a text embedding, raw scale."""

    def __init__(self, feature_channels: int):
        super().__init__()
        self.image_proj = nn.Linear(feature_channels, feature_channels)

    def forward(self, features: Tensor, text_embedding: Tensor) -> Tensor:
        cells = torch.nn.functional.normalize(self.image_proj(features), dim=-1)
        text = torch.nn.functional.normalize(text_embedding, dim=-1)
        return torch.einsum("hwc,c->hw", cells, text)

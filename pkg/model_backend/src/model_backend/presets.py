"""Architecture presets.

A preset pins every size that defines the network graph, so a checkpoint
only needs to name its preset to be loadable. ``vit_b`` is the production
layout (ViT-B/16 image encoder behind a 256-channel neck at a fixed
1024-pixel input); ``tiny`` is a miniature of the same graph that runs and
trains on CPU, used for development, tests, and the bundled checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ModelBackendError


@dataclass(frozen=True)
class ModelPreset:
    name: str
    # image encoder
    patch_size: int  # also the served feature stride
    encoder_width: int
    encoder_depth: int
    encoder_heads: int
    feature_channels: int  # neck output, served over the protocol
    input_resolution: int  # 0 = native (pad to a patch multiple), else fixed square
    # mask decoder (prompt tokens share its width)
    decoder_width: int
    decoder_depth: int
    decoder_heads: int
    # text encoder
    text_width: int
    text_depth: int
    text_heads: int
    vocab_buckets: int
    max_text_tokens: int

    def __post_init__(self):
        if self.encoder_width % self.encoder_heads:
            raise ModelBackendError("encoder width must divide into heads")
        if self.decoder_width % self.decoder_heads or self.decoder_width % 4:
            raise ModelBackendError("decoder width must divide into heads and by 4")
        if self.input_resolution and self.input_resolution % self.patch_size:
            raise ModelBackendError("fixed input resolution must be a patch multiple")


PRESETS: dict[str, ModelPreset] = {
    "vit_b": ModelPreset(
        name="vit_b",
        patch_size=16,
        encoder_width=768,
        encoder_depth=12,
        encoder_heads=12,
        feature_channels=256,
        input_resolution=1024,
        decoder_width=256,
        decoder_depth=2,
        decoder_heads=8,
        text_width=256,
        text_depth=4,
        text_heads=8,
        vocab_buckets=16384,
        max_text_tokens=32,
    ),
    "tiny": ModelPreset(
        name="tiny",
        patch_size=8,
        encoder_width=96,
        encoder_depth=3,
        encoder_heads=3,
        feature_channels=64,
        input_resolution=0,
        decoder_width=64,
        decoder_depth=2,
        decoder_heads=4,
        text_width=64,
        text_depth=2,
        text_heads=4,
        vocab_buckets=4096,
        max_text_tokens=16,
    ),
}


def get_preset(name: str) -> ModelPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ModelBackendError(
            f"unknown preset '{name}'; available: {sorted(PRESETS)}"
        ) from None

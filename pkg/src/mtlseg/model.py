"""Full segmentation model: hierarchical encoder plus multi-task decoder."""

from __future__ import annotations

import numpy as np

from .decoder import DecoderConfig, MTLDecoder
from .encoder import AttentionCapture, Encoder, EncoderConfig
from .nn import Module, SeedStream
from .tensor import Tensor, no_grad


def preprocess(image_u8: np.ndarray) -> Tensor:
    """uint8 RGB image to a [-1, 1] float tensor."""
    return Tensor(image_u8.astype(np.float64) / 127.5 - 1.0)


def masks_from_logits(logits: list[Tensor]) -> list[np.ndarray]:
    """Argmax over (background, class); exact ties go to background."""
    return [(np.argmax(l.data, axis=-1) == 1).astype(np.uint8) for l in logits]


class MTLSegFormer(Module):
    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, seed: int):
        super().__init__()
        seeds = SeedStream(seed)
        enc_seeds, dec_seeds = seeds.split(2)
        self.encoder = Encoder(enc_cfg, enc_seeds)
        self.decoder = MTLDecoder(enc_cfg.embed_dims, dec_cfg, dec_seeds)
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg

    def calibrate_heads(self, images_u8) -> None:
        """Zero the mean head logits over the given images.

        Fresh head weights couple to nonzero feature means, handing every
        model a random constant logit offset. Cancelling it makes training
        start from near-uniform predictions regardless of the seed.
        """
        sums = [np.zeros(2) for _ in self.decoder.heads]
        count = 0
        with no_grad():
            for image in images_u8:
                for acc, logit_map in zip(sums, self(preprocess(image))):
                    acc += logit_map.data.mean(axis=(0, 1))
                count += 1
        for head, acc in zip(self.decoder.heads, sums):
            head.bias.data = head.bias.data - (acc / count).astype(head.bias.dtype)

    def __call__(self, image: Tensor, capture: AttentionCapture | None = None) -> list[Tensor]:
        pyramid = self.encoder(image, capture=capture)
        return self.decoder(pyramid, capture=capture)

    def predict(self, image_u8: np.ndarray, capture: AttentionCapture | None = None) -> list[np.ndarray]:
        """Per-task binary masks for a uint8 image, without graph recording."""
        with no_grad():
            logits = self(preprocess(image_u8), capture=capture)
        return masks_from_logits(logits)

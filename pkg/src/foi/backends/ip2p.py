"""Adapter contract for pretrained instruction-editing weights.

Mirrors the standard latent-diffusion instruction editor: 512x512 inputs,
an 8x VAE codec with 4 latent channels, CLIP tokenization padded to 77
tokens, 16 UNet cross-attention layers at pixel sides 64/32/16/8, and a
1000-step training noise schedule with scaled-linear betas.  Branch
mapping: the image latent is concatenated onto the UNet's input channels;
UNCOND zeroes that latent and uses the empty-prompt embedding, IMAGE_ONLY
keeps the latent with the empty prompt, FULL uses both conditions.

Loading needs torch, diffusers, and a local checkpoint; point
``FOI_IP2P_WEIGHTS`` at it (or pass ``weights_path``).  Without those the
constructor raises :class:`BackendUnavailable`, and the schedule, layer
enumeration, and constants below remain usable for planning and tests.
"""

from __future__ import annotations

import os

import numpy as np

from ..capture import LayerKey
from ..errors import BackendUnavailable

WEIGHTS_ENV = "FOI_IP2P_WEIGHTS"

LATENT_CHANNELS = 4
LATENT_SIDE = 64
TOKEN_COUNT = 77
MAX_TIMESTEP = 1000
PROJECTION_DIM = 40  # per-head width of the first attention block; varies per layer
CODEC_FACTOR = 8
BETA_START = 0.00085
BETA_END = 0.012

# UNet cross-attention layers in forward order for 512x512 inputs.
CROSS_ATTENTION_LAYERS: tuple[LayerKey, ...] = (
    LayerKey("down0.attn0", 64),
    LayerKey("down0.attn1", 64),
    LayerKey("down1.attn0", 32),
    LayerKey("down1.attn1", 32),
    LayerKey("down2.attn0", 16),
    LayerKey("down2.attn1", 16),
    LayerKey("mid.attn0", 8),
    LayerKey("up1.attn0", 16),
    LayerKey("up1.attn1", 16),
    LayerKey("up1.attn2", 16),
    LayerKey("up2.attn0", 32),
    LayerKey("up2.attn1", 32),
    LayerKey("up2.attn2", 32),
    LayerKey("up3.attn0", 64),
    LayerKey("up3.attn1", 64),
    LayerKey("up3.attn2", 64),
)


def training_sigmas(steps: int = MAX_TIMESTEP) -> np.ndarray:
    """Noise levels of the scaled-linear training schedule, ascending in t."""
    betas = np.linspace(BETA_START**0.5, BETA_END**0.5, steps) ** 2
    alphas_bar = np.cumprod(1.0 - betas)
    return np.sqrt((1.0 - alphas_bar) / alphas_bar)


class Ip2pBackend:
    """Real-weights backend; constructible only with local assets.

    Integration tests run only when ``FOI_IP2P_WEIGHTS`` is set.  The
    weight loading and torch forward hooks are not wired into this build;
    the class documents the adapter contract and fails loudly otherwise.
    """

    channels = LATENT_CHANNELS
    latent_height = LATENT_SIDE
    latent_width = LATENT_SIDE
    token_count = TOKEN_COUNT
    max_timestep = float(MAX_TIMESTEP)
    latent_projection_dim = PROJECTION_DIM
    codec_factor = CODEC_FACTOR

    def __init__(self, weights_path: str | None = None):
        path = weights_path or os.environ.get(WEIGHTS_ENV)
        if not path:
            raise BackendUnavailable(
                f"set {WEIGHTS_ENV} to a local pretrained checkpoint directory "
                "to use the real-weights backend"
            )
        try:
            import torch  # noqa: F401
            import diffusers  # noqa: F401
        except ImportError as exc:
            raise BackendUnavailable(
                f"the real-weights backend needs torch and diffusers: {exc}"
            ) from exc
        raise BackendUnavailable(
            "weight loading is not wired into this build; implement the torch "
            "forward hooks against the contract documented in this module"
        )

    @staticmethod
    def attention_layers() -> tuple[LayerKey, ...]:
        return CROSS_ATTENTION_LAYERS

    @staticmethod
    def schedule(steps: int) -> tuple[np.ndarray, np.ndarray]:
        """Evenly strided slice of the training schedule, descending."""
        if steps < 1 or steps > MAX_TIMESTEP:
            raise ValueError(f"steps must lie in [1, {MAX_TIMESTEP}], got {steps}")
        stride = MAX_TIMESTEP // steps
        indices = np.arange(MAX_TIMESTEP - 1, -1, -stride)[:steps]
        timesteps = indices.astype(float)
        return timesteps, training_sigmas()[indices]

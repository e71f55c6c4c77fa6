"""Denoiser backend contract shared by the toy and real-weights backends."""

from __future__ import annotations

import abc
from typing import Callable, Sequence

import numpy as np

from ..capture import Branch, LayerKey
from ..instructions import TokenizedText

# capture hook: (branch, layer, logits, probs) -> None
CaptureHook = Callable[[Branch, LayerKey, np.ndarray, np.ndarray], None]
# modulation hook: (logits, layer) -> probabilities
ModulationHook = Callable[[np.ndarray, LayerKey], np.ndarray]


class DenoiserBackend(abc.ABC):
    """Three-branch conditional denoiser plus tokenizer and latent codec.

    The three branches share one forward path and differ only in the
    placeholders substituted for missing conditions: UNCOND uses a null
    image latent and the null instruction, IMAGE_ONLY the real image
    latent and the null instruction, FULL both real conditions.  An
    instance may be shared read-only across runs; hooks are per-call.
    """

    channels: int
    latent_height: int
    latent_width: int
    token_count: int
    max_timestep: float
    latent_projection_dim: int
    codec_factor: int

    @property
    def native_image_size(self) -> tuple[int, int]:
        """(height, width) the codec maps onto the full latent grid."""
        return (
            self.latent_height * self.codec_factor,
            self.latent_width * self.codec_factor,
        )

    @abc.abstractmethod
    def attention_layers(self) -> tuple[LayerKey, ...]:
        """All cross-attention layers, in forward-pass order."""

    @abc.abstractmethod
    def schedule(self, steps: int) -> tuple[np.ndarray, np.ndarray]:
        """(timesteps, sigmas) ramps of length ``steps``, both descending."""

    @abc.abstractmethod
    def tokenize(self, text: str) -> TokenizedText:
        """Token ids with character offsets, padded/truncated to ``token_count``."""

    @abc.abstractmethod
    def encode_image(self, image: np.ndarray) -> np.ndarray:
        """RGB image in [0, 1], shape (H, W, 3) -> latent (C, H_lat, W_lat)."""

    @abc.abstractmethod
    def decode_latent(self, latent: np.ndarray) -> np.ndarray:
        """Latent (C, H_lat, W_lat) -> RGB image in [0, 1], shape (H, W, 3)."""

    @abc.abstractmethod
    def predict(
        self,
        branch: Branch,
        z_t: np.ndarray,
        timestep: float,
        image_latent: np.ndarray | None,
        token_ids: Sequence[int],
        modulation_hook: ModulationHook | None = None,
        capture_hook: CaptureHook | None = None,
    ) -> np.ndarray:
        """One noise estimate; deterministic given its inputs.

        On the FULL branch, ``modulation_hook`` is invoked at every
        cross-attention layer with the raw logits and the layer key and
        must return the probabilities to use; other branches ignore it.
        ``capture_hook`` observes (branch, layer, logits, probs) for every
        branch, where ``probs`` are exactly what the pass used.
        """

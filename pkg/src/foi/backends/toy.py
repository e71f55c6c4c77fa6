"""Deterministic desk-scale denoiser backend for tests and CI.

The toy backend is a tiny fixed-weight network with real cross-attention:
two layers (pixel grids 16x16 and 8x8, two heads each) attending from
spatial features to token embeddings.  It is not a trained model; it
exists so the full editing pipeline (capture, masks, modulation, guided
sampling, codec round-trips) runs end to end, bit-reproducibly, in
milliseconds.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..capture import Branch, LayerKey
from ..errors import BadDims, ShapeMismatch
from ..instructions import TokenizedText
from ..numerics import softmax
from .base import CaptureHook, DenoiserBackend, ModulationHook


class HashingTokenizer:
    """Lowercase whitespace tokenizer with a hashed vocabulary.

    Word ids are crc32 buckets in [1, vocab_size); id 0 is reserved for
    padding.  Sequences are padded or truncated to ``length`` and every
    content token keeps its [start, end) character offsets; padding gets
    empty offsets pinned to the end of the text.  Collisions are fine:
    only plumbing correctness matters here, not semantics.
    """

    def __init__(self, length: int = 16, vocab_size: int = 1024):
        self.length = length
        self.vocab_size = vocab_size

    def tokenize(self, text: str) -> TokenizedText:
        ids: list[int] = []
        offsets: list[tuple[int, int]] = []
        for match in re.finditer(r"\S+", text.lower()):
            if len(ids) == self.length:
                break
            word = match.group()
            ids.append(zlib.crc32(word.encode("utf-8")) % (self.vocab_size - 1) + 1)
            offsets.append((match.start(), match.end()))
        tail = len(text)
        while len(ids) < self.length:
            ids.append(0)
            offsets.append((tail, tail))
        return TokenizedText(tuple(ids), tuple(offsets))


@dataclass(frozen=True)
class ToyBackendConfig:
    """Shape and seeding knobs of the toy backend."""

    seed: int = 0
    channels: int = 4
    latent_side: int = 16
    token_count: int = 16
    vocab_size: int = 1024
    heads: int = 2
    projection_dim: int = 32   # per-head query/key width, also the softmax scale
    value_dim: int = 16        # per-head value width
    feature_dim: int = 32
    embed_dim: int = 32
    codec_factor: int = 8
    max_timestep: float = 1000.0
    sigma_min: float = 0.05
    sigma_max: float = 5.0


@dataclass(frozen=True)
class _LayerWeights:
    query: np.ndarray
    key: np.ndarray
    value: np.ndarray
    out: np.ndarray


def _avg_pool2(grid: np.ndarray) -> np.ndarray:
    # paired adds keep pooling exact on constant blocks
    return (
        (grid[0::2, 0::2] + grid[1::2, 0::2]) + (grid[0::2, 1::2] + grid[1::2, 1::2])
    ) * 0.25


class ToyBackend(DenoiserBackend):
    """Seeded toy denoiser; a given seed always yields the same weights.

    Weights are drawn from one ``numpy.random.default_rng(seed)`` stream
    in a fixed order: token embedding table, token position table,
    timestep projection, input projection and bias, then per attention
    layer (16x16 first) query/key/value/output maps, then the output head
    and bias.  Every activation passes through tanh, so all outputs are
    bounded in (-1, 1).
    """

    def __init__(self, config: ToyBackendConfig = ToyBackendConfig()):
        self.config = config
        self.channels = config.channels
        self.latent_height = config.latent_side
        self.latent_width = config.latent_side
        self.token_count = config.token_count
        self.max_timestep = config.max_timestep
        self.latent_projection_dim = config.projection_dim
        self.codec_factor = config.codec_factor
        self.tokenizer = HashingTokenizer(config.token_count, config.vocab_size)
        self._layer_keys = (
            LayerKey("xattn16", config.latent_side),
            LayerKey("xattn8", config.latent_side // 2),
        )
        self._null_ids = self.tokenizer.tokenize("").ids
        self._init_weights()

    def _init_weights(self) -> None:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)

        def mat(rows: int, cols: int) -> np.ndarray:
            return rng.standard_normal((rows, cols)) / math.sqrt(rows)

        self._embed = rng.standard_normal((cfg.vocab_size, cfg.embed_dim))
        self._tok_pos = 0.5 * rng.standard_normal((cfg.token_count, cfg.embed_dim))
        self._time_proj = mat(8, cfg.feature_dim)
        self._in_proj = mat(2 * cfg.channels, cfg.feature_dim)
        self._in_bias = 0.1 * rng.standard_normal(cfg.feature_dim)
        layers = []
        for _ in self._layer_keys:
            layers.append(
                _LayerWeights(
                    query=mat(cfg.feature_dim, cfg.heads * cfg.projection_dim),
                    key=mat(cfg.embed_dim, cfg.heads * cfg.projection_dim),
                    value=mat(cfg.embed_dim, cfg.heads * cfg.value_dim),
                    out=mat(cfg.heads * cfg.value_dim, cfg.feature_dim),
                )
            )
        self._layers = tuple(layers)
        self._out_proj = mat(cfg.feature_dim, cfg.channels)
        self._out_bias = 0.1 * rng.standard_normal(cfg.channels)

    # --- schedule ---

    def sigma_for(self, timestep) -> np.ndarray:
        """Log-linear noise level, sigma_max at the training maximum down to sigma_min."""
        cfg = self.config
        frac = np.asarray(timestep, dtype=float) / cfg.max_timestep
        return cfg.sigma_min * (cfg.sigma_max / cfg.sigma_min) ** frac

    def schedule(self, steps: int) -> tuple[np.ndarray, np.ndarray]:
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        timesteps = np.linspace(self.max_timestep, 0.0, steps, endpoint=False)
        return timesteps, self.sigma_for(timesteps)

    # --- tokenizer / codec ---

    def tokenize(self, text: str) -> TokenizedText:
        return self.tokenizer.tokenize(text)

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        """Block-mean pool an RGB [0, 1] image into a 4-channel latent.

        Channels 0..2 are pooled RGB, channel 3 their mean.  Pooling runs
        as repeated exact 2x2 averages, so block-constant images encode to
        their exact block values.
        """
        img = np.asarray(image, dtype=float)
        if img.ndim != 3 or img.shape[2] != 3:
            raise BadDims(f"expected an (H, W, 3) image, got {img.shape}")
        h, w = img.shape[:2]
        factor = self.codec_factor
        if h % factor or w % factor:
            raise BadDims(f"image dims must be divisible by {factor}, got {h}x{w}")
        pooled = []
        for c in range(3):
            grid = img[:, :, c]
            for _ in range(int(math.log2(factor))):
                grid = _avg_pool2(grid)
            pooled.append(grid)
        luma = (pooled[0] + pooled[1] + pooled[2]) / 3.0
        return np.stack(pooled + [luma], axis=0)

    def decode_latent(self, latent: np.ndarray) -> np.ndarray:
        """Nearest-neighbor upsample of the RGB latent channels, clipped to [0, 1]."""
        lat = np.asarray(latent, dtype=float)
        if lat.ndim != 3 or lat.shape[0] != self.channels:
            raise BadDims(f"expected a ({self.channels}, h, w) latent, got {lat.shape}")
        factor = self.codec_factor
        rgb = lat[:3].repeat(factor, axis=1).repeat(factor, axis=2)
        return np.clip(np.transpose(rgb, (1, 2, 0)), 0.0, 1.0)

    # --- forward pass ---

    def attention_layers(self) -> tuple[LayerKey, ...]:
        return self._layer_keys

    def _time_features(self, t_norm: float) -> np.ndarray:
        angles = 2.0 * np.pi * np.array([1.0, 2.0, 4.0, 8.0]) * t_norm
        return np.concatenate([np.sin(angles), np.cos(angles)])

    def _attention(
        self,
        index: int,
        feats: np.ndarray,
        tokens: np.ndarray,
        branch: Branch,
        modulation_hook: ModulationHook | None,
        capture_hook: CaptureHook | None,
    ) -> np.ndarray:
        cfg = self.config
        weights = self._layers[index]
        key = self._layer_keys[index]
        pixels = feats.shape[0]
        q = (feats @ weights.query).reshape(pixels, cfg.heads, cfg.projection_dim)
        k = (tokens @ weights.key).reshape(cfg.token_count, cfg.heads, cfg.projection_dim)
        v = (tokens @ weights.value).reshape(cfg.token_count, cfg.heads, cfg.value_dim)
        logits = np.einsum("phd,nhd->hpn", q, k)
        if branch is Branch.FULL and modulation_hook is not None:
            probs = np.asarray(modulation_hook(logits, key), dtype=float)
            if probs.shape != logits.shape:
                raise ShapeMismatch(
                    f"modulation hook returned {probs.shape}, expected {logits.shape}"
                )
        else:
            probs = softmax(logits / math.sqrt(self.latent_projection_dim), axis=-1)
        if capture_hook is not None:
            capture_hook(branch, key, logits, probs)
        mixed = np.einsum("hpn,nhd->phd", probs, v).reshape(pixels, cfg.heads * cfg.value_dim)
        return mixed @ weights.out

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
        cfg = self.config
        latent_shape = (self.channels, self.latent_height, self.latent_width)
        z = np.asarray(z_t, dtype=float)
        if z.shape != latent_shape:
            raise ShapeMismatch(f"z_t shape {z.shape} != {latent_shape}")

        if branch is Branch.UNCOND:
            img = np.zeros(latent_shape)
            ids: Sequence[int] = self._null_ids
        else:
            if image_latent is None:
                raise ShapeMismatch(f"branch {branch.value} requires an image latent")
            img = np.asarray(image_latent, dtype=float)
            if img.shape != latent_shape:
                raise ShapeMismatch(f"image latent shape {img.shape} != {latent_shape}")
            ids = token_ids if branch is Branch.FULL else self._null_ids
        if len(ids) != self.token_count:
            raise ShapeMismatch(f"expected {self.token_count} token ids, got {len(ids)}")

        tokens = self._embed[np.asarray(ids, dtype=int)] + self._tok_pos
        temb = self._time_features(float(timestep) / self.max_timestep) @ self._time_proj
        side = self.latent_height
        pixels = np.concatenate([z, img], axis=0).reshape(2 * cfg.channels, -1).T
        h = np.tanh(pixels @ self._in_proj + self._in_bias + temb)

        h16 = np.tanh(
            h + self._attention(0, h, tokens, branch, modulation_hook, capture_hook)
        )
        grid = h16.reshape(side, side, cfg.feature_dim)
        pooled = _avg_pool2(grid).reshape(-1, cfg.feature_dim)
        h8 = np.tanh(
            pooled
            + self._attention(1, pooled, tokens, branch, modulation_hook, capture_hook)
        )
        up = (
            h8.reshape(side // 2, side // 2, cfg.feature_dim)
            .repeat(2, axis=0)
            .repeat(2, axis=1)
            .reshape(-1, cfg.feature_dim)
        )
        merged = np.tanh(h16 + up)
        eps = np.tanh(merged @ self._out_proj + self._out_bias)
        return eps.T.reshape(latent_shape)

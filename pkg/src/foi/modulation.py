"""Cross-condition attention modulation.

At every cross-attention layer of the instruction-conditioned branch, the
attention logits are mixed with the null-instruction branch's logits under
a per-token spatial mask: inside each sub-instruction's region of interest
the instruction logits pass through (plus an intensity boost toward the
head's peak logit), outside it the null-instruction logits take over.
Instruction tokens therefore stop pulling attention onto unrelated areas,
and per-sub intensities can be tuned through the alpha vector.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .capture import Branch, LayerKey
from .errors import LengthMismatch, NoRecords, ShapeMismatch
from .instructions import Instruction
from .masks import MASK_RESOLUTION, KeywordMask
from .numerics import nearest_resize, softmax


def timestep_weight(t_norm: float) -> float:
    """Decay weight of the in-mask boost: 0.05 * t^4 on the normalized timestep.

    Near the noisy start (t_norm close to 1) the boost is strongest; it
    vanishes as denoising approaches the clean image.
    """
    return 0.05 * float(t_norm) ** 4


class TokenMask:
    """Per-token spatial masks at a reference resolution, with cached resizes.

    Column ``j`` holds the flattened keyword mask of the sub whose token
    span contains ``j``; columns outside every span are all ones, so
    structural tokens keep their original attention.  Owned by a single
    edit run (the resize cache is not thread-safe).
    """

    def __init__(self, values: np.ndarray, r: int):
        self.values = np.asarray(values, dtype=float)
        self.r = int(r)
        if self.values.shape[0] != self.r * self.r:
            raise ShapeMismatch(
                f"token mask has {self.values.shape[0]} pixel rows, expected {self.r * self.r}"
            )
        self._resized: dict[int, np.ndarray] = {self.r: self.values}

    @property
    def n_tokens(self) -> int:
        return self.values.shape[1]

    def at_resolution(self, layer_r: int) -> np.ndarray:
        """Columns resized (nearest neighbor) to a layer's pixel grid."""
        layer_r = int(layer_r)
        cached = self._resized.get(layer_r)
        if cached is None:
            columns = [
                nearest_resize(col.reshape(self.r, self.r), layer_r, layer_r).reshape(-1)
                for col in self.values.T
            ]
            cached = np.stack(columns, axis=1)
            self._resized[layer_r] = cached
        return cached


def build_token_mask(
    masks: Sequence[KeywordMask],
    instruction: Instruction,
    n_tokens: int,
    reference_r: int = MASK_RESOLUTION,
) -> TokenMask:
    """Broadcast each keyword's mask over its sub's token span.

    With zero subs the mask is all ones and modulation becomes inert.
    """
    if len(masks) != len(instruction.subs):
        raise LengthMismatch(
            f"{len(masks)} masks for {len(instruction.subs)} sub-instructions"
        )
    if instruction.subs and not instruction.resolved:
        raise LengthMismatch("instruction token spans are not resolved")
    values = np.ones((reference_r * reference_r, n_tokens), dtype=float)
    for mask, (start, end) in zip(masks, instruction.token_spans):
        if mask.values.shape != (reference_r, reference_r):
            raise LengthMismatch(
                f"mask shape {mask.values.shape} != ({reference_r}, {reference_r})"
            )
        if end > n_tokens:
            raise LengthMismatch(f"token span ({start}, {end}) exceeds N={n_tokens}")
        values[:, start:end] = mask.values.reshape(-1)[:, None]
    return TokenMask(values, reference_r)


def interpolate_mask(token_mask: TokenMask, layer_r: int) -> np.ndarray:
    """Token mask resized to a layer's grid; cached per resolution."""
    return token_mask.at_resolution(layer_r)


def enhancement_delta(
    logits: np.ndarray, alpha: np.ndarray, t_norm: float
) -> np.ndarray:
    """In-mask boost toward each head's peak logit.

    Per entry: ``alpha[token] * timestep_weight(t_norm) * (peak - logit)``
    where ``peak`` is the head's maximum over all pixels and tokens at
    this layer and step.  Nonnegative whenever alpha is.
    """
    x = np.asarray(logits, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (x.shape[-1],):
        raise ShapeMismatch(f"alpha shape {alpha.shape} != ({x.shape[-1]},)")
    peak = x.max(axis=(-2, -1), keepdims=True)
    return alpha * timestep_weight(t_norm) * (peak - x)


def modulate(
    x_logits: np.ndarray,
    y_logits: np.ndarray,
    mask: np.ndarray,
    alpha: np.ndarray,
    t_norm: float,
    d: int,
) -> np.ndarray:
    """Mix instruction and null-branch logits under the token mask, then normalize.

    Computes ``softmax(((X + boost) * M + Y * (1 - M)) / sqrt(d))`` over
    the token axis, so every (head, pixel) row of the result sums to one.
    ``d`` is the backend's latent projection dimension.
    """
    x = np.asarray(x_logits, dtype=float)
    y = np.asarray(y_logits, dtype=float)
    if x.shape != y.shape:
        raise ShapeMismatch(f"logit shapes differ: {x.shape} vs {y.shape}")
    m = np.asarray(mask, dtype=float)
    if m.shape != x.shape[-2:]:
        raise ShapeMismatch(f"mask shape {m.shape} != {x.shape[-2:]}")
    if d < 1:
        raise ValueError(f"projection dimension must be >= 1, got {d}")
    mixed = (x + enhancement_delta(x, alpha, t_norm)) * m + y * (1.0 - m)
    return softmax(mixed / math.sqrt(d), axis=-1)


class Modulator:
    """Owns one edit run's modulation state.

    The image-only pass must run before the instruction pass at every
    step: its per-layer logits are cached here (via :meth:`observe`, which
    is capture-hook compatible) and consumed when the instruction pass
    invokes the modulator as its modulation hook.
    """

    def __init__(self, token_mask: TokenMask, alpha: np.ndarray, d: int):
        self.token_mask = token_mask
        self.alpha = np.asarray(alpha, dtype=float)
        self.d = int(d)
        self.t_norm = 0.0
        self._null_logits: dict[LayerKey, np.ndarray] = {}

    def start_step(self, t_norm: float) -> None:
        self._null_logits.clear()
        self.t_norm = float(t_norm)

    def observe(
        self, branch: Branch, layer: LayerKey, logits: np.ndarray, probs: np.ndarray
    ) -> None:
        if branch is Branch.IMAGE_ONLY:
            self._null_logits[layer] = np.array(logits, dtype=float, copy=True)

    def __call__(self, logits: np.ndarray, layer: LayerKey) -> np.ndarray:
        null = self._null_logits.get(layer)
        if null is None:
            raise NoRecords(
                f"no image-only logits cached for layer {layer.name}; "
                "the image-only branch must run before the instruction branch"
            )
        mask = self.token_mask.at_resolution(layer.r)
        return modulate(logits, null, mask, self.alpha, self.t_norm, self.d)

"""Region-of-interest extraction from keyword saliency maps.

The grounding signal lives in the instruction branch's cross-attention at
the first denoising step.  Each keyword's saliency map is blurred, pushed
through an iterative square-and-rescale contrast enhancement, and
thresholded into a binary mask; the per-keyword masks OR together and
upsample to latent resolution for mask-guided sampling.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .capture import Branch, CaptureSession, averaged_map, keyword_map
from .errors import BadKernel, EmptyMaskList
from .instructions import Instruction
from .numerics import minmax_normalize, nearest_resize

MASK_RESOLUTION = 16
TAU_RANGE = (0.4, 0.7)
TAU_DETERMINISTIC = 0.55


def _check_binary(values: np.ndarray) -> None:
    if not np.isin(values, (0.0, 1.0)).all():
        raise ValueError("mask entries must be 0 or 1")


@dataclass(frozen=True)
class KeywordMask:
    """Binary region of interest of one sub-instruction's keyword."""

    values: np.ndarray
    keyword: str
    sub_index: int

    def __post_init__(self):
        _check_binary(self.values)


@dataclass(frozen=True)
class UnionMask:
    """Binary OR of all keyword masks at latent resolution."""

    values: np.ndarray

    def __post_init__(self):
        _check_binary(self.values)


@dataclass(frozen=True)
class ExtractionParams:
    """Knobs for mask extraction.

    When ``tau`` is unset, thresholds are drawn per keyword from
    ``TAU_RANGE`` using ``rng_seed``; with no seed either, the
    deterministic midpoint ``TAU_DETERMINISTIC`` is used so repeated runs
    agree.
    """

    gamma: int = 3
    tau: float | None = None
    gaussian_kernel: int = 3
    gaussian_sigma: float = 1.0
    rng_seed: int | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.tau is not None and not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")


def gaussian_kernel_2d(kernel: int, sigma: float) -> np.ndarray:
    """Explicit normalized 2-D Gaussian weights for an odd kernel size."""
    if kernel < 1 or kernel % 2 == 0:
        raise BadKernel(f"kernel size must be odd and >= 1, got {kernel}")
    if sigma <= 0:
        raise BadKernel(f"sigma must be positive, got {sigma}")
    coords = np.arange(kernel, dtype=float) - kernel // 2
    weights = np.exp(-(coords**2) / (2.0 * sigma**2))
    grid = np.outer(weights, weights)
    return grid / grid.sum()


def gaussian_smooth(
    saliency: np.ndarray, kernel: int = 3, sigma: float = 1.0
) -> np.ndarray:
    """Blur a saliency map (reflect padding) and rescale to [0, 1].

    Makes each patch a blend of its neighborhood before contrast
    enhancement, so single-pixel spikes do not dominate the mask.
    """
    weights = gaussian_kernel_2d(kernel, sigma)
    blurred = ndimage.convolve(np.asarray(saliency, float), weights, mode="reflect")
    return minmax_normalize(blurred)


def enhance(saliency: np.ndarray, gamma: int) -> np.ndarray:
    """Sharpen contrast: square then min-max rescale, repeated ``gamma`` times.

    Squaring keeps entry ordering, so the argmax never moves; binary maps
    with both values present are exact fixed points.
    """
    out = np.asarray(saliency, float)
    for _ in range(int(gamma)):
        out = minmax_normalize(out * out)
    return out


def binarize(saliency: np.ndarray, tau: float) -> np.ndarray:
    """Threshold a saliency map: entries >= tau become 1."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    return (np.asarray(saliency, float) >= tau).astype(float)


def resolve_taus(params: ExtractionParams, count: int) -> list[float]:
    """Per-keyword thresholds under the params' sampling rules."""
    if params.tau is not None:
        return [params.tau] * count
    if params.rng_seed is not None:
        rng = np.random.default_rng(params.rng_seed)
        return [float(t) for t in rng.uniform(*TAU_RANGE, size=count)]
    return [TAU_DETERMINISTIC] * count


def extract_masks(
    session: CaptureSession,
    instruction: Instruction,
    params: ExtractionParams = ExtractionParams(),
    resolution: int = MASK_RESOLUTION,
) -> list[KeywordMask]:
    """Binary region of interest for every sub-instruction.

    Expects instruction-branch records at the mask resolution for the
    session's current step (the first denoising step).  Per keyword the
    pipeline is: averaged attention -> keyword column mean -> Gaussian
    blur -> ``gamma`` enhancement rounds -> threshold.
    """
    avg = averaged_map(session, resolution, Branch.FULL)
    taus = resolve_taus(params, len(instruction.subs))
    masks: list[KeywordMask] = []
    for i, sub in enumerate(instruction.subs):
        saliency = keyword_map(avg, instruction.keyword_token_indices[i])
        saliency = gaussian_smooth(saliency, params.gaussian_kernel, params.gaussian_sigma)
        saliency = enhance(saliency, params.gamma)
        masks.append(KeywordMask(binarize(saliency, taus[i]), sub.keyword, i))
    return masks


def union_and_upsample(
    masks: Sequence[KeywordMask], latent_h: int, latent_w: int
) -> UnionMask:
    """OR all keyword masks, then nearest-neighbor upsample to latent size.

    Nearest-neighbor keeps the result strictly binary, which matters
    because it multiplies noise estimates downstream.
    """
    if not masks:
        raise EmptyMaskList("at least one keyword mask is required")
    shapes = {m.values.shape for m in masks}
    if len(shapes) != 1:
        raise EmptyMaskList(f"keyword masks disagree on shape: {sorted(shapes)}")
    combined = np.zeros_like(masks[0].values)
    for mask in masks:
        combined = np.maximum(combined, mask.values)
    return UnionMask(nearest_resize(combined, latent_h, latent_w))


def _slug(text: str) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9]+", "_", text.strip().lower()).strip("_")
    return cleaned or "keyword"


def write_mask_images(
    masks: Sequence[KeywordMask],
    union: UnionMask | None,
    directory: str,
) -> list[str]:
    """Dump masks as strictly binary 8-bit PNGs (pixel values 0/255)."""
    from .imgio import save_gray_png

    os.makedirs(directory, exist_ok=True)
    written = []
    for mask in masks:
        path = os.path.join(directory, f"mask_{mask.sub_index}_{_slug(mask.keyword)}.png")
        save_gray_png(path, mask.values)
        written.append(path)
    if union is not None:
        path = os.path.join(directory, "union_mask.png")
        save_gray_png(path, union.values)
        written.append(path)
    return written

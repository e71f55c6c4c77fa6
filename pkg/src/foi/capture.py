"""Cross-attention capture: record per-layer logits/probabilities per branch.

A :class:`CaptureSession` is handed to a backend forward pass as its
capture hook.  The session only observes: recorded probabilities are
exactly what the pass used, modulated or not.  Records from earlier steps
are dropped on :meth:`CaptureSession.start_step` unless the step was
retained, so memory stays bounded over a long denoising run.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyIndices, NoRecords, UnsupportedResolution
from .numerics import minmax_normalize


class Branch(Enum):
    """Conditioning configuration of a denoiser forward pass."""

    UNCOND = "uncond"          # no image, no instruction
    IMAGE_ONLY = "image_only"  # image, null instruction
    FULL = "full"              # image and instruction


@dataclass(frozen=True)
class LayerKey:
    """Stable identifier of one cross-attention layer.

    ``r`` is the side length of the square pixel grid at that layer.
    """

    name: str
    r: int


@dataclass(frozen=True)
class AttentionRecord:
    """One layer's attention from one forward pass.

    ``logits`` are the raw query-key products (heads x r*r x N, before
    scaling); ``probs`` are the probabilities the pass actually used, so
    each row over the token axis sums to one.
    """

    layer: LayerKey
    branch: Branch
    logits: np.ndarray
    probs: np.ndarray
    timestep_index: int


class CaptureSession:
    """Collects attention records for chosen branches and resolutions.

    Bound to a single edit run; not shareable across concurrent runs.
    """

    def __init__(self, branches: Iterable[Branch], resolutions: Iterable[int]):
        self.branches = frozenset(branches)
        self.resolutions = frozenset(int(r) for r in resolutions)
        self.records: list[AttentionRecord] = []
        self.current_step = 0
        self._retained: set[int] = set()

    def start_step(self, index: int) -> None:
        """Advance to a new timestep, dropping unretained earlier records."""
        self.records = [r for r in self.records if r.timestep_index in self._retained]
        self.current_step = int(index)

    def retain(self, index: int | None = None) -> None:
        """Keep records of the given step (default: current) across start_step calls."""
        self._retained.add(self.current_step if index is None else int(index))

    def observe(
        self,
        branch: Branch,
        layer: LayerKey,
        logits: np.ndarray,
        probs: np.ndarray,
    ) -> None:
        """Backend capture hook; copies arrays so later passes cannot mutate them."""
        if branch not in self.branches or layer.r not in self.resolutions:
            return
        self.records.append(
            AttentionRecord(
                layer=layer,
                branch=branch,
                logits=np.array(logits, dtype=float, copy=True),
                probs=np.array(probs, dtype=float, copy=True),
                timestep_index=self.current_step,
            )
        )

    def records_at(self, r: int, branch: Branch, step: int | None = None):
        step = self.current_step if step is None else step
        return [
            rec
            for rec in self.records
            if rec.layer.r == r and rec.branch == branch and rec.timestep_index == step
        ]


def open_capture(
    backend,
    branches: Iterable[Branch],
    resolutions: Iterable[int],
) -> CaptureSession:
    """Create a capture session after checking the backend has the layers.

    Raises:
        UnsupportedResolution: the backend has no cross-attention layer at
            one of the requested resolutions.
    """
    available = {key.r for key in backend.attention_layers()}
    missing = sorted(set(int(r) for r in resolutions) - available)
    if missing:
        raise UnsupportedResolution(
            f"backend has no cross-attention layer at r={missing}; "
            f"available: {sorted(available)}"
        )
    return CaptureSession(branches, resolutions)


def averaged_map(session: CaptureSession, r: int, branch: Branch) -> np.ndarray:
    """Mean attention probabilities over all heads and layers at resolution ``r``.

    Uses the session's current step.  Rows of the (r*r, N) result sum to
    one, since each averaged row does.

    Raises:
        NoRecords: nothing was captured at this resolution/branch.
    """
    recs = session.records_at(r, branch)
    if not recs:
        raise NoRecords(f"no records at r={r} for branch {branch.value}")
    stacked = np.concatenate([rec.probs for rec in recs], axis=0)
    return stacked.mean(axis=0)


def keyword_map(avg: np.ndarray, keyword_token_indices: Sequence[int]) -> np.ndarray:
    """Spatial saliency of a keyword: mean over its token columns, min-max scaled.

    Multi-token keywords average their per-token maps.  The result is an
    (r, r) array in [0, 1]; a constant column collapses to all zeros.

    Raises:
        EmptyIndices: no token indices given, or an index is out of range.
    """
    indices = list(keyword_token_indices)
    if not indices:
        raise EmptyIndices("keyword has no token indices")
    n = avg.shape[1]
    if any(j < 0 or j >= n for j in indices):
        raise EmptyIndices(f"token indices {indices} out of range for N={n}")
    column = avg[:, indices].mean(axis=1)
    r = math.isqrt(column.shape[0])
    if r * r != column.shape[0]:
        raise ValueError(f"pixel axis {column.shape[0]} is not a square grid")
    return minmax_normalize(column.reshape(r, r))


def write_attention_dump(session: CaptureSession, directory: str) -> list[str]:
    """Write every record as heatmap PNG + raw float32 arrays + JSON sidecar.

    Per record ``attn_<branch>_<layer>_step<k>`` the dump holds:
    ``.png`` (8-bit grayscale heatmap, mean over heads and tokens),
    ``.logits.f32`` / ``.probs.f32`` (little-endian float32, C order,
    shape heads x r*r x N), and ``.json`` with
    ``{layer, branch, heads, r, N, timestep}``.
    """
    from .imgio import save_gray_png  # local import to keep PIL optional here

    os.makedirs(directory, exist_ok=True)
    written: list[str] = []
    for rec in session.records:
        heads, _, n = rec.probs.shape
        base = f"attn_{rec.branch.value}_{rec.layer.name}_step{rec.timestep_index}"
        heat = minmax_normalize(rec.probs.mean(axis=(0, 2)).reshape(rec.layer.r, -1))
        png_path = os.path.join(directory, base + ".png")
        save_gray_png(png_path, heat)
        for tag, arr in (("logits", rec.logits), ("probs", rec.probs)):
            raw_path = os.path.join(directory, f"{base}.{tag}.f32")
            arr.astype("<f4").tofile(raw_path)
            written.append(raw_path)
        header = {
            "layer": rec.layer.name,
            "branch": rec.branch.value,
            "heads": int(heads),
            "r": int(rec.layer.r),
            "N": int(n),
            "timestep": int(rec.timestep_index),
        }
        json_path = os.path.join(directory, base + ".json")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=2)
        written.extend([png_path, json_path])
    return written

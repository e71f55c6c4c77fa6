"""Similarity metrics over injected embeddings.

Cosine-based image and direction similarities, decoupled from any
pretrained encoder through the :class:`EmbeddingProvider` interface.  The
bundled ``toy`` provider embeds images by pooled pixel statistics and text
by hashed bag-of-words, enough to exercise evaluation plumbing
deterministically; CLIP/DINOv2 slots exist as adapters that need local
assets.
"""

from __future__ import annotations

import abc
import csv
import io
import json
import os
import zlib

import numpy as np

from .errors import ProviderUnavailable, ZeroDelta, ZeroVector
from .imgio import load_rgb


def _cosine(a: np.ndarray, b: np.ndarray, error) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise error(f"vector dims differ: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise error("cosine similarity of a zero-norm vector is undefined")
    return float(np.dot(a, b) / (norm_a * norm_b))


def image_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two embedding vectors, in [-1, 1]."""
    return _cosine(a, b, ZeroVector)


def directional_similarity(
    img_src: np.ndarray,
    img_edit: np.ndarray,
    txt_src: np.ndarray,
    txt_edit: np.ndarray,
) -> float:
    """Cosine between the image-embedding delta and the text-embedding delta.

    Measures how well the change applied to the image lines up with the
    change described by the captions.
    """
    img_delta = np.asarray(img_edit, float) - np.asarray(img_src, float)
    txt_delta = np.asarray(txt_edit, float) - np.asarray(txt_src, float)
    return _cosine(img_delta, txt_delta, ZeroDelta)


class EmbeddingProvider(abc.ABC):
    """Maps images and texts to unit-norm vectors of a fixed dimension."""

    name: str = "provider"

    @abc.abstractmethod
    def embed_image(self, image: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def embed_text(self, text: str) -> np.ndarray: ...


class ToyEmbeddingProvider(EmbeddingProvider):
    """Deterministic stand-in embeddings, no learned weights.

    Images: 8x8 block-mean grayscale, flattened to 64 dims.  Text:
    hashed bag-of-words counts over 64 buckets.  Both unit-normalized.
    """

    name = "toy"
    dim = 64

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        from .imgio import resize_bilinear

        arr = resize_bilinear(np.asarray(image, dtype=np.uint8), 8, 8)
        gray = arr.astype(float).mean(axis=2).reshape(-1)
        norm = np.linalg.norm(gray)
        if norm == 0.0:
            raise ZeroVector("image embeds to a zero vector")
        return gray / norm

    def embed_text(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dim)
        for word in text.lower().split():
            counts[zlib.crc32(word.encode("utf-8")) % self.dim] += 1.0
        norm = np.linalg.norm(counts)
        if norm == 0.0:
            raise ZeroVector(f"text {text!r} embeds to a zero vector")
        return counts / norm


class _AssetBackedProvider(EmbeddingProvider):
    """Placeholder slot for encoders that need local pretrained assets."""

    env_var = ""

    def __init__(self):
        raise ProviderUnavailable(
            f"provider {self.name!r} needs local pretrained assets; "
            f"set {self.env_var} and wire up the encoder to use it"
        )

    def embed_image(self, image):  # pragma: no cover - unreachable
        raise NotImplementedError

    def embed_text(self, text):  # pragma: no cover - unreachable
        raise NotImplementedError


class ClipProvider(_AssetBackedProvider):
    name = "clip"
    env_var = "FOI_CLIP_PATH"


class Dinov2Provider(_AssetBackedProvider):
    name = "dinov2"
    env_var = "FOI_DINOV2_PATH"


_PROVIDERS = {
    "toy": ToyEmbeddingProvider,
    "clip": ClipProvider,
    "dinov2": Dinov2Provider,
}


def provider_names() -> list[str]:
    return sorted(_PROVIDERS)


def get_provider(name: str) -> EmbeddingProvider:
    try:
        factory = _PROVIDERS[name]
    except KeyError:
        raise ProviderUnavailable(
            f"unknown provider {name!r}; choose from {provider_names()}"
        ) from None
    return factory()


def load_pairs_manifest(path: str) -> list[dict]:
    """Read an evaluation manifest: a JSON list of pair records.

    Each record holds ``source_image``/``edited_image`` paths (relative
    paths resolve against the manifest's directory) and
    ``source_text``/``edited_text`` captions.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError("pairs manifest must be a JSON list")
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    for i, record in enumerate(raw):
        try:
            pairs.append(
                {
                    "source_image": os.path.join(base, record["source_image"]),
                    "edited_image": os.path.join(base, record["edited_image"]),
                    "source_text": record["source_text"],
                    "edited_text": record["edited_text"],
                }
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"bad manifest record #{i}: {exc}") from exc
    return pairs


def evaluate_pair(
    provider: EmbeddingProvider,
    source_image: np.ndarray,
    edited_image: np.ndarray,
    source_text: str,
    edited_text: str,
) -> dict:
    img_src = provider.embed_image(source_image)
    img_edit = provider.embed_image(edited_image)
    txt_src = provider.embed_text(source_text)
    txt_edit = provider.embed_text(edited_text)
    return {
        "image_similarity": image_similarity(img_src, img_edit),
        "directional_similarity": directional_similarity(
            img_src, img_edit, txt_src, txt_edit
        ),
    }


CSV_COLUMNS = ("source_image", "edited_image", "image_similarity", "directional_similarity")


def evaluate_manifest(path: str, provider: EmbeddingProvider) -> list[dict]:
    rows = []
    for pair in load_pairs_manifest(path):
        scores = evaluate_pair(
            provider,
            load_rgb(pair["source_image"]),
            load_rgb(pair["edited_image"]),
            pair["source_text"],
            pair["edited_text"],
        )
        rows.append(
            {
                "source_image": pair["source_image"],
                "edited_image": pair["edited_image"],
                **scores,
            }
        )
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()

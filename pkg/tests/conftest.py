import numpy as np
import pytest

from foi.backends import ToyBackend
from foi.capture import Branch, CaptureSession, LayerKey


@pytest.fixture(scope="session")
def toy_backend():
    return ToyBackend()


@pytest.fixture()
def test_image():
    """Deterministic 128x128 RGB test pattern with smooth structure."""
    yy, xx = np.mgrid[0:128, 0:128].astype(float) / 127.0
    img = np.stack([yy, xx, 0.5 * (yy + xx)], axis=2)
    return np.round(img * 255.0).astype(np.uint8)


def make_session_with_probs(probs, layer=LayerKey("xattn16", 16), branch=Branch.FULL):
    """Session holding one record whose probs are given (logits zeroed)."""
    session = CaptureSession({branch}, {layer.r})
    session.start_step(0)
    session.observe(branch, layer, np.zeros_like(probs), probs)
    return session


def gaussian_blob(r=16, center=(8, 8), sigma=2.0):
    """Analytic 2-D Gaussian bump with peak exactly 1.0 at the center pixel."""
    yy, xx = np.mgrid[0:r, 0:r].astype(float)
    return np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2.0 * sigma**2))


def blob_attention_probs(blob, keyword_column, n_tokens=16, heads=1, share=0.5):
    """Row-stochastic attention whose keyword column is proportional to the blob."""
    flat = blob.reshape(-1)
    probs = np.empty((heads, flat.size, n_tokens))
    probs[:, :, :] = ((1.0 - share * flat) / (n_tokens - 1))[None, :, None]
    probs[:, :, keyword_column] = share * flat
    return probs

"""Denoiser backends and their registry."""

from __future__ import annotations

from ..errors import BackendUnavailable
from .base import DenoiserBackend
from .ip2p import Ip2pBackend
from .toy import HashingTokenizer, ToyBackend, ToyBackendConfig

_BACKENDS = {
    "toy": ToyBackend,
    "real": Ip2pBackend,
}


def backend_names() -> list[str]:
    return sorted(_BACKENDS)


def make_backend(name: str, **kwargs) -> DenoiserBackend:
    """Construct a backend by name ('toy' or 'real').

    Raises:
        BackendUnavailable: unknown name, or the backend cannot be built
            in this environment (e.g. no local weights).
    """
    try:
        factory = _BACKENDS[name]
    except KeyError:
        raise BackendUnavailable(
            f"unknown backend {name!r}; choose from {backend_names()}"
        ) from None
    return factory(**kwargs)


__all__ = [
    "DenoiserBackend",
    "HashingTokenizer",
    "Ip2pBackend",
    "ToyBackend",
    "ToyBackendConfig",
    "backend_names",
    "make_backend",
]

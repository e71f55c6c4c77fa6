"""HTTP service layer (FastAPI) over the editing pipeline."""

from .app import create_app

__all__ = ["create_app"]

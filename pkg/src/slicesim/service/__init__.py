"""HTTP service: FastAPI app plus workspace management."""

from .app import create_app
from .state import Workspace

__all__ = ["create_app", "Workspace"]

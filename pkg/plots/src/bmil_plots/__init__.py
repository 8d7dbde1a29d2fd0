"""Read-only figure rendering for bmil experiment outputs."""

from .figures import FigureSpec, SchemaError, render

__version__ = "0.1.0"
__all__ = ["FigureSpec", "SchemaError", "render"]

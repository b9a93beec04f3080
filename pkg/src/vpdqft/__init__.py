"""One-loop divergence machinery for a gauge theory of volume-preserving inner diffeomorphisms."""
from __future__ import annotations

__version__ = "0.1.0"

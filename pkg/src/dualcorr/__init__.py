"""Video referring-expression grounding with inter-frame and cross-modal patch correspondence."""

__version__ = "0.1.0"

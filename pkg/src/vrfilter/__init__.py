"""Space-variant variance-reduction filtering with atomic-kernel filter banks."""

__version__ = "0.1.0"

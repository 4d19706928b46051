"""Multi-scale affinity clustering for meshed point clouds."""

__version__ = "0.1.0"

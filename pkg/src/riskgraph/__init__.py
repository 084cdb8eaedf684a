"""Graph-based transaction fraud scoring with calibrated risk outputs."""

__version__ = "0.1.0"

"""Mission-specific reasoning knowledge graphs for video anomaly detection,
with on-device adaptation of their token embeddings under anomaly-trend shifts."""

__version__ = "0.1.0"

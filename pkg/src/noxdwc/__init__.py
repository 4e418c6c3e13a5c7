"""Physics-based NOx prediction from OBD logs and divergent-window pattern mining."""

__version__ = "0.1.0"

"""Next-location prediction across location granularities, target criteria and behavioural features."""

__version__ = "0.1.0"

"""Time-free closed-loop electromagnetic haptic guidance engine."""

__version__ = "0.1.0"

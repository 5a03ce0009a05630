"""Online continual learning with compressed intermediate-feature replay."""

__version__ = "0.1.0"

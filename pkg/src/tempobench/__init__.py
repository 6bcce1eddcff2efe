"""tempobench: time-consistent PR-derived benchmark construction and matched A/B evaluation."""

__version__ = "0.1.0"

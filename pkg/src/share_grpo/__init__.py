"""GRPO and Share-GRPO on a synthetic grid-sum reasoning task."""

__version__ = "0.1.0"

"""Consensus-driven online feature augmentation for discrete VLN, at desk scale."""

__version__ = "0.1.0"

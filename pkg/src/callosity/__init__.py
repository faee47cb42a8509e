"""Whale passport-photo preprocessing, kNN/PCA/LDA baselines and a numpy CNN."""

__version__ = "0.1.0"

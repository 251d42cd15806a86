"""Desk-scale DAS signal classification: synthesis, residual classifiers,
data-parallel training, sweeps and range-based model selection."""

__version__ = "0.1.0"

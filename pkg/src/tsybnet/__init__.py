"""Quantized sparse ReLU set classifiers under the Tsybakov noise condition."""

__version__ = "0.1.0"

"""Subword tokenization, QRNN language models with three-stage transfer to
classifiers, and classifier bootstrapping from teacher pseudo labels."""

__version__ = "0.1.0"

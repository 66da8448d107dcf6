"""Toolkit for graphemic lexicons, WER scoring and ASR system combination."""

__version__ = "0.1.0"

"""Desk-scale bilingual (English/Hindi) hybrid ASR workbench.

SplitHead-with-attention acoustic models on a small autodiff core, staged
training and distillation, Witten-Bell n-gram LMs with interpolation, a toy
word-level decoder and attention-weight analysis, all on synthetic data.
"""
from ._accel import backend
from .errors import ConfigError, DataError, ServiceError, ShaAsrError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "ServiceError", "ShaAsrError", "backend", "__version__"]

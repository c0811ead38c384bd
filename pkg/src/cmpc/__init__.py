"""Referring image segmentation with progressive cross-modal comprehension."""

from .config import ABLATION_ROWS, RunConfig
from .estimator import ReferringSegmenter

__all__ = ["ABLATION_ROWS", "ReferringSegmenter", "RunConfig"]

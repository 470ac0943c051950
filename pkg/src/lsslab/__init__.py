"""Desk-scale lumbar spinal stenosis lab.

Report-conditioned pseudo-masks, a patch cross-attention toy segmenter
trained with a PID-controlled focal Tversky loss, area-based grading,
template reports and the evaluation metric suite.
"""
from .errors import (ConfigError, DegenerateInputError, InputError, LoadError, LssError,
                     NumericError, ParameterError, ParseError, ShapeError)
from .pseudomask import Grade

__version__ = "0.1.0"

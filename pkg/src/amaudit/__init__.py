"""Audit toolkit for attribution maps of image classifiers.

Computes six attribution methods, scores their mutual consistency, their
faithfulness under pixel insertion and deletion, their alignment with
annotation masks and their sharing of regions across classes.
"""

from .core import AnnotationMask, AttributionMap, ImageArray, normalize_map
from .errors import AmauditError

__version__ = "0.1.0"

"""Point-supervised temporal action localization on snippet features."""

from .types import ActionInstance, FeatureSequence, PointAnnotation, ScoredPrediction, tiou

__version__ = "0.1.0"

__all__ = ["ActionInstance", "FeatureSequence", "PointAnnotation", "ScoredPrediction", "tiou"]

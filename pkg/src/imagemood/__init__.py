"""Interpretable image features, tag clustering, correlation analysis and
multi-task prediction of mental-health scores from social-media images."""

__version__ = "0.1.0"

"""Desk-scale face anti-spoofing with synthetic unknown-attack samples.

A from-scratch numpy autodiff core, grouped MLP backbones, a twin sample
generator trained in alternation with the feature extractor, synthetic
multi-domain data and the usual FAS metrics.
"""

__version__ = "0.1.0"

"""Dual-branch single-image shadow removal.

An identity-mapping branch reconstructs the input and supplies multi-scale
features; an iterative de-shadow branch consumes image+mask and removes the
shadow over several refinement passes; adaptive aggregation gates fuse the
two feature streams and emit soft shadow masks.  Training, region-partitioned
evaluation, and training-dynamics diagnostics are included.
"""

__version__ = "0.1.0"

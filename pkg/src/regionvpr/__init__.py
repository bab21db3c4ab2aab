"""Two-stage visual place recognition engine.

Global retrieval by Sinkhorn-aggregated descriptors, re-ranked with
reliability-weighted mutual nearest-neighbor matching over precomputed
feature maps (VPRF containers).
"""
from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]

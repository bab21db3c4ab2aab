"""Domain types for the feature pipeline.

All tensors are NumPy arrays; records are immutable after load and safe to
share across threads read-only. validate() raises ValidationError naming the
failing field, so container reads can surface structured errors.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ATOL = 1e-6


class ValidationError(ValueError):
    """An invariant violation, carrying the failing field name."""

    def __init__(self, field_name, message):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


class ContainerError(ValueError):
    """Malformed container bytes (bad magic, version, truncated section)."""


class DegenerateRegionError(ValueError):
    """A region pooling collapsed to a zero vector."""


def _require_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValidationError(name, "non-finite values")


@dataclass
class PatchGrid:
    """H_p x W_p grid of D-dimensional backbone patch tokens."""

    height_p: int
    width_p: int
    dim: int
    tokens: np.ndarray  # (H_p, W_p, D) float32

    @property
    def n_tokens(self):
        return self.height_p * self.width_p

    def flat(self):
        """Tokens as an (n, D) view."""
        return self.tokens.reshape(self.n_tokens, self.dim)

    def validate(self):
        if self.height_p < 1 or self.width_p < 1 or self.dim < 1:
            raise ValidationError("patch_grid", "non-positive dimensions")
        if self.tokens.shape != (self.height_p, self.width_p, self.dim):
            raise ValidationError("patch_grid.tokens", "shape mismatch")
        _require_finite("patch_grid.tokens", self.tokens)


@dataclass
class ClassToken:
    values: np.ndarray  # (D,)

    def validate(self):
        if self.values.ndim != 1:
            raise ValidationError("class_token", "expected 1-D vector")
        _require_finite("class_token", self.values)


@dataclass
class ClusterParams:
    """Learned aggregation parameters (consumed as data, never trained here)."""

    weights: np.ndarray        # (M, D) cluster score weights
    biases: np.ndarray         # (M,)
    dustbin_score: float
    sinkhorn_iters: int = 3
    projection: np.ndarray = None        # (D, l) per-cluster token projection
    class_projection: Optional[np.ndarray] = None  # (D, g); identity-truncation if None
    class_dim: int = 256

    @property
    def n_clusters(self):
        return self.weights.shape[0]

    @property
    def reduced_dim(self):
        return self.projection.shape[1]

    def validate(self):
        if self.weights.ndim != 2 or self.weights.shape[0] < 1:
            raise ValidationError("cluster_params.weights", "need (M, D) with M >= 1")
        m, d = self.weights.shape
        if self.biases.shape != (m,):
            raise ValidationError("cluster_params.biases", "length != M")
        if self.sinkhorn_iters < 1:
            raise ValidationError("cluster_params.sinkhorn_iters", "must be >= 1")
        if self.projection is None or self.projection.ndim != 2 \
                or self.projection.shape[0] != d or self.projection.shape[1] < 1:
            raise ValidationError("cluster_params.projection", "need (D, l) with l >= 1")
        if self.class_projection is not None and self.class_projection.shape[0] != d:
            raise ValidationError("cluster_params.class_projection", "first dim != D")
        if self.class_dim < 1:
            raise ValidationError("cluster_params.class_dim", "must be >= 1")
        for name in ("weights", "biases", "projection"):
            _require_finite(f"cluster_params.{name}", getattr(self, name))
        if not math.isfinite(self.dustbin_score):
            raise ValidationError("cluster_params.dustbin_score", "non-finite")


@dataclass
class AssignmentResult:
    """Sinkhorn output: per-token cluster probabilities plus dustbin."""

    probs: np.ndarray     # (n, M+1), rows sum to 1, last column = dustbin
    salience: np.ndarray  # (n,), sum of salient-cluster probabilities
    mask_a: np.ndarray    # (H_p, W_p) salience reshaped to the patch grid

    def validate(self):
        if self.probs.ndim != 2 or self.probs.shape[1] < 2:
            raise ValidationError("assignment.probs", "need (n, M+1)")
        _require_finite("assignment.probs", self.probs)
        rows = self.probs.sum(axis=1)
        if not np.allclose(rows, 1.0, atol=ATOL):
            raise ValidationError("assignment.probs", "row sums differ from 1")
        if self.salience.shape != (self.probs.shape[0],):
            raise ValidationError("assignment.salience", "length != n")
        if not np.allclose(self.salience, 1.0 - self.probs[:, -1], atol=ATOL):
            raise ValidationError("assignment.salience", "complement identity violated")
        if self.mask_a.size != self.probs.shape[0]:
            raise ValidationError("assignment.mask_a", "size != n")
        if np.any(self.mask_a < -ATOL) or np.any(self.mask_a > 1.0 + ATOL):
            raise ValidationError("assignment.mask_a", "values outside [0, 1]")


@dataclass
class ReliabilityMap:
    """Per-position match-reliability probabilities at 1/8 input resolution."""

    values: np.ndarray  # (H/8, W/8) in [0, 1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def validate(self):
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValidationError("reliability", "need non-empty 2-D map")
        _require_finite("reliability", self.values)
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ValidationError("reliability", "values outside [0, 1]")


@dataclass
class DiscriminativeMask:
    """Fused mask (reliability x salience) plus its binarized top-k form."""

    values: np.ndarray        # (H_p, W_p) in [0, 1]
    bin: Optional[np.ndarray] = None  # boolean (H_p, W_p)
    top_fraction: float = 1.0

    def validate(self):
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValidationError("mask.values", "need non-empty 2-D map")
        _require_finite("mask.values", self.values)
        if np.any(self.values < -ATOL) or np.any(self.values > 1.0 + ATOL):
            raise ValidationError("mask.values", "values outside [0, 1]")
        if not (0.0 < self.top_fraction <= 1.0):
            raise ValidationError("mask.top_fraction", "outside (0, 1]")
        if self.bin is not None:
            if self.bin.shape != self.values.shape:
                raise ValidationError("mask.bin", "shape mismatch")
            want = math.ceil(self.top_fraction * self.values.size)
            got = int(self.bin.sum())
            if got != want:
                raise ValidationError("mask.bin", f"cardinality {got}, expected {want}")


@dataclass
class GlobalDescriptor:
    values: np.ndarray  # unit-L2 vector, length M*l + g

    def validate(self):
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValidationError("global_descriptor", "need non-empty vector")
        _require_finite("global_descriptor", self.values)
        norm = float(np.linalg.norm(self.values))
        if abs(norm - 1.0) > ATOL:
            raise ValidationError("global_descriptor", f"norm {norm} differs from 1")


@dataclass
class LocalFeatureSet:
    """Masked subset of dense decoder features used for re-ranking."""

    positions: np.ndarray    # (K, 2) int rows/cols on the dense grid
    descriptors: np.ndarray  # (K, 128) float32, unit-L2 rows
    reliability: np.ndarray  # (K,) in [0, 1]
    grid_h: int              # dense grid height the positions refer to
    grid_w: int

    @property
    def count(self):
        return self.positions.shape[0]

    def validate(self):
        k = self.positions.shape[0]
        if self.positions.ndim != 2 or (k and self.positions.shape[1] != 2):
            raise ValidationError("local.positions", "need (K, 2)")
        if self.descriptors.shape[0] != k or self.reliability.shape[0] != k:
            raise ValidationError("local.descriptors", "K mismatch across fields")
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValidationError("local.grid", "non-positive dense grid dims")
        if k == 0:
            return
        _require_finite("local.descriptors", self.descriptors)
        norms = np.linalg.norm(self.descriptors, axis=1)
        if not np.allclose(norms, 1.0, atol=ATOL):
            raise ValidationError("local.descriptors", "rows not unit-L2")
        if np.any(self.reliability < 0.0) or np.any(self.reliability > 1.0):
            raise ValidationError("local.reliability", "values outside [0, 1]")
        if np.any(self.positions < 0) or np.any(self.positions[:, 0] >= self.grid_h) \
                or np.any(self.positions[:, 1] >= self.grid_w):
            raise ValidationError("local.positions", "outside the dense grid")


@dataclass
class ImageRecord:
    """One image's precomputed features plus its geotag or frame index."""

    image_id: str
    geotag: Optional[tuple] = None        # (lat, lon) degrees
    frame_index: Optional[int] = None
    global_descriptor: Optional[GlobalDescriptor] = None
    local_features: Optional[LocalFeatureSet] = None
    mask: Optional[DiscriminativeMask] = None
    assignment: Optional[AssignmentResult] = None  # retained for mining
    patch_grid: Optional[PatchGrid] = None
    class_token: Optional[ClassToken] = None
    reliability: Optional[ReliabilityMap] = None
    flags: list = field(default_factory=list)

    def validate(self):
        if not self.image_id:
            raise ValidationError("image_id", "empty")
        if (self.geotag is None) == (self.frame_index is None):
            raise ValidationError("geotag", "exactly one of geotag/frame_index required")
        for name in ("global_descriptor", "local_features", "mask", "assignment",
                     "patch_grid", "class_token", "reliability"):
            value = getattr(self, name)
            if value is not None:
                value.validate()

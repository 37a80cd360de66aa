"""Adaptive content-style blending.

Two mask extractors decide where style may be written into the content
features, and adaptive instance normalization decides what gets written:

* head-level: per head, the covariance statistics of the style and content
  features are compared; the n heads whose feature distributions differ the
  most are selected wholesale.
* spatial-level: per head and channel, positions whose content activation
  strictly exceeds alpha times the channel's spatial maximum are treated as
  load-bearing structure and preserved (mask 0 means preserve).

The two masks are fused elementwise (OR by default) and the blend copies the
content value where the fused mask is 0 and the style-normalized value where
it is 1. Masks are materialized as dense {0, 1} blocks of the full
heads x positions x head_dim shape so fusion and blending stay shape-uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError
from .numeric import Matrix
from .sica import FeatureMap, siamese_attend

__all__ = [
    "BlendConfig",
    "HeadMask",
    "SpatialMask",
    "FusedMask",
    "AsiLayerResult",
    "covariance",
    "head_distance",
    "head_distances",
    "extract_head_mask",
    "extract_spatial_mask",
    "fuse_masks",
    "adain",
    "blend",
    "asi_layer",
]


@dataclass(frozen=True)
class BlendConfig:
    """Free parameters of the blending stage.

    n: number of heads selected wholesale for blending.
    alpha: spatial threshold coefficient; positions above alpha * channel max
        are preserved.
    eps: guard added to the normalizing standard deviation's denominator.
    fusion: "or" combines the masks permissively (a selected head blends at
        every position); "and" is the conservative variant requiring both
        masks to agree.
    """

    n: int = 6
    alpha: float = 0.7
    eps: float = 1e-5
    fusion: str = "or"

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ConfigError(f"n must be >= 0, got {self.n}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.fusion not in ("or", "and"):
            raise ConfigError(f"fusion must be 'or' or 'and', got {self.fusion!r}")


@dataclass(frozen=True)
class HeadMask:
    """Per-head selection flags; constant across each selected head's slice."""

    selected: tuple[bool, ...]

    @property
    def heads(self) -> int:
        return len(self.selected)

    @property
    def selected_count(self) -> int:
        return sum(self.selected)

    def dense(self, positions: int, head_dim: int) -> np.ndarray:
        """Materialize as a {0, 1} float block of shape (heads, positions, head_dim)."""
        flags = np.asarray(self.selected, dtype=np.float64)
        return np.ascontiguousarray(
            np.broadcast_to(flags[:, None, None], (self.heads, positions, head_dim))
        )


def _validate_binary_block(name: str, data: np.ndarray) -> np.ndarray:
    a = np.array(data, dtype=np.float64, order="C", copy=True)
    if a.ndim != 3:
        raise ShapeError(f"{name} requires 3-D data, got {a.ndim}-D")
    if not np.isin(a, (0.0, 1.0)).all():
        raise ValueError(f"{name} entries must be exactly 0.0 or 1.0")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpatialMask:
    """Dense {0, 1} block; 0 marks positions preserved as crucial structure."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _validate_binary_block("SpatialMask", self.data))


@dataclass(frozen=True)
class FusedMask:
    """Dense {0, 1} block; 1 means blend style in, 0 means keep content."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _validate_binary_block("FusedMask", self.data))

    @property
    def blended_fraction(self) -> float:
        return float(self.data.mean())


def covariance(f_head: Matrix) -> Matrix:
    """Spatial covariance of one head's m x d feature block.

    Evaluated in Gram form, (F^T F - (1^T F)^T (1^T F) / m) / (m - 1), with a
    fixed contraction order; the result is exactly symmetric. Accurate for
    moderately scaled features (the Gram form cancels badly only for means
    that dwarf the spread).
    """
    m = f_head.rows
    if m < 2:
        raise DegenerateInputError(f"covariance needs at least 2 rows, got {m}")
    gram = np.einsum("ki,kj->ij", f_head.a, f_head.a)
    colsum = f_head.a.sum(axis=0)
    return Matrix((gram - np.outer(colsum, colsum) / m) / (m - 1))


def head_distance(f_s_head: Matrix, f_c_head: Matrix) -> float:
    """Distribution distance between two feature blocks of one head.

    Squared Frobenius norm of the covariance difference, normalized by
    4 d**2 where d is the per-head channel dimension. Symmetric in its
    arguments and zero when the blocks share their covariance.
    """
    if (f_s_head.rows, f_s_head.cols) != (f_c_head.rows, f_c_head.cols):
        raise ShapeError(
            f"head_distance: shapes differ, {f_s_head.rows}x{f_s_head.cols} vs "
            f"{f_c_head.rows}x{f_c_head.cols}"
        )
    d = f_s_head.cols
    diff = covariance(f_s_head).a - covariance(f_c_head).a
    return float(np.einsum("ij,ij->", diff, diff) / (4.0 * d * d))


def head_distances(f_s: FeatureMap, f_c: FeatureMap) -> np.ndarray:
    """Covariance distance per head, as a length-h float array."""
    _check_same_shape(f_s, f_c)
    return np.array([head_distance(f_s.head(i), f_c.head(i)) for i in range(f_s.heads)])


def _check_same_shape(a: FeatureMap, b: FeatureMap) -> None:
    if a.a.shape != b.a.shape:
        raise ShapeError(f"feature maps differ in shape: {a.a.shape} vs {b.a.shape}")


def _select_top_heads(distances: np.ndarray, n: int) -> HeadMask:
    # Descending distance, ties broken toward the lower head index.
    order = sorted(range(len(distances)), key=lambda i: (-distances[i], i))
    chosen = set(order[:n])
    return HeadMask(tuple(i in chosen for i in range(len(distances))))


def extract_head_mask(f_s: FeatureMap, f_c: FeatureMap, cfg: BlendConfig) -> HeadMask:
    """Select the cfg.n heads whose style/content covariances differ most."""
    _check_same_shape(f_s, f_c)
    if cfg.n > f_s.heads:
        raise ConfigError(f"n={cfg.n} exceeds head count {f_s.heads}")
    return _select_top_heads(head_distances(f_s, f_c), cfg.n)


def extract_spatial_mask(f_c: FeatureMap, cfg: BlendConfig) -> SpatialMask:
    """Zero out (preserve) positions strictly above alpha times the channel max.

    The criteria point per head and channel is the max over positions of the
    content features; the comparison is strict, so with alpha < 1 the argmax
    position itself is preserved whenever the channel max is positive. When a
    channel max is <= 0 and alpha < 1 the threshold exceeds the max, nothing
    qualifies, and that channel's mask is all ones; the formula is applied as
    written rather than special-cased.
    """
    peaks = f_c.a.max(axis=1, keepdims=True)
    tau = cfg.alpha * peaks
    return SpatialMask(np.where(f_c.a > tau, 0.0, 1.0))


def fuse_masks(head: HeadMask, spatial: SpatialMask, fusion: str = "or") -> FusedMask:
    """Combine the two masks elementwise.

    With "or" (the default), selected heads blend at every position and
    unselected heads blend only where the spatial mask permits. "and" is the
    conservative variant: only coordinates both masks agree on are blended.
    """
    h, m, d = spatial.data.shape
    if head.heads != h:
        raise ShapeError(f"head mask has {head.heads} heads, spatial mask has {h}")
    dense = head.dense(m, d)
    if fusion == "or":
        return FusedMask(np.maximum(dense, spatial.data))
    if fusion == "and":
        return FusedMask(np.minimum(dense, spatial.data))
    raise ConfigError(f"fusion must be 'or' or 'and', got {fusion!r}")


def adain(f_c_head: Matrix, f_s_head: Matrix, eps: float) -> Matrix:
    """Renormalize content features to the style's per-channel moments.

    out[:, c] = sigma_s[c] * (f_c[:, c] - mu_c[c]) / (sigma_c[c] + eps) + mu_s[c]

    Moments are taken over positions; sigma is the population standard
    deviation. eps guards the division for near-constant channels and is
    added to the denominator only, leaving the style scale untouched.
    """
    if (f_c_head.rows, f_c_head.cols) != (f_s_head.rows, f_s_head.cols):
        raise ShapeError(
            f"adain: shapes differ, {f_c_head.rows}x{f_c_head.cols} vs "
            f"{f_s_head.rows}x{f_s_head.cols}"
        )
    mu_c = f_c_head.a.mean(axis=0)
    sd_c = f_c_head.a.std(axis=0)
    mu_s = f_s_head.a.mean(axis=0)
    sd_s = f_s_head.a.std(axis=0)
    return Matrix(sd_s * (f_c_head.a - mu_c) / (sd_c + eps) + mu_s)


def blend(f_c: FeatureMap, f_s: FeatureMap, mask: FusedMask, cfg: BlendConfig) -> FeatureMap:
    """Mask-guided interpolation between content and style-normalized features.

    Because the mask is binary, the blend is implemented as coordinate
    selection: every output entry is bit-identical to either the content
    entry (mask 0) or the style-normalized entry (mask 1); no third value
    can appear.
    """
    _check_same_shape(f_c, f_s)
    if mask.data.shape != f_c.a.shape:
        raise ShapeError(f"mask shape {mask.data.shape} differs from features {f_c.a.shape}")
    out = np.empty_like(f_c.a)
    for i in range(f_c.heads):
        styled = adain(f_c.head(i), f_s.head(i), cfg.eps)
        out[i] = np.where(mask.data[i] == 1.0, styled.a, f_c.a[i])
    return FeatureMap(out)


@dataclass(frozen=True)
class AsiLayerResult:
    """Output of one full layer application, with intermediates for inspection."""

    f_out: FeatureMap
    f_s: FeatureMap
    f_c: FeatureMap
    distances: np.ndarray
    head_mask: HeadMask
    spatial_mask: SpatialMask
    fused_mask: FusedMask


def asi_layer(
    q: FeatureMap,
    k_s: FeatureMap,
    v_s: FeatureMap,
    k_c: FeatureMap,
    v_c: FeatureMap,
    cfg: BlendConfig,
) -> AsiLayerResult:
    """Dual-track attention, mask extraction, fusion, and blending in sequence."""
    f_s, f_c = siamese_attend(q, k_s, v_s, k_c, v_c)
    if cfg.n > f_s.heads:
        raise ConfigError(f"n={cfg.n} exceeds head count {f_s.heads}")
    distances = head_distances(f_s, f_c)
    head_mask = _select_top_heads(distances, cfg.n)
    spatial_mask = extract_spatial_mask(f_c, cfg)
    fused = fuse_masks(head_mask, spatial_mask, cfg.fusion)
    f_out = blend(f_c, f_s, fused, cfg)
    return AsiLayerResult(
        f_out=f_out,
        f_s=f_s,
        f_c=f_c,
        distances=distances,
        head_mask=head_mask,
        spatial_mask=spatial_mask,
        fused_mask=fused,
    )

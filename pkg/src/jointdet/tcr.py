"""Temporal coherence regularization.

Adjacent frames of a high-frame-rate video carry nearly identical
semantics, so the encoder's feature for the middle frame is pulled toward
the arithmetic mean of its neighbours' features.  Distance is cosine,
computed per spatial location over the channel axis and averaged over the
feature map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

# A feature map is a channels x height x width tensor produced by an encoder.
FeatureMap = torch.Tensor

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True)
class TcrConfig:
    gamma: float = 0.01
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def estimate_midframe(f_prev: FeatureMap, f_next: FeatureMap) -> FeatureMap:
    """Elementwise arithmetic mean of the two neighbour features."""
    if f_prev.shape != f_next.shape:
        raise ValueError(f"shape mismatch: {f_prev.shape} vs {f_next.shape}")
    return (f_prev + f_next) / 2


def tcr_loss(
    f_mid: FeatureMap, f_hat: FeatureMap, epsilon: float = DEFAULT_EPSILON
) -> torch.Tensor:
    """Mean cosine distance between the middle feature and its estimate.

    At each spatial location the cosine similarity is taken over the channel
    axis with the denominator floored at epsilon; the distances are averaged
    over all locations.  Result lies in [0, 2].
    """
    if f_mid.shape != f_hat.shape:
        raise ValueError(f"shape mismatch: {f_mid.shape} vs {f_hat.shape}")
    if not (torch.isfinite(f_mid).all() and torch.isfinite(f_hat).all()):
        raise FloatingPointError("non-finite feature values")
    # channel axis is -3 so batched (B, C, H, W) inputs work too
    dot = (f_mid * f_hat).sum(dim=-3)
    norms = f_mid.norm(dim=-3) * f_hat.norm(dim=-3)
    cos = dot / norms.clamp_min(epsilon)
    return (1.0 - cos).mean()


def combined_loss(
    l_det: torch.Tensor, l_reg: torch.Tensor, gamma: float
) -> torch.Tensor:
    """Detection loss plus gamma-weighted regularization loss."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return l_det + gamma * l_reg

"""Objectives: cross-correlation, Pearson, Barlow Twins, DWDR, instance and triplet losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dwdr import autodiff as ad
from dwdr.autodiff import Node
from dwdr.errors import ConfigError, DataError, DegenerateBatchError, DimensionError


@dataclass(frozen=True)
class DWDRConfig:
    lam: float = 1e-2
    gamma1: float = 1.0
    gamma2: float = 1.0
    alpha: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ConfigError(f"focusing parameters must be non-negative, got {self.gamma1}, {self.gamma2}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.3
    variant: str = "hard_margin"

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}")
        if self.variant not in ("hard_margin", "soft_margin"):
            raise ConfigError(f"unknown triplet variant {self.variant!r}")


def _same_shape(x: Node, y: Node) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"shapes differ: {x.shape} vs {y.shape}")


def cross_correlation_matrix(x, y) -> Node:
    """Batch expectation of channel products, ``x.T @ y / b`` (d x d)."""
    x, y = ad._lift(x), ad._lift(y)
    _same_shape(x, y)
    return ad.scale(ad.matmul(ad.transpose(x), y), 1.0 / x.shape[0])


def pearson_matrix(x, y, eps: float = 1e-8) -> Node:
    """Channel-by-channel Pearson coefficients between two aligned batches."""
    x, y = ad._lift(x), ad._lift(y)
    _same_shape(x, y)
    if x.shape[0] < 2:
        raise DegenerateBatchError(f"Pearson matrix needs at least 2 rows, got {x.shape[0]}")
    zx, _, _ = ad.standardize_columns(x, eps)
    zy, _, _ = ad.standardize_columns(y, eps)
    return cross_correlation_matrix(zx, zy)


def dynamic_weights(rho, gamma1: float, gamma2: float) -> tuple[Node, Node]:
    """Focusing weights for the diagonal (1 x d) and off-diagonal (d x d) terms.

    ``w1_i = ((1 - rho_ii) / 2) ** gamma1`` and ``w2_ij = |rho_ij| ** gamma2``,
    computed on rho clamped to [-1, 1]. Both stay in the graph.
    """
    rho = ad._lift(rho)
    if gamma1 < 0 or gamma2 < 0:
        raise ConfigError(f"focusing parameters must be non-negative, got {gamma1}, {gamma2}")
    if rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"rho must be square, got {rho.shape}")
    clamped = ad.clip(rho, -1.0, 1.0)
    w1 = ad.pow_const(ad.scale(ad.sub(1.0, ad.diag(clamped)), 0.5), gamma1)
    w2 = ad.pow_const(ad.abs_(clamped), gamma2)
    return w1, w2


def dwdr_from_rho(rho, lam: float, gamma1: float, gamma2: float) -> Node:
    rho = ad._lift(rho)
    w1, w2 = dynamic_weights(rho, gamma1, gamma2)
    miss = ad.sub(1.0, ad.diag(rho))
    on_diag = ad.sum_all(ad.mul(w1, ad.mul(miss, miss)))
    off_diag = ad.reduce("sum_offdiag", ad.mul(w2, ad.mul(rho, rho)))
    return ad.add(on_diag, ad.scale(off_diag, lam))


def dwdr_loss(x, y, cfg: DWDRConfig) -> Node:
    """Dynamically weighted regression of the Pearson matrix onto the identity."""
    rho = pearson_matrix(x, y, cfg.eps)
    return dwdr_from_rho(rho, cfg.lam, cfg.gamma1, cfg.gamma2)


def barlow_twins_loss(m, lam: float) -> Node:
    m = ad._lift(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"Barlow Twins loss needs a square matrix, got {m.shape}")
    eye = np.eye(m.shape[0])
    residual = ad.sub(m, eye)
    sq = ad.mul(residual, residual)
    return ad.add(ad.reduce("sum_diag", sq), ad.scale(ad.reduce("sum_offdiag", sq), lam))


def _one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(z, labels) -> Node:
    """Batch-mean negative log-likelihood of ``labels`` under softmax(z)."""
    z = ad._lift(z)
    onehot = _one_hot(labels, z.shape[1])
    if onehot.shape[0] != z.shape[0]:
        raise DimensionError(f"{onehot.shape[0]} labels for {z.shape[0]} rows")
    picked = ad.sum_all(ad.mul(ad.log_softmax_rows(z), onehot))
    return ad.scale(picked, -1.0 / z.shape[0])


def instance_loss(z1, z2, labels) -> Node:
    """Shared-classifier cross-entropy, averaged per platform and summed."""
    return ad.add(cross_entropy(z1, labels), cross_entropy(z2, labels))


def _row_distance(a: Node, b: Node) -> Node:
    diff = ad.sub(a, b)
    return ad.pow_const(ad.sum_cols(ad.mul(diff, diff)), 0.5)


def triplet_loss(anchor, positive, negative, cfg: TripletConfig) -> Node:
    anchor, positive, negative = ad._lift(anchor), ad._lift(positive), ad._lift(negative)
    _same_shape(anchor, positive)
    _same_shape(anchor, negative)
    gap = ad.sub(_row_distance(anchor, positive), _row_distance(anchor, negative))
    if cfg.variant == "hard_margin":
        per_row = ad.relu(ad.add(gap, cfg.margin))
    else:
        per_row = ad.softplus(gap)
    return ad.mean_all(per_row)


def total_loss(l_id, l_dwdr, alpha: float) -> Node:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    return ad.add(ad.scale(l_id, alpha), ad.scale(l_dwdr, 1.0 - alpha))

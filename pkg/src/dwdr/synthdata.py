"""Synthetic stand-in for a drone/satellite geo-localization benchmark.

Each class owns a latent prototype. The two platforms see it through
different fixed maps ``tanh(A_k @ c)`` so no single linear transform relates
the views. Drone items add per-item latent jitter, mimicking the many
viewpoints of one location, and every item gets observation noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dwdr.autodiff import Rng
from dwdr.data import CrossViewDataset, GeoClass
from dwdr.errors import ConfigError


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 60
    latent_dim: int = 8
    input_dim: int = 32
    drone_per_class: int | tuple[int, ...] = 12
    noise_sigma: float = 0.05
    jitter_sigma: float = 0.35
    map_gain: float = 1.5
    platform_shift: float = 0.0
    prototype_clusters: int = 6
    cluster_spread: float = 0.4
    platform_transform_seed: int = 0
    train_classes: int = 30
    split_seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.latent_dim < 1 or self.input_dim < 1:
            raise ConfigError("latent_dim and input_dim must be positive")
        if self.noise_sigma < 0 or self.jitter_sigma < 0:
            raise ConfigError("noise and jitter must be non-negative")
        counts = self.drone_counts()
        if len(counts) != self.num_classes or min(counts) < 1:
            raise ConfigError("need one drone count >= 1 per class")
        if not 0 < self.train_classes < self.num_classes:
            raise ConfigError("train_classes must leave at least one class on each side of the split")

    def drone_counts(self) -> list[int]:
        if isinstance(self.drone_per_class, int):
            return [self.drone_per_class] * self.num_classes
        return list(self.drone_per_class)


def platform_maps(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Linear maps and constant offsets for the satellite and drone platforms."""
    rng = Rng(spec.platform_transform_seed, 101)
    shape = (spec.input_dim, spec.latent_dim)
    s = spec.map_gain / np.sqrt(spec.latent_dim)
    a_sat, a_drone = rng.gen.normal(0.0, s, shape), rng.gen.normal(0.0, s, shape)
    off_sat = rng.gen.normal(0.0, spec.platform_shift, spec.input_dim)
    off_drone = rng.gen.normal(0.0, spec.platform_shift, spec.input_dim)
    return a_sat, a_drone, off_sat, off_drone


def class_prototypes(spec: SynthSpec, rng: Rng) -> np.ndarray:
    """Standard-normal prototypes, optionally grouped into look-alike regions.

    With clusters, ``c = (centre + s * z) / sqrt(1 + s^2)``: every prototype is
    still marginally N(0, I) but classes sharing a centre are correlated.
    """
    if spec.prototype_clusters <= 0:
        return rng.gen.standard_normal((spec.num_classes, spec.latent_dim))
    s = spec.cluster_spread
    centres = rng.gen.standard_normal((spec.prototype_clusters, spec.latent_dim))
    member = np.arange(spec.num_classes) % spec.prototype_clusters
    z = rng.gen.standard_normal((spec.num_classes, spec.latent_dim))
    return (centres[member] + s * z) / np.sqrt(1.0 + s * s)


def generate_dataset(spec: SynthSpec, rng: Rng) -> CrossViewDataset:
    """One satellite item and ``n_c`` drone items per class, labels 0..C-1."""
    a_sat, a_drone, off_sat, off_drone = platform_maps(spec)
    counts = spec.drone_counts()
    protos = class_prototypes(spec, rng)
    classes, features, latents = [], {}, {}
    next_id = 0
    for label in range(spec.num_classes):
        c = protos[label]
        sat_id = next_id
        next_id += 1
        features[sat_id] = np.tanh(a_sat @ c) + off_sat + rng.gen.normal(0.0, spec.noise_sigma, spec.input_dim)
        latents[sat_id] = c.copy()
        drone_ids = []
        for _ in range(counts[label]):
            lat = c + rng.gen.normal(0.0, spec.jitter_sigma, spec.latent_dim)
            features[next_id] = np.tanh(a_drone @ lat) + off_drone + rng.gen.normal(0.0, spec.noise_sigma, spec.input_dim)
            latents[next_id] = lat
            drone_ids.append(next_id)
            next_id += 1
        classes.append(GeoClass(label, [sat_id], drone_ids))
    ds = CrossViewDataset(classes, features, spec.input_dim)
    ds.latents = latents
    return ds


def latent_prototype_accuracy(ds: CrossViewDataset) -> float:
    """Fraction of drone items whose latent point is nearest its own class prototype."""
    protos = np.stack([ds.latents[c.satellite_items[0]] for c in ds.classes])
    hits = total = 0
    for c in ds.classes:
        for i in c.drone_items:
            d = ((protos - ds.latents[i]) ** 2).sum(axis=1)
            hits += int(np.argmin(d) == c.label)
            total += 1
    return hits / total


def _subset(ds: CrossViewDataset, labels: list[int]) -> CrossViewDataset:
    classes, features, latents = [], {}, {}
    for new_label, old in enumerate(labels):
        src = ds.by_label(old)
        classes.append(GeoClass(new_label, list(src.satellite_items), list(src.drone_items)))
        for i in src.satellite_items + src.drone_items:
            features[i] = ds.features[i]
            if i in ds.latents:
                latents[i] = ds.latents[i]
    out = CrossViewDataset(classes, features, ds.dim)
    out.latents = latents
    return out


def split_classes(spec: SynthSpec) -> tuple[list[int], list[int]]:
    order = Rng(spec.split_seed, 202).gen.permutation(spec.num_classes)
    train = sorted(int(i) for i in order[: spec.train_classes])
    test = sorted(int(i) for i in order[spec.train_classes:])
    return train, test


def split_train_test(ds: CrossViewDataset, spec: SynthSpec) -> tuple[CrossViewDataset, CrossViewDataset]:
    """Class-disjoint split; each side is relabelled to 0..n-1 in original label order."""
    if ds.num_classes != spec.num_classes:
        raise ConfigError(f"spec describes {spec.num_classes} classes, dataset has {ds.num_classes}")
    train, test = split_classes(spec)
    if set(train) & set(test):
        raise ConfigError("train and test classes overlap")
    return _subset(ds, train), _subset(ds, test)

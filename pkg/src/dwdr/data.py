"""Two-platform dataset container and its text manifest format.

Manifest layout::

    C d
    label platform item_id v_1 ... v_d
    ...

``platform`` is ``sat`` or ``drone``. Values are written with ``repr`` so a
write/read round trip is exact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from dwdr.errors import DataError

PLATFORMS = ("sat", "drone")


@dataclass
class GeoClass:
    label: int
    satellite_items: list[int]
    drone_items: list[int]


@dataclass
class CrossViewDataset:
    classes: list[GeoClass]
    features: dict[int, np.ndarray]
    dim: int
    # latent positions recorded by the generator; not part of the manifest
    latents: dict[int, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        labels = [c.label for c in self.classes]
        if sorted(labels) != list(range(len(labels))):
            raise DataError("class labels must be distinct and contiguous from 0")
        seen: set[int] = set()
        for c in self.classes:
            if not c.satellite_items or not c.drone_items:
                raise DataError(f"class {c.label} needs at least one item on each platform")
            for i in c.satellite_items + c.drone_items:
                if i in seen:
                    raise DataError(f"item id {i} appears more than once")
                if i not in self.features:
                    raise DataError(f"item id {i} has no feature vector")
                seen.add(i)
        for i, v in self.features.items():
            if v.shape != (self.dim,):
                raise DataError(f"item {i} has shape {v.shape}, expected ({self.dim},)")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def by_label(self, label: int) -> GeoClass:
        return self.classes[label] if self.classes[label].label == label else self._find(label)

    def _find(self, label: int) -> GeoClass:
        for c in self.classes:
            if c.label == label:
                return c
        raise DataError(f"no class with label {label}")

    def satellite_ids(self) -> list[int]:
        return [i for c in self.classes for i in c.satellite_items]

    def drone_ids(self) -> list[int]:
        return [i for c in self.classes for i in c.drone_items]

    def label_of(self) -> dict[int, int]:
        out = {}
        for c in self.classes:
            for i in c.satellite_items + c.drone_items:
                out[i] = c.label
        return out

    def matrix(self, ids) -> np.ndarray:
        return np.stack([self.features[i] for i in ids]) if len(ids) else np.zeros((0, self.dim))

    def __len__(self) -> int:
        return sum(len(c.satellite_items) + len(c.drone_items) for c in self.classes)


def format_manifest(ds: CrossViewDataset) -> str:
    lines = [f"{ds.num_classes} {ds.dim}"]
    for c in sorted(ds.classes, key=lambda c: c.label):
        for platform, ids in (("sat", c.satellite_items), ("drone", c.drone_items)):
            for i in ids:
                vals = " ".join(repr(float(v)) for v in ds.features[i])
                lines.append(f"{c.label} {platform} {i} {vals}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str, source: str = "<manifest>") -> CrossViewDataset:
    rows = text.splitlines()
    if not rows:
        raise DataError(f"{source}: empty manifest")
    try:
        num_classes, dim = (int(t) for t in rows[0].split())
    except ValueError:
        raise DataError(f"{source}:1: header must be 'C d'") from None
    sat: dict[int, list[int]] = {c: [] for c in range(num_classes)}
    drone: dict[int, list[int]] = {c: [] for c in range(num_classes)}
    features: dict[int, np.ndarray] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        parts = row.split()
        if len(parts) != 3 + dim:
            raise DataError(f"{source}:{lineno}: expected {3 + dim} fields, got {len(parts)}")
        try:
            label, item = int(parts[0]), int(parts[2])
            vec = np.array([float(t) for t in parts[3:]])
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        platform = parts[1]
        if platform not in PLATFORMS:
            raise DataError(f"{source}:{lineno}: unknown platform {platform!r}")
        if not 0 <= label < num_classes:
            raise DataError(f"{source}:{lineno}: label {label} outside [0, {num_classes})")
        if item in features:
            raise DataError(f"{source}:{lineno}: duplicate item id {item}")
        features[item] = vec
        (sat if platform == "sat" else drone)[label].append(item)
    classes = [GeoClass(c, sat[c], drone[c]) for c in range(num_classes)]
    return CrossViewDataset(classes, features, dim)


def write_manifest(ds: CrossViewDataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_manifest(ds))


def read_manifest(path: str | os.PathLike) -> CrossViewDataset:
    with open(path, encoding="ascii") as fh:
        return parse_manifest(fh.read(), str(path))

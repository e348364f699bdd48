"""Positive-pair samplers over view-imbalanced two-platform data.

Satellite-anchored sampling walks the satellite items and draws one drone
partner per class with replacement, so with many drone images per location
most of them are rarely seen. Drone-anchored sampling walks every drone item
once per epoch but repeats labels within a batch. The symmetric sampler
concatenates a half batch from each stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from dwdr.autodiff import Rng
from dwdr.data import CrossViewDataset
from dwdr.errors import ConfigError

SAT_ANCHORED = "satellite_anchored"
DRONE_ANCHORED = "drone_anchored"
RANDOM = "random"

STRATEGIES = ("random", "satellite", "drone", "symmetric")


@dataclass(frozen=True)
class SamplePair:
    satellite_id: int
    drone_id: int
    label: int


@dataclass
class BatchPlan:
    pairs: list[SamplePair]
    provenance: list[str]

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def labels(self) -> list[int]:
        return [p.label for p in self.pairs]

    @property
    def satellite_ids(self) -> list[int]:
        return [p.satellite_id for p in self.pairs]

    @property
    def drone_ids(self) -> list[int]:
        return [p.drone_id for p in self.pairs]


def _choice(rng: Rng, items: list[int]) -> int:
    if len(items) == 1:
        return items[0]
    return items[int(rng.gen.integers(len(items)))]


def satellite_view_epoch(ds: CrossViewDataset, rng: Rng) -> list[SamplePair]:
    anchors = [(i, c) for c in ds.classes for i in c.satellite_items]
    order = rng.gen.permutation(len(anchors))
    pairs = []
    for k in order:
        sat_id, cls = anchors[k]
        pairs.append(SamplePair(sat_id, _choice(rng, cls.drone_items), cls.label))
    return pairs


def drone_view_epoch(ds: CrossViewDataset, rng: Rng) -> list[SamplePair]:
    anchors = [(i, c) for c in ds.classes for i in c.drone_items]
    order = rng.gen.permutation(len(anchors))
    pairs = []
    for k in order:
        drone_id, cls = anchors[k]
        pairs.append(SamplePair(_choice(rng, cls.satellite_items), drone_id, cls.label))
    return pairs


class PairStream:
    """Endless pair stream that re-permutes its anchor set on exhaustion."""

    def __init__(self, ds: CrossViewDataset, anchor: str, rng: Rng):
        if anchor == SAT_ANCHORED:
            self._epoch = satellite_view_epoch
        elif anchor == DRONE_ANCHORED:
            self._epoch = drone_view_epoch
        else:
            raise ConfigError(f"unknown anchor {anchor!r}")
        self.ds = ds
        self.anchor = anchor
        self.rng = rng
        self._buf: list[SamplePair] = []
        self._pos = 0
        self.passes = 0

    def take(self, n: int) -> list[SamplePair]:
        out = []
        while len(out) < n:
            if self._pos == len(self._buf):
                self._buf = self._epoch(self.ds, self.rng)
                self._pos = 0
                self.passes += 1
            step = min(n - len(out), len(self._buf) - self._pos)
            out.extend(self._buf[self._pos:self._pos + step])
            self._pos += step
        return out


class SymmetricSampler:
    """Half satellite-anchored, half drone-anchored batches.

    The two streams advance independently across epochs. An epoch is
    ``ceil(num_drone_items / (B / 2))`` batches, i.e. one pass of the drone
    stream; if that does not divide evenly the last batch borrows from the
    drone stream's next pass.
    """

    def __init__(self, ds: CrossViewDataset, batch_size: int, rng: Rng):
        if batch_size < 2 or batch_size % 2:
            raise ConfigError(f"symmetric batches need an even batch size >= 2, got {batch_size}")
        self.ds = ds
        self.half = batch_size // 2
        self.sat_stream = PairStream(ds, SAT_ANCHORED, rng.fork(0))
        self.drone_stream = PairStream(ds, DRONE_ANCHORED, rng.fork(1))

    def batches_per_epoch(self) -> int:
        n = len(self.ds.drone_ids())
        return -(-n // self.half)

    def epoch(self) -> Iterator[BatchPlan]:
        for _ in range(self.batches_per_epoch()):
            sat = self.sat_stream.take(self.half)
            drone = self.drone_stream.take(self.half)
            yield BatchPlan(sat + drone, [SAT_ANCHORED] * self.half + [DRONE_ANCHORED] * self.half)


def symmetric_batches(ds: CrossViewDataset, batch_size: int, rng: Rng) -> Iterator[BatchPlan]:
    """Endless stream of symmetric batch plans."""
    sampler = SymmetricSampler(ds, batch_size, rng)
    while True:
        yield from sampler.epoch()


class SingleViewSampler:
    """Batches cut from one satellite- or drone-anchored epoch at a time.

    A trailing batch with fewer than two pairs is dropped, since batch
    statistics need at least two rows.
    """

    def __init__(self, ds: CrossViewDataset, anchor: str, batch_size: int, rng: Rng):
        if batch_size < 2:
            raise ConfigError(f"batch size must be >= 2, got {batch_size}")
        self.ds = ds
        self.anchor = anchor
        self.batch_size = batch_size
        self.rng = rng
        self._epoch_fn = satellite_view_epoch if anchor == SAT_ANCHORED else drone_view_epoch

    def epoch(self) -> Iterator[BatchPlan]:
        pairs = self._epoch_fn(self.ds, self.rng)
        for start in range(0, len(pairs), self.batch_size):
            chunk = pairs[start:start + self.batch_size]
            if len(chunk) < 2:
                break
            yield BatchPlan(chunk, [self.anchor] * len(chunk))


class RandomPairSampler:
    """Uniform class, then a uniform item per platform; the ablation control.

    An epoch emits as many pairs as there are drone items, so epoch lengths
    match the drone-anchored sampler.
    """

    def __init__(self, ds: CrossViewDataset, batch_size: int, rng: Rng):
        if batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {batch_size}")
        self.ds = ds
        self.batch_size = batch_size
        self.rng = rng

    def draw(self) -> BatchPlan:
        pairs = []
        for _ in range(self.batch_size):
            cls = self.ds.classes[int(self.rng.gen.integers(self.ds.num_classes))]
            pairs.append(SamplePair(_choice(self.rng, cls.satellite_items), _choice(self.rng, cls.drone_items), cls.label))
        return BatchPlan(pairs, [RANDOM] * len(pairs))

    def epoch(self) -> Iterator[BatchPlan]:
        n = len(self.ds.drone_ids())
        for _ in range(max(1, n // self.batch_size)):
            yield self.draw()


def random_pair_batches(ds: CrossViewDataset, batch_size: int, rng: Rng) -> Iterator[BatchPlan]:
    sampler = RandomPairSampler(ds, batch_size, rng)
    while True:
        yield sampler.draw()


def make_sampler(ds: CrossViewDataset, strategy: str, batch_size: int, rng: Rng):
    if strategy == "symmetric":
        return SymmetricSampler(ds, batch_size, rng)
    if strategy == "satellite":
        return SingleViewSampler(ds, SAT_ANCHORED, batch_size, rng)
    if strategy == "drone":
        return SingleViewSampler(ds, DRONE_ANCHORED, batch_size, rng)
    if strategy == "random":
        return RandomPairSampler(ds, batch_size, rng)
    raise ConfigError(f"unknown sampling strategy {strategy!r}; choose from {STRATEGIES}")

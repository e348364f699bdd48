"""Bidirectional cross-view retrieval metrics and embedding redundancy diagnostics."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from dwdr.autodiff import Rng, const
from dwdr.errors import DataError, DegenerateBatchError, DimensionError
from dwdr.losses import pearson_matrix

log = logging.getLogger(__name__)


@dataclass
class EmbeddingSet:
    ids: np.ndarray
    labels: np.ndarray
    platform: str
    vectors: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DimensionError("vectors must be a 2-D array")
        n = self.vectors.shape[0]
        if self.ids.shape != (n,) or self.labels.shape != (n,):
            raise DimensionError("ids, labels and vector rows must align")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class RetrievalMetrics:
    recall_at: dict[int, float]
    ap: float
    num_queries: int
    skipped: int = 0
    top1_percent_k: int = 1
    recall_top1_percent: float = 0.0
    direction: str = ""

    def to_json(self) -> dict:
        out = {"direction": self.direction}
        for k in sorted(self.recall_at):
            out[f"R@{k}"] = self.recall_at[k]
        out["R@top1percent"] = self.recall_top1_percent
        out["AP"] = self.ap
        out["num_queries"] = self.num_queries
        out["skipped"] = self.skipped
        return out


def rank_by_euclidean(query: np.ndarray, gallery: EmbeddingSet) -> np.ndarray:
    """Gallery indices by ascending L2 distance, ties broken by ascending item id."""
    if len(gallery) == 0:
        raise DataError("empty gallery")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.size != gallery.dim:
        raise DimensionError(f"query has {query.size} dims, gallery {gallery.dim}")
    diff = gallery.vectors - query
    dist = np.sqrt((diff * diff).sum(axis=1))
    return np.lexsort((gallery.ids, dist))


def recall_at_k(ranking, relevant, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise DataError("empty relevant set")
    return int(any(int(i) in relevant for i in ranking[:k]))


def average_precision(ranking, relevant) -> float:
    """Mean of precision at each relevant hit."""
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise DataError("empty relevant set")
    hits = 0
    total = 0.0
    for pos, idx in enumerate(ranking, start=1):
        if int(idx) in relevant:
            hits += 1
            total += hits / pos
    return total / len(relevant)


def top1_percent_k(gallery_size: int) -> int:
    return max(1, math.ceil(0.01 * gallery_size))


def evaluate_direction(queries: EmbeddingSet, gallery: EmbeddingSet, ks=(1, 5, 10), direction: str = "") -> RetrievalMetrics:
    """Every query against the gallery; relevance means equal label. Macro-averaged."""
    if queries.dim != gallery.dim:
        raise DimensionError(f"query dim {queries.dim} != gallery dim {gallery.dim}")
    ks = sorted(set(int(k) for k in ks))
    k_top = top1_percent_k(len(gallery))
    by_label: dict[int, np.ndarray] = {}
    for lab in np.unique(gallery.labels):
        by_label[int(lab)] = np.flatnonzero(gallery.labels == lab)
    hits = {k: 0 for k in ks}
    hits_top = 0
    ap_sum = 0.0
    used = skipped = 0
    for q in range(len(queries)):
        relevant = by_label.get(int(queries.labels[q]))
        if relevant is None:
            skipped += 1
            continue
        ranking = rank_by_euclidean(queries.vectors[q], gallery)
        # rank positions of relevant items: first hit decides every R@K at once
        pos = np.flatnonzero(np.isin(ranking, relevant))
        first = int(pos[0]) + 1
        for k in ks:
            hits[k] += first <= k
        hits_top += first <= k_top
        ap_sum += float(np.mean(np.arange(1, pos.size + 1) / (pos + 1)))
        used += 1
    if skipped:
        log.warning("%s: skipped %d queries with no gallery match", direction or "retrieval", skipped)
    denom = max(used, 1)
    return RetrievalMetrics(
        recall_at={k: hits[k] / denom for k in ks},
        ap=ap_sum / denom,
        num_queries=used,
        skipped=skipped,
        top1_percent_k=k_top,
        recall_top1_percent=hits_top / denom,
        direction=direction,
    )


def evaluate_bidirectional(sat: EmbeddingSet, drone: EmbeddingSet, ks=(1, 5, 10)) -> tuple[RetrievalMetrics, RetrievalMetrics]:
    """(drone -> satellite, satellite -> drone) metrics."""
    d2s = evaluate_direction(drone, sat, ks, "drone->satellite")
    s2d = evaluate_direction(sat, drone, ks, "satellite->drone")
    return d2s, s2d


def offdiag_stats(sat: EmbeddingSet, drone: EmbeddingSet, eps: float = 1e-8, tau: float = 0.2,
                  rng: Rng | None = None) -> dict:
    """Pearson redundancy of paired test features, one random drone item per class."""
    rng = rng or Rng(0, 9)
    labels = sorted(set(int(l) for l in sat.labels) & set(int(l) for l in drone.labels))
    if len(labels) < 2:
        raise DegenerateBatchError("offdiag_stats needs at least 2 shared classes")
    rows_sat, rows_drone = [], []
    for lab in labels:
        s_idx = np.flatnonzero(sat.labels == lab)
        d_idx = np.flatnonzero(drone.labels == lab)
        rows_sat.append(int(s_idx[0]))
        rows_drone.append(int(d_idx[int(rng.gen.integers(d_idx.size))]))
    rho = pearson_matrix(const(sat.vectors[rows_sat]), const(drone.vectors[rows_drone]), eps).value
    d = rho.shape[0]
    off = np.abs(rho[~np.eye(d, dtype=bool)])
    return {
        "mean_abs_offdiag": float(off.mean()) if off.size else 0.0,
        "frac_above": float((off > tau).mean()) if off.size else 0.0,
        "count_above": int((off > tau).sum()),
        "tau": tau,
        "mean_diag": float(np.diag(rho).mean()),
    }


def format_embeddings(es: EmbeddingSet) -> str:
    lines = [f"{len(es)} {es.dim}"]
    for i, lab, vec in zip(es.ids, es.labels, es.vectors):
        lines.append(f"{int(i)} {int(lab)} {es.platform} " + " ".join(repr(float(v)) for v in vec))
    return "\n".join(lines) + "\n"


def parse_embeddings(text: str, source: str = "<embeddings>") -> dict[str, EmbeddingSet]:
    """Parse an embedding file into one EmbeddingSet per platform."""
    rows = text.splitlines()
    try:
        n, d = (int(t) for t in rows[0].split())
    except (ValueError, IndexError):
        raise DataError(f"{source}:1: header must be 'n d'") from None
    groups: dict[str, list] = {}
    count = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        parts = row.split()
        if len(parts) != 3 + d:
            raise DataError(f"{source}:{lineno}: expected {3 + d} fields, got {len(parts)}")
        try:
            item, lab = int(parts[0]), int(parts[1])
            vec = [float(t) for t in parts[3:]]
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        groups.setdefault(parts[2], []).append((item, lab, vec))
        count += 1
    if count != n:
        raise DataError(f"{source}: header promises {n} rows, found {count}")
    out = {}
    for platform, items in groups.items():
        ids, labs, vecs = zip(*items)
        out[platform] = EmbeddingSet(np.array(ids), np.array(labs), platform, np.array(vecs).reshape(len(items), d))
    return out


def write_embeddings(sets: list[EmbeddingSet], path: str | os.PathLike) -> None:
    dims = {s.dim for s in sets}
    if len(dims) > 1:
        raise DimensionError("all embedding sets must share one dimension")
    body = [format_embeddings(s).splitlines()[1:] for s in sets]
    n = sum(len(s) for s in sets)
    lines = [f"{n} {dims.pop()}"] + [l for b in body for l in b]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_embeddings(path: str | os.PathLike) -> dict[str, EmbeddingSet]:
    with open(path, encoding="ascii") as fh:
        return parse_embeddings(fh.read(), str(path))

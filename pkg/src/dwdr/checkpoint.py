"""Versioned plain-text checkpoints.

Layout::

    dwdr-checkpoint 1
    meta <key> <value>            (epoch, p_drop, bn_momentum, bn_eps)
    tensor <name> <rows> <cols>
    <rows lines of cols reals>
    ...
    end

Reals are written with ``repr`` so a save/load round trip is exact and two
identical states give byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from dwdr import autodiff as ad
from dwdr.autodiff import BatchNormState
from dwdr.errors import DataError
from dwdr.model import ClassifierParams, EncoderParams

FORMAT_TAG = "dwdr-checkpoint"
VERSION = 1

_ENCODER = ("encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2")
_CLASSIFIER = ("classifier.w1", "classifier.b1", "classifier.bn.scale", "classifier.bn.shift",
               "classifier.bn.running_mean", "classifier.bn.running_var", "classifier.w2", "classifier.b2")


@dataclass
class Checkpoint:
    encoder: EncoderParams
    classifier: ClassifierParams
    epoch: int = 0


def _tensors(ck: Checkpoint) -> dict[str, np.ndarray]:
    out = {name: node.value for name, node in ck.encoder.named().items()}
    out.update({name: node.value for name, node in ck.classifier.named().items()})
    out["classifier.bn.running_mean"] = ck.classifier.bn.running_mean
    out["classifier.bn.running_var"] = ck.classifier.bn.running_var
    return out


def format_checkpoint(ck: Checkpoint) -> str:
    cls = ck.classifier
    lines = [f"{FORMAT_TAG} {VERSION}",
             f"meta epoch {ck.epoch}",
             f"meta p_drop {cls.p_drop!r}",
             f"meta bn_momentum {cls.bn.momentum!r}",
             f"meta bn_eps {cls.bn.eps!r}"]
    tensors = _tensors(ck)
    for name in _ENCODER + _CLASSIFIER:
        arr = tensors[name]
        lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in arr)
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str, source: str = "<checkpoint>") -> Checkpoint:
    lines = text.splitlines()

    def fail(lineno: int, msg: str) -> DataError:
        return DataError(f"{source}:{lineno}: {msg}")

    if not lines:
        raise fail(1, "empty checkpoint")
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_TAG:
        raise fail(1, f"not a checkpoint (expected '{FORMAT_TAG} {VERSION}')")
    if head[1] != str(VERSION):
        raise fail(1, f"unsupported checkpoint version {head[1]} (this build reads {VERSION})")
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    i = 1
    ended = False
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] == "end":
            ended = True
            break
        if parts[0] == "meta" and len(parts) == 3:
            meta[parts[1]] = parts[2]
            i += 1
            continue
        if parts[0] != "tensor" or len(parts) != 4:
            raise fail(i + 1, f"unexpected line {lines[i]!r}")
        name = parts[1]
        try:
            rows, cols = int(parts[2]), int(parts[3])
        except ValueError:
            raise fail(i + 1, "tensor shape must be two integers") from None
        if name in tensors:
            raise fail(i + 1, f"duplicate tensor {name!r}")
        if i + rows >= len(lines):
            raise fail(i + 1, f"tensor {name!r} is truncated")
        arr = np.empty((rows, cols))
        for r in range(rows):
            vals = lines[i + 1 + r].split()
            if len(vals) != cols:
                raise fail(i + 2 + r, f"expected {cols} values, got {len(vals)}")
            try:
                arr[r] = [float(v) for v in vals]
            except ValueError:
                raise fail(i + 2 + r, "non-numeric value") from None
        tensors[name] = arr
        i += rows + 1
    if not ended:
        raise fail(len(lines), "missing 'end' marker")
    missing = [n for n in _ENCODER + _CLASSIFIER if n not in tensors]
    if missing:
        raise fail(len(lines), f"missing tensors: {', '.join(missing)}")
    for key in ("epoch", "p_drop", "bn_momentum", "bn_eps"):
        if key not in meta:
            raise fail(len(lines), f"missing meta {key!r}")
    return _assemble(tensors, meta, source)


def _assemble(t: dict[str, np.ndarray], meta: dict[str, str], source: str) -> Checkpoint:
    p, h = t["encoder.w1"].shape
    d = t["encoder.w2"].shape[1]
    hc, c = t["classifier.w2"].shape
    expected = {
        "encoder.b1": (1, h), "encoder.w2": (h, d), "encoder.b2": (1, d),
        "classifier.w1": (d, hc), "classifier.b1": (1, hc), "classifier.bn.scale": (1, hc),
        "classifier.bn.shift": (1, hc), "classifier.bn.running_mean": (1, hc),
        "classifier.bn.running_var": (1, hc), "classifier.b2": (1, c),
    }
    for name, shape in expected.items():
        if t[name].shape != shape:
            raise DataError(f"{source}: tensor {name!r} has shape {t[name].shape}, expected {shape}")
    enc = EncoderParams(*(ad.param(t[n]) for n in _ENCODER))
    bn = BatchNormState(hc, momentum=float(meta["bn_momentum"]), eps=float(meta["bn_eps"]))
    bn.scale.value = t["classifier.bn.scale"]
    bn.shift.value = t["classifier.bn.shift"]
    bn.running_mean = t["classifier.bn.running_mean"]
    bn.running_var = t["classifier.bn.running_var"]
    cls = ClassifierParams(ad.param(t["classifier.w1"]), ad.param(t["classifier.b1"]), bn,
                           ad.param(t["classifier.w2"]), ad.param(t["classifier.b2"]), float(meta["p_drop"]))
    return Checkpoint(enc, cls, int(meta["epoch"]))


def save_checkpoint(ck: Checkpoint, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_checkpoint(ck))


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        return parse_checkpoint(fh.read(), str(path))

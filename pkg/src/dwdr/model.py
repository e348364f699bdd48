"""Shared-weight MLP encoder and shared classifier head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dwdr import autodiff as ad
from dwdr.autodiff import BatchNormState, Node, Rng
from dwdr.errors import DimensionError


def _he(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.gen.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))


@dataclass
class EncoderParams:
    """``p -> h -> d`` MLP with a ReLU between layers; one instance serves both platforms."""

    w1: Node
    b1: Node
    w2: Node
    b2: Node

    @classmethod
    def init(cls, rng: Rng, input_dim: int, hidden_dim: int, embed_dim: int) -> "EncoderParams":
        return cls(
            ad.param(_he(rng, input_dim, hidden_dim)),
            ad.param(np.zeros((1, hidden_dim))),
            ad.param(_he(rng, hidden_dim, embed_dim)),
            ad.param(np.zeros((1, embed_dim))),
        )

    def named(self) -> dict[str, Node]:
        return {"encoder.w1": self.w1, "encoder.b1": self.b1, "encoder.w2": self.w2, "encoder.b2": self.b2}

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[1]


@dataclass
class ClassifierParams:
    """FC -> BatchNorm -> Dropout -> FC, shared by both platforms."""

    w1: Node
    b1: Node
    bn: BatchNormState
    w2: Node
    b2: Node
    p_drop: float = 0.5

    @classmethod
    def init(cls, rng: Rng, embed_dim: int, hidden_dim: int, num_classes: int, p_drop: float = 0.5,
             bn_momentum: float = 0.1) -> "ClassifierParams":
        return cls(
            ad.param(_he(rng, embed_dim, hidden_dim)),
            ad.param(np.zeros((1, hidden_dim))),
            BatchNormState(hidden_dim, momentum=bn_momentum),
            ad.param(rng.gen.normal(0.0, 0.001, (hidden_dim, num_classes))),
            ad.param(np.zeros((1, num_classes))),
            p_drop,
        )

    def named(self) -> dict[str, Node]:
        return {
            "classifier.w1": self.w1,
            "classifier.b1": self.b1,
            "classifier.bn.scale": self.bn.scale,
            "classifier.bn.shift": self.bn.shift,
            "classifier.w2": self.w2,
            "classifier.b2": self.b2,
        }

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]


def encoder_forward(params: EncoderParams, x, mode: str = "eval") -> Node:
    # no mode-dependent layers in the encoder; mode is accepted for symmetry with the classifier
    x = ad._lift(x)
    if x.shape[1] != params.input_dim:
        raise DimensionError(f"encoder expects {params.input_dim} input features, got {x.shape[1]}")
    h = ad.relu(ad.add(ad.matmul(x, params.w1), params.b1))
    return ad.add(ad.matmul(h, params.w2), params.b2)


def classifier_hidden(params: ClassifierParams, f) -> Node:
    f = ad._lift(f)
    if f.shape[1] != params.w1.shape[0]:
        raise DimensionError(f"classifier expects {params.w1.shape[0]} features, got {f.shape[1]}")
    return ad.add(ad.matmul(f, params.w1), params.b1)


def classifier_forward(params: ClassifierParams, f, mode: str = "eval", rng: Rng | None = None,
                       mask: np.ndarray | None = None) -> Node:
    h = classifier_hidden(params, f)
    h = ad.batch_norm_1d(h, params.bn, mode)
    h = ad.dropout(h, params.p_drop, mode, rng, mask=mask)
    return ad.add(ad.matmul(h, params.w2), params.b2)


def embed(encoder: EncoderParams, x: np.ndarray, classifier: ClassifierParams | None = None,
          feature: str = "pre_classifier") -> np.ndarray:
    """Eval-mode retrieval features as a plain array.

    ``feature="post_fc"`` returns the classifier's first FC output instead of
    the encoder output.
    """
    f = encoder_forward(encoder, ad.const(x), "eval")
    if feature == "pre_classifier":
        return f.value
    if feature == "post_fc":
        if classifier is None:
            raise DimensionError("post_fc features need classifier parameters")
        return classifier_hidden(classifier, f).value
    raise ValueError(f"unknown retrieval feature {feature!r}")

"""Two-branch training loop: instance loss, cross-/intra-view DWDR, triplet arms."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from dwdr import autodiff as ad
from dwdr import losses
from dwdr.autodiff import Node, Rng
from dwdr.data import CrossViewDataset
from dwdr.errors import ConfigError, NumericError
from dwdr.losses import DWDRConfig, TripletConfig
from dwdr.model import ClassifierParams, EncoderParams, classifier_forward, encoder_forward
from dwdr.optim import OptimState, lr_at_epoch as _step_lr, sgd_step
from dwdr.sampling import STRATEGIES, BatchPlan, make_sampler

log = logging.getLogger(__name__)

LOSS_ARMS = ("instance_only", "dwdr_only", "instance_plus_dwdr", "triplet_plus_dwdr", "softmargin_plus_dwdr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    decay_epoch: int = 40
    decay_factor: float = 0.1
    batch_size: int = 16
    sampling: str = "symmetric"
    loss_arm: str = "instance_plus_dwdr"
    dwdr: DWDRConfig = field(default_factory=lambda: DWDRConfig(lam=0.125))
    cross_view_dwdr: bool = True
    intra_view_dwdr: bool = False
    intra_noise_sigma: float = 0.05
    augment_sigma: float = 0.6
    triplet_margin: float = 0.3
    lr_backbone: float = 0.01
    lr_classifier: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    hidden_dim: int = 64
    embed_dim: int = 32
    cls_hidden_dim: int = 64
    p_drop: float = 0.5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.sampling not in STRATEGIES:
            raise ConfigError(f"unknown sampling {self.sampling!r}; choose from {STRATEGIES}")
        if self.loss_arm not in LOSS_ARMS:
            raise ConfigError(f"unknown loss arm {self.loss_arm!r}; choose from {LOSS_ARMS}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.sampling == "symmetric" and self.batch_size % 2:
            raise ConfigError("symmetric sampling needs an even batch_size")
        if self.augment_sigma < 0 or self.intra_noise_sigma < 0:
            raise ConfigError("noise sigmas must be >= 0")
        if not 0 <= self.p_drop < 1:
            raise ConfigError("p_drop must be in [0, 1)")
        if self.uses_dwdr and not (self.cross_view_dwdr or self.intra_view_dwdr):
            raise ConfigError("a DWDR arm needs cross_view_dwdr or intra_view_dwdr enabled")

    @property
    def uses_dwdr(self) -> bool:
        return self.loss_arm != "instance_only"

    @property
    def uses_classifier(self) -> bool:
        return self.loss_arm in ("instance_only", "instance_plus_dwdr")


def lr_at_epoch(cfg: TrainConfig, epoch: int, which: str) -> float:
    if which == "backbone":
        base = cfg.lr_backbone
    elif which == "classifier":
        base = cfg.lr_classifier
    else:
        raise ConfigError(f"unknown parameter group {which!r}")
    return _step_lr(base, epoch, cfg.epochs, cfg.decay_epoch, cfg.decay_factor)


@dataclass
class TrainState:
    encoder: EncoderParams
    classifier: ClassifierParams
    optim: OptimState
    rng: Rng
    sampler: object = None
    epoch: int = 0

    def encoder_params(self) -> dict[str, Node]:
        return self.encoder.named()

    def classifier_params(self) -> dict[str, Node]:
        return self.classifier.named()

    def all_params(self) -> dict[str, Node]:
        return {**self.encoder.named(), **self.classifier.named()}


def init_state(cfg: TrainConfig, input_dim: int, num_classes: int) -> TrainState:
    root = Rng(cfg.seed, 1)
    enc = EncoderParams.init(root.fork(0), input_dim, cfg.hidden_dim, cfg.embed_dim)
    cls = ClassifierParams.init(root.fork(1), cfg.embed_dim, cfg.cls_hidden_dim, num_classes, cfg.p_drop, cfg.bn_momentum)
    return TrainState(enc, cls, OptimState(cfg.momentum, cfg.weight_decay), root.fork(2))


@dataclass
class StepResult:
    total: Node
    l_id: float
    l_dwdr: float
    l_triplet: float
    mean_abs_offdiag: float


def _numpy_pearson(x: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    zx = (x - x.mean(0)) / (x.std(0) + eps)
    zy = (y - y.mean(0)) / (y.std(0) + eps)
    return zx.T @ zy / x.shape[0]


def mean_abs_offdiag(rho: np.ndarray) -> float:
    d = rho.shape[0]
    if d < 2:
        return 0.0
    return float(np.abs(rho[~np.eye(d, dtype=bool)]).mean())


def _negatives(labels: np.ndarray, rng: Rng) -> np.ndarray:
    """For each row, a random row with a different label (itself if none exists)."""
    idx = np.arange(labels.size)
    out = np.empty_like(idx)
    for i in idx:
        cand = idx[labels != labels[i]]
        out[i] = cand[int(rng.gen.integers(cand.size))] if cand.size else i
    return out


def batch_loss(state: TrainState, cfg: TrainConfig, ds: CrossViewDataset, plan: BatchPlan, rng: Rng,
               masks: dict | None = None) -> StepResult:
    """Build the tape for one batch. ``masks`` replays recorded dropout masks."""
    labels = np.array(plan.labels)
    x_sat = ds.matrix(plan.satellite_ids)
    x_drone = ds.matrix(plan.drone_ids)
    if cfg.augment_sigma > 0:
        # stand-in for image augmentation: fresh input jitter every time an item is drawn
        x_sat = x_sat + rng.gen.normal(0.0, cfg.augment_sigma, x_sat.shape)
        x_drone = x_drone + rng.gen.normal(0.0, cfg.augment_sigma, x_drone.shape)
    f_sat = encoder_forward(state.encoder, ad.const(x_sat), "train")
    f_drone = encoder_forward(state.encoder, ad.const(x_drone), "train")
    dw = cfg.dwdr
    l_id = l_dwdr = l_tri = None

    if cfg.uses_classifier:
        m_sat = m_drone = None
        if masks is not None:
            m_sat, m_drone = masks.get("sat"), masks.get("drone")
        z_sat = classifier_forward(state.classifier, f_sat, "train", rng, mask=m_sat)
        z_drone = classifier_forward(state.classifier, f_drone, "train", rng, mask=m_drone)
        l_id = losses.instance_loss(z_sat, z_drone, labels)

    if cfg.uses_dwdr:
        terms = []
        if cfg.cross_view_dwdr:
            terms.append(losses.dwdr_loss(f_sat, f_drone, dw))
        if cfg.intra_view_dwdr:
            for x, f in ((x_sat, f_sat), (x_drone, f_drone)):
                noisy = x + rng.gen.normal(0.0, cfg.intra_noise_sigma, x.shape)
                f_aug = encoder_forward(state.encoder, ad.const(noisy), "train")
                terms.append(losses.dwdr_loss(f, f_aug, dw))
        l_dwdr = terms[0]
        for t in terms[1:]:
            l_dwdr = ad.add(l_dwdr, t)

    if cfg.loss_arm in ("triplet_plus_dwdr", "softmargin_plus_dwdr"):
        variant = "hard_margin" if cfg.loss_arm == "triplet_plus_dwdr" else "soft_margin"
        tc = TripletConfig(cfg.triplet_margin, variant)
        neg = _negatives(labels, rng)
        f_sat_neg = _rows(f_sat, neg)
        f_drone_neg = _rows(f_drone, neg)
        l_tri = ad.add(losses.triplet_loss(f_drone, f_sat, f_sat_neg, tc), losses.triplet_loss(f_sat, f_drone, f_drone_neg, tc))

    if cfg.loss_arm == "instance_only":
        total = l_id
    elif cfg.loss_arm == "dwdr_only":
        total = l_dwdr
    elif cfg.loss_arm == "instance_plus_dwdr":
        total = losses.total_loss(l_id, l_dwdr, dw.alpha)
    else:
        total = losses.total_loss(l_tri, l_dwdr, dw.alpha)

    rho = _numpy_pearson(f_sat.value, f_drone.value, dw.eps)
    return StepResult(
        total,
        l_id.item() if l_id is not None else 0.0,
        l_dwdr.item() if l_dwdr is not None else 0.0,
        l_tri.item() if l_tri is not None else 0.0,
        mean_abs_offdiag(rho),
    )


def _rows(x: Node, idx: np.ndarray) -> Node:
    """Differentiable row gather via a constant selection matrix."""
    sel = np.zeros((idx.size, x.shape[0]))
    sel[np.arange(idx.size), idx] = 1.0
    return ad.matmul(ad.const(sel), x)


def _make_sampler(state: TrainState, cfg: TrainConfig, ds: CrossViewDataset):
    if state.sampler is None:
        state.sampler = make_sampler(ds, cfg.sampling, cfg.batch_size, Rng(cfg.seed, 3))
    return state.sampler


def train_epoch(state: TrainState, ds: CrossViewDataset, cfg: TrainConfig, epoch: int | None = None) -> dict:
    epoch = state.epoch if epoch is None else epoch
    lr_b = lr_at_epoch(cfg, epoch, "backbone")
    lr_c = lr_at_epoch(cfg, epoch, "classifier")
    sampler = _make_sampler(state, cfg, ds)
    enc, cls = state.encoder_params(), state.classifier_params()
    sums = {"l_id": 0.0, "l_dwdr": 0.0, "l_triplet": 0.0, "l_total": 0.0, "mean_abs_offdiag_rho": 0.0}
    n = 0
    for batch_idx, plan in enumerate(sampler.epoch()):
        step_rng = Rng(cfg.seed, (4, epoch, batch_idx))
        res = batch_loss(state, cfg, ds, plan, step_rng)
        value = res.total.item()
        if not math.isfinite(value):
            raise NumericError(
                f"non-finite loss at epoch {epoch} batch {batch_idx} (batch rng seed={cfg.seed}, stream={step_rng.stream})"
            )
        ad.zero_grad(state.all_params().values())
        ad.backward(res.total)
        sgd_step(enc, state.optim, lr_b)
        if cfg.uses_classifier:
            sgd_step(cls, state.optim, lr_c)
        sums["l_id"] += res.l_id
        sums["l_dwdr"] += res.l_dwdr
        sums["l_triplet"] += res.l_triplet
        sums["l_total"] += value
        sums["mean_abs_offdiag_rho"] += res.mean_abs_offdiag
        n += 1
    state.epoch = epoch + 1
    row = {"epoch": epoch}
    row.update({k: v / max(n, 1) for k, v in sums.items()})
    row.update({"lr_backbone": lr_b, "lr_classifier": lr_c, "batches": n})
    return row


def train(cfg: TrainConfig, ds_train: CrossViewDataset, state: TrainState | None = None) -> tuple[TrainState, list[dict]]:
    if state is None:
        state = init_state(cfg, ds_train.dim, ds_train.num_classes)
    rows = []
    for epoch in range(cfg.epochs):
        row = train_epoch(state, ds_train, cfg, epoch)
        log.debug("epoch %d: %s", epoch, row)
        rows.append(row)
    return state, rows

"""Finite-difference verification of every loss and the full training composite.

Each check builds fresh leaves from a seeded draw, runs :func:`backward`, and
compares each leaf gradient against central differences. An entry passes if
its relative error is below ``rtol`` (when ``|analytic| > floor``) or its
absolute error is below ``floor`` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dwdr import autodiff as ad
from dwdr import losses
from dwdr.autodiff import Node, Rng, finite_diff_grad

FLOOR = 1e-8


@dataclass
class GradReport:
    name: str
    instances: int = 0
    max_rel_err: float = 0.0
    max_abs_err_small: float = 0.0
    failures: int = 0
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.instances > 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<22} instances={self.instances:<4d} max_rel_err={self.max_rel_err:.3e} "
                f"tol={self.tolerance:.0e} failures={self.failures}")


def entry_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> tuple[float, float]:
    """(max relative error over large entries, max absolute error over small ones)."""
    big = np.abs(analytic) > floor
    diff = np.abs(analytic - numeric)
    rel = float((diff[big] / np.abs(analytic[big])).max()) if big.any() else 0.0
    small = float(diff[~big].max()) if (~big).any() else 0.0
    return rel, small


def check(fn: Callable[..., Node], inputs: list[np.ndarray], h: float = 1e-5) -> tuple[float, float]:
    """Worst (relative, small-entry absolute) error over all inputs of ``fn``."""
    leaves = [ad.param(x.copy()) for x in inputs]
    ad.backward(fn(*leaves))
    worst_rel = worst_abs = 0.0
    for k, leaf in enumerate(leaves):
        def f(v, k=k):
            args = [ad.const(x) for x in inputs]
            args[k] = ad.const(v)
            return fn(*args).item()

        numeric = finite_diff_grad(f, inputs[k], h)
        rel, small = entry_errors(leaf.grad, numeric)
        worst_rel, worst_abs = max(worst_rel, rel), max(worst_abs, small)
    return worst_rel, worst_abs


def _kink_free(gen, shape, margin=1e-3):
    x = gen.standard_normal(shape)
    while (np.abs(x) < margin).any():
        bad = np.abs(x) < margin
        x[bad] = gen.standard_normal(bad.sum())
    return x


def _case_barlow(gen, b, d, c):
    lam = float(gen.uniform(0.01, 1.0))
    return (lambda m: losses.barlow_twins_loss(m, lam)), [gen.uniform(-1, 1, (d, d))]


def _case_instance(gen, b, d, c):
    labels = gen.integers(0, c, b)
    return (lambda z1, z2: losses.instance_loss(z1, z2, labels)), [gen.standard_normal((b, c)), gen.standard_normal((b, c))]


def _dwdr_cfg(gen):
    return losses.DWDRConfig(lam=float(gen.uniform(0.01, 1.0)), gamma1=float(gen.choice([0.0, 1.0, 2.0, 1.5])),
                             gamma2=float(gen.choice([0.0, 1.0, 2.0, 1.5])), alpha=0.9)


def _case_dwdr(gen, b, d, c):
    cfg = _dwdr_cfg(gen)
    return (lambda x, y: losses.dwdr_loss(x, y, cfg)), [gen.standard_normal((b, d)), gen.standard_normal((b, d))]


def _case_total(gen, b, d, c):
    cfg = _dwdr_cfg(gen)
    labels = gen.integers(0, c, b)
    alpha = float(gen.uniform(0, 1))

    def fn(x, y, w):
        l_id = losses.instance_loss(ad.matmul(x, w), ad.matmul(y, w), labels)
        return losses.total_loss(l_id, losses.dwdr_loss(x, y, cfg), alpha)

    return fn, [gen.standard_normal((b, d)), gen.standard_normal((b, d)), gen.standard_normal((d, c))]


def _triplet_inputs(gen, b, d, margin):
    # keep the hinge argument and every distance away from their kinks
    while True:
        a, p, n = (gen.standard_normal((b, d)) for _ in range(3))
        gap = np.linalg.norm(a - p, axis=1) - np.linalg.norm(a - n, axis=1) + margin
        if np.abs(gap).min() > 1e-3:
            return [a, p, n]


def _case_triplet_hard(gen, b, d, c):
    cfg = losses.TripletConfig(0.3, "hard_margin")
    return (lambda a, p, n: losses.triplet_loss(a, p, n, cfg)), _triplet_inputs(gen, b, d, 0.3)


def _case_triplet_soft(gen, b, d, c):
    cfg = losses.TripletConfig(0.0, "soft_margin")
    return (lambda a, p, n: losses.triplet_loss(a, p, n, cfg)), _triplet_inputs(gen, b, d, 0.0)


LOSS_CASES = {
    "barlow_twins": _case_barlow,
    "instance": _case_instance,
    "dwdr": _case_dwdr,
    "total": _case_total,
    "triplet_hard_margin": _case_triplet_hard,
    "triplet_soft_margin": _case_triplet_soft,
}


def composite_check(seed: int, b: int = 8, d: int = 6, c: int = 5, p: int = 7, h: int = 9, hc: int = 6,
                    step: float = 1e-5) -> tuple[float, float]:
    """Encoder -> classifier + DWDR total loss, dropout masks frozen, against finite differences.

    Every encoder and classifier parameter is perturbed in turn.
    """
    from dwdr.model import ClassifierParams, EncoderParams, classifier_forward, encoder_forward

    rng = Rng(seed, 77)
    gen = rng.gen
    enc = EncoderParams.init(rng.fork(0), p, h, d)
    cls = ClassifierParams.init(rng.fork(1), d, hc, c, p_drop=0.5)
    # a non-trivial final layer so classifier gradients are not vanishingly small
    cls.w2.value = gen.standard_normal(cls.w2.shape) * 0.5
    x1, x2 = gen.standard_normal((b, p)), gen.standard_normal((b, p))
    labels = gen.integers(0, c, b)
    masks = [(gen.random((b, hc)) >= 0.5) / 0.5 for _ in range(2)]
    cfg = losses.DWDRConfig(lam=0.05, gamma1=1.0, gamma2=1.0, alpha=0.9)
    params = {**enc.named(), **cls.named()}
    saved = (cls.bn.running_mean.copy(), cls.bn.running_var.copy())

    def loss() -> Node:
        cls.bn.running_mean, cls.bn.running_var = saved[0].copy(), saved[1].copy()
        f1 = encoder_forward(enc, ad.const(x1), "train")
        f2 = encoder_forward(enc, ad.const(x2), "train")
        z1 = classifier_forward(cls, f1, "train", mask=masks[0])
        z2 = classifier_forward(cls, f2, "train", mask=masks[1])
        return losses.total_loss(losses.instance_loss(z1, z2, labels), losses.dwdr_loss(f1, f2, cfg), cfg.alpha)

    ad.zero_grad(params.values())
    ad.backward(loss())
    worst_rel = worst_abs = 0.0
    for node in params.values():
        analytic = node.grad.copy()

        def f(v, node=node):
            old = node.value
            node.value = v
            try:
                return loss().item()
            finally:
                node.value = old

        numeric = finite_diff_grad(f, node.value.copy(), step)
        rel, small = entry_errors(analytic, numeric)
        worst_rel, worst_abs = max(worst_rel, rel), max(worst_abs, small)
    return worst_rel, worst_abs


def run_suite(seed: int = 0, instances: int = 100, b: int = 8, d: int = 6, c: int = 5,
              loss_tol: float = 1e-6, composite_tol: float = 1e-5, composite_instances: int | None = None,
              cases: dict | None = None) -> list[GradReport]:
    cases = LOSS_CASES if cases is None else cases
    reports = []
    for k, (name, make) in enumerate(cases.items()):
        rep = GradReport(name, tolerance=loss_tol)
        gen = Rng(seed, (55, k)).gen
        for _ in range(instances):
            fn, inputs = make(gen, b, d, c)
            rel, small = check(fn, inputs)
            rep.instances += 1
            rep.max_rel_err = max(rep.max_rel_err, rel)
            rep.max_abs_err_small = max(rep.max_abs_err_small, small)
            rep.failures += int(rel >= loss_tol or small >= FLOOR)
        reports.append(rep)
    rep = GradReport("full_composite", tolerance=composite_tol)
    for i in range(instances if composite_instances is None else composite_instances):
        rel, small = composite_check(seed * 100003 + i, b=b, d=d, c=c)
        rep.instances += 1
        rep.max_rel_err = max(rep.max_rel_err, rel)
        rep.max_abs_err_small = max(rep.max_abs_err_small, small)
        rep.failures += int(rel >= composite_tol or small >= FLOOR)
    reports.append(rep)
    return reports

"""Flat ``key = value`` run configuration shared by every CLI command.

Keys are grouped by prefix (``data.``, ``train.``, ``dwdr.``, ``eval.``) plus
the top-level ``seed`` and ``out``. Unknown keys are rejected. ``seed`` drives
both dataset generation and training.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from typing import Any, Callable

from dwdr.errors import ConfigError
from dwdr.losses import DWDRConfig
from dwdr.synthdata import SynthSpec
from dwdr.trainer import TrainConfig

_SECTION = "run"


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(int(p) for p in parts)


def _counts(text: str) -> int | tuple[int, ...]:
    vals = _int_list(text)
    return vals[0] if len(vals) == 1 else vals


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    doc: str


_DATA = [
    Key("data.num_classes", int, "number of classes C (train + test)"),
    Key("data.train_classes", int, "classes assigned to the training split"),
    Key("data.latent_dim", int, "latent prototype dimension m"),
    Key("data.input_dim", int, "observed feature dimension p"),
    Key("data.drone_per_class", _counts, "drone items per class: one integer, or one integer per class (comma separated)"),
    Key("data.noise_sigma", float, "observation noise sigma on every item"),
    Key("data.jitter_sigma", float, "per-drone-item latent jitter sigma"),
    Key("data.map_gain", float, "gain of the random platform maps before tanh"),
    Key("data.platform_shift", float, "sigma of a constant per-platform offset"),
    Key("data.prototype_clusters", int, "number of shared prototype centres (0 = independent prototypes)"),
    Key("data.cluster_spread", float, "within-cluster spread of prototypes"),
    Key("data.platform_transform_seed", int, "seed of the fixed platform maps"),
    Key("data.split_seed", int, "seed of the train/test class split"),
]
_DATA_FIELDS = {k.name: k.name.split(".", 1)[1] for k in _DATA}

_TRAIN = [
    Key("train.epochs", int, "training epochs"),
    Key("train.decay_epoch", int, "epoch at which both learning rates are multiplied by decay_factor"),
    Key("train.decay_factor", float, "step decay factor"),
    Key("train.batch_size", int, "pairs per batch (symmetric sampling uses half per stream)"),
    Key("train.sampling", str, "random | satellite | drone | symmetric"),
    Key("train.loss_arm", str, "instance_only | dwdr_only | instance_plus_dwdr | triplet_plus_dwdr | softmargin_plus_dwdr"),
    Key("train.cross_view_dwdr", _bool, "apply DWDR between satellite and drone features"),
    Key("train.intra_view_dwdr", _bool, "apply DWDR between each view and a noisy copy of itself"),
    Key("train.intra_noise_sigma", float, "input noise sigma of the intra-view copy"),
    Key("train.augment_sigma", float, "fresh input jitter added to every drawn item during training"),
    Key("train.triplet_margin", float, "margin of the hard-margin triplet arm"),
    Key("train.lr_backbone", float, "encoder base learning rate"),
    Key("train.lr_classifier", float, "classifier base learning rate"),
    Key("train.momentum", float, "SGD momentum"),
    Key("train.weight_decay", float, "coupled L2 weight decay"),
    Key("train.hidden_dim", int, "encoder hidden width h"),
    Key("train.embed_dim", int, "embedding dimension d"),
    Key("train.cls_hidden_dim", int, "classifier hidden width h_c"),
    Key("train.p_drop", float, "classifier dropout rate"),
    Key("train.bn_momentum", float, "batch-norm running-statistics momentum"),
]
_TRAIN_FIELDS = {k.name: k.name.split(".", 1)[1] for k in _TRAIN}

_DWDR = [
    Key("dwdr.lam", float, "off-diagonal balance lambda"),
    Key("dwdr.gamma1", float, "diagonal focusing parameter gamma1"),
    Key("dwdr.gamma2", float, "off-diagonal focusing parameter gamma2"),
    Key("dwdr.alpha", float, "weight of the identity loss in alpha*L_id + (1-alpha)*L_reg"),
    Key("dwdr.eps", float, "Pearson denominator guard"),
]
_DWDR_FIELDS = {k.name: k.name.split(".", 1)[1] for k in _DWDR}

_EVAL = [
    Key("eval.ks", _int_list, "recall cut-offs K (comma separated)"),
    Key("eval.feature", str, "retrieval feature: pre_classifier | post_fc"),
    Key("eval.tau", float, "threshold for counting hard off-diagonal correlations"),
]

_TOP = [
    Key("seed", int, "seed for dataset generation and training"),
    Key("out", str, "output directory"),
]

KEYS: dict[str, Key] = {k.name: k for k in _TOP + _DATA + _TRAIN + _DWDR + _EVAL}


@dataclass(frozen=True)
class RunConfig:
    synth: SynthSpec = dataclasses.field(default_factory=SynthSpec)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    ks: tuple[int, ...] = (1, 5, 10)
    feature: str = "pre_classifier"
    tau: float = 0.2
    out: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("eval.ks needs positive integers")
        if self.feature not in ("pre_classifier", "post_fc"):
            raise ConfigError(f"unknown eval.feature {self.feature!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", dataclasses.replace(self.train, seed=self.seed))

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {"seed": self.seed, "out": self.out}
        for key, fld in _DATA_FIELDS.items():
            out[key] = getattr(self.synth, fld)
        for key, fld in _TRAIN_FIELDS.items():
            out[key] = getattr(self.train, fld)
        for key, fld in _DWDR_FIELDS.items():
            out[key] = getattr(self.train.dwdr, fld)
        out["eval.ks"] = self.ks
        out["eval.feature"] = self.feature
        out["eval.tau"] = self.tau
        return out

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        values = self.flat()
        for key, text in overrides.items():
            values[key] = _parse_value(key, text)
        return _build(values)


def _parse_value(key: str, text: str) -> Any:
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key].parse(text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def _build(values: dict[str, Any]) -> RunConfig:
    try:
        synth = SynthSpec(**{fld: values[k] for k, fld in _DATA_FIELDS.items()})
        dw = DWDRConfig(**{fld: values[k] for k, fld in _DWDR_FIELDS.items()})
        train = TrainConfig(dwdr=dw, seed=values["seed"], **{fld: values[k] for k, fld in _TRAIN_FIELDS.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return RunConfig(synth, train, tuple(values["eval.ks"]), values["eval.feature"], values["eval.tau"],
                     values["out"], values["seed"])


def parse_overrides(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value text`` pairs; rejects unknown and duplicate keys."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",),
                                       inline_comment_prefixes=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.DuplicateOptionError as exc:
        # line numbers are shifted by the injected section header
        raise ConfigError(f"{source}: line {exc.lineno - 1}: duplicate key {exc.option!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{source}: line {lineno - 1}: expected 'key = value', got {line.strip()}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    extra = [name for name in parser.sections() if name != _SECTION]
    if extra:
        raise ConfigError(f"{source}: section headers are not allowed (found [{extra[0]}])")
    raw = dict(parser[_SECTION])
    for key in raw:
        if key not in KEYS:
            raise ConfigError(f"{source}: unknown config key {key!r}")
    return raw


def parse_config(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    return (base or RunConfig()).with_overrides(parse_overrides(text, source))


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def format_config(cfg: RunConfig, docs: bool = True) -> str:
    lines = []
    for key, value in cfg.flat().items():
        if docs:
            lines.append(f"# {KEYS[key].doc}")
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"

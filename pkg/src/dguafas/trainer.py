"""Alternating optimisation of the sample generator and the extractor.

Each batch runs two steps:

1. extractor and head frozen; the generator minimises the imitation loss plus
   the hard-label cross-entropy of its full path through the frozen head;
2. generator frozen; extractor and head minimise the extractor objective
   (main loss plus smoothed cross-entropy on the synthetic paths).

Parameter-block checksums are compared around every step, so a step that
touches a frozen network raises immediately.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import checkpoint
from .backbone import ArchitectureSpec, ClassifierHead, GroupedNetwork, build_head, build_network, group_outputs
from .datagen import Dataset, batches
from .errors import ContractError, DivergenceError
from .losses import LossBundle, assoc_loss, compose_extract_loss, cross_entropy, imitation_loss
from .nn import Adam, AdamState
from .routing import one_hot, route, smooth_targets
from .tensor import Tensor, backward, softmax_rows, take_rows

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
HISTORY_COLUMNS = ("epoch", "cls", "assoc", "imi", "sid_cls", "sood_cls", "extract")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-6
    lam: float = 1.0
    alpha_id: float = 0.5
    alpha_ood: float = 1.0
    seed: int = 0
    architecture: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    use_sid: bool = True
    use_sood: bool = True
    decay_bias: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.weight_decay < 0 or self.lam < 0:
            raise ValueError("lr, weight_decay and lam must be non-negative")
        for name in ("alpha_id", "alpha_ood"):
            a = getattr(self, name)
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {a}")

    @property
    def G(self) -> int:
        return self.architecture.G

    @property
    def K(self) -> int:
        return self.architecture.K

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["architecture"] = ArchitectureSpec.from_dict(d["architecture"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    cls: float
    assoc: float
    imi: float
    sid_cls: float
    sood_cls: float
    extract: float
    suasg_cls: float = 0.0
    real_l1: float = float("nan")

    def row(self) -> list:
        return [getattr(self, c) for c in HISTORY_COLUMNS]


@dataclass
class FitResult:
    extractor: GroupedNetwork
    head: ClassifierHead
    history: list[EpochRecord]
    freeze_checks: int = 0


def history_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(HISTORY_COLUMNS) + "\n")
    for rec in history:
        buf.write(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in rec.row()) + "\n")
    return buf.getvalue()


def _check_finite(bundle: LossBundle, epoch=None, step=None) -> None:
    for name, value in bundle.values().items():
        if name == "lam":
            continue
        if not math.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
            raise DivergenceError(name, value, epoch, step)


def _require_no_grad(params: dict, who: str) -> None:
    for name, p in params.items():
        if p.grad is not None:
            raise ContractError(f"{who} parameter '{name}' carries a gradient while frozen")


def _params(extractor: GroupedNetwork, head: ClassifierHead) -> dict:
    return {**{f"extractor.{k}": v for k, v in extractor.named_parameters().items()}, **head.named_parameters()}


def suasg_objective(batch: Dataset, extractor, head, suasg) -> tuple[Tensor, LossBundle]:
    """Imitation loss plus hard-label CE of the generator's full path through the head."""
    x = Tensor(batch.features)
    r = route(extractor, head, suasg, x, batch.labels, clean=False, sid=False, sood=True)
    imi = imitation_loss(r.suasg_group_feats, r.extract_group_feats)
    cls = cross_entropy(r.sood_logits, one_hot(batch.labels, head.n_classes))
    zero = Tensor(0.0)
    bundle = LossBundle(cls=cls, assoc=zero, imi=imi, sid_cls=zero, sood_cls=zero, main=cls, extract=cls)
    return imi + cls, bundle


def extractor_objective(batch: Dataset, extractor, head, suasg, config: TrainConfig) -> LossBundle:
    K = head.n_classes - 1
    labels = batch.labels
    x = Tensor(batch.features)
    r = route(
        extractor, head, suasg, x, labels,
        alphas=(config.alpha_id, config.alpha_ood), sid=config.use_sid, sood=config.use_sood,
    )
    cls = cross_entropy(r.clean_logits, one_hot(labels, K + 1))
    assoc = assoc_loss(take_rows(r.embeddings, np.flatnonzero(labels == 0)))
    sid_ces = []
    if config.use_sid:
        target = smooth_targets(labels, K, config.alpha_id)
        sid_ces = [cross_entropy(logits, target) for logits in r.sid_logits]
    sood = None
    if config.use_sood:
        sood = cross_entropy(r.sood_logits, smooth_targets(labels, K, config.alpha_ood))
    # reported only: the generator is frozen here
    imi_value = sum(
        np.abs(a.data - b.data).sum() for a, b in zip(r.suasg_group_feats[:-1], r.extract_group_feats[:-1])
    ) / max(len(labels), 1)
    return compose_extract_loss(cls, assoc, sid_ces, sood, config.lam, imi=imi_value)


def train_step_suasg(batch: Dataset, extractor, head, suasg, opt: Adam, config: TrainConfig) -> LossBundle:
    extractor.set_requires_grad(False)
    head.set_requires_grad(False)
    suasg.set_requires_grad(True)
    frozen = _params(extractor, head)
    _require_no_grad(frozen, "extractor")
    total, bundle = suasg_objective(batch, extractor, head, suasg)
    bundle.lam = config.lam
    backward(total)
    _require_no_grad(frozen, "extractor")
    opt.step()
    return bundle


def train_step_extractor(batch: Dataset, extractor, head, suasg, opt: Adam, config: TrainConfig) -> LossBundle:
    suasg.set_requires_grad(False)
    extractor.set_requires_grad(True)
    head.set_requires_grad(True)
    _require_no_grad(suasg.named_parameters(), "generator")
    bundle = extractor_objective(batch, extractor, head, suasg, config)
    backward(bundle.extract)
    _require_no_grad(suasg.named_parameters(), "generator")
    opt.step()
    return bundle


def real_embedding_l1(extractor: GroupedNetwork, data: Dataset) -> float:
    real = data.features[data.labels == 0]
    if len(real) == 0:
        return float("nan")
    emb = group_outputs(extractor, Tensor(real))[-1].data
    return float(np.abs(emb).sum(axis=1).mean())


def predict_proba(extractor: GroupedNetwork, head: ClassifierHead, features) -> np.ndarray:
    """Inference path: extractor groups 1..G, head, softmax."""
    params = extractor.parameters() + head.parameters()
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        logits = head(extractor(Tensor(features)))
        return softmax_rows(logits).data
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


class Trainer:
    """Owns both networks, both optimisers and the epoch counter."""

    def __init__(self, config: TrainConfig):
        self.config = config
        spec = config.architecture
        self.extractor = build_network(spec, seed=config.seed)
        self.head = build_head(spec, seed=config.seed)
        self.suasg = build_network(spec, seed=config.seed + 1)
        self.suasg.load_from(self.extractor)
        hyper = dict(
            learning_rate=config.lr, weight_decay=config.weight_decay, decay_bias=config.decay_bias
        )
        self.opt_extract = Adam(_params(self.extractor, self.head), AdamState(**hyper))
        self.opt_suasg = Adam(self.suasg.named_parameters(), AdamState(**hyper))
        self.epoch = 0
        self.history: list[EpochRecord] = []
        self.freeze_checks = 0

    def step(self, batch: Dataset, epoch: int | None = None, step: int | None = None):
        before = (self.extractor.checksum(), self.head.checksum())
        b1 = train_step_suasg(batch, self.extractor, self.head, self.suasg, self.opt_suasg, self.config)
        if (self.extractor.checksum(), self.head.checksum()) != before:
            raise ContractError("generator step modified the extractor or head")
        _check_finite(b1, epoch, step)

        before = self.suasg.checksum()
        b2 = train_step_extractor(batch, self.extractor, self.head, self.suasg, self.opt_extract, self.config)
        if self.suasg.checksum() != before:
            raise ContractError("extractor step modified the generator")
        _check_finite(b2, epoch, step)
        self.freeze_checks += 2
        return b1, b2

    def train_epoch(self, data: Dataset) -> EpochRecord:
        if data.tainted.any():
            raise ContractError("held-out (test) samples reached the trainer")
        epoch = self.epoch + 1
        sums = np.zeros(7)
        n = 0
        for i, batch in enumerate(batches(data, self.config.batch_size, self.config.seed, epoch)):
            b1, b2 = self.step(batch, epoch, i)
            v2 = b2.values()
            sums += [v2["cls"], v2["assoc"], b1.imi.item(), v2["sid_cls"], v2["sood_cls"], v2["extract"], b1.cls.item()]
            n += 1
        m = sums / max(n, 1)
        rec = EpochRecord(epoch, *(float(v) for v in m[:6]), suasg_cls=float(m[6]),
                          real_l1=real_embedding_l1(self.extractor, data))
        self.epoch = epoch
        self.history.append(rec)
        log.debug("epoch %d: %s", epoch, rec)
        return rec

    def fit(self, data: Dataset, epochs: int | None = None) -> FitResult:
        target = self.config.epochs if epochs is None else epochs
        while self.epoch < target:
            self.train_epoch(data)
        return FitResult(self.extractor, self.head, list(self.history), self.freeze_checks)

    def predict_proba(self, features) -> np.ndarray:
        return predict_proba(self.extractor, self.head, features)

    # --- checkpointing ---

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for prefix, params in (
            ("extractor", self.extractor.named_parameters()),
            ("head", {k.split(".", 1)[1]: v for k, v in self.head.named_parameters().items()}),
            ("suasg", self.suasg.named_parameters()),
        ):
            for k, p in params.items():
                arrays[f"{prefix}.{k}"] = p.data
        for tag, opt in (("opt_extract", self.opt_extract), ("opt_suasg", self.opt_suasg)):
            for k in opt.params:
                arrays[f"{tag}.m.{k}"] = opt.state.m[k]
                arrays[f"{tag}.v.{k}"] = opt.state.v[k]
            arrays[f"{tag}.t"] = np.array([opt.state.t], dtype=np.float64)
        return arrays

    def save(self, path) -> None:
        meta = {
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            "freeze_checks": self.freeze_checks,
            "history": [asdict(r) for r in self.history],
        }
        checkpoint.save(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> "Trainer":
        arrays, meta = checkpoint.load(path)
        self = cls(TrainConfig.from_dict(meta["config"]))
        for prefix, params in (
            ("extractor", self.extractor.named_parameters()),
            ("head", {k.split(".", 1)[1]: v for k, v in self.head.named_parameters().items()}),
            ("suasg", self.suasg.named_parameters()),
        ):
            for k, p in params.items():
                p.data = arrays[f"{prefix}.{k}"].copy()
        for tag, opt in (("opt_extract", self.opt_extract), ("opt_suasg", self.opt_suasg)):
            for k in opt.params:
                opt.state.m[k] = arrays[f"{tag}.m.{k}"].copy()
                opt.state.v[k] = arrays[f"{tag}.v.{k}"].copy()
            opt.state.t = int(arrays[f"{tag}.t"][0])
        self.epoch = meta["epoch"]
        self.freeze_checks = meta.get("freeze_checks", 0)
        self.history = [EpochRecord(**r) for r in meta["history"]]
        return self


def fit(config: TrainConfig, dataset: Dataset) -> FitResult:
    """Train from scratch; only the extractor and head are returned."""
    return Trainer(config).fit(dataset)


def with_ablation(config: TrainConfig, use_sid: bool, use_sood: bool) -> TrainConfig:
    return replace(config, use_sid=use_sid, use_sood=use_sood)

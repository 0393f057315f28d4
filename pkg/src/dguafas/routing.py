"""Path routing between the feature extractor and the sample generator.

For G groups every input produces G synthetic outputs in addition to the
clean one:

* G - 1 in-distribution paths, one per switch point g: generator groups
  1..g, then extractor groups g+1..G, then the head;
* one out-of-distribution path: generator groups 1..G, then the head.

The generator has no head of its own, so the out-of-distribution features are
scored by the extractor's head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import ClassifierHead, GroupedNetwork, check_twins, classify, forward_groups, group_outputs
from .errors import ContractError
from .tensor import Tensor


@dataclass
class RoutedBatch:
    clean_logits: Tensor | None
    sid_logits: list[Tensor]
    sood_logits: Tensor | None
    suasg_group_feats: list[Tensor]
    extract_group_feats: list[Tensor]
    labels: np.ndarray
    alphas: tuple[float, float] = (0.5, 1.0)

    @property
    def embeddings(self) -> Tensor:
        return self.extract_group_feats[-1]

    def all_logits(self) -> list[Tensor]:
        out = [self.clean_logits, *self.sid_logits, self.sood_logits]
        return [t for t in out if t is not None]


def route(
    extractor: GroupedNetwork,
    head: ClassifierHead,
    suasg: GroupedNetwork,
    x: Tensor,
    labels,
    *,
    alphas: tuple[float, float] = (0.5, 1.0),
    clean: bool = True,
    sid: bool = True,
    sood: bool = True,
) -> RoutedBatch:
    check_twins(extractor, suasg)
    labels = np.asarray(labels, dtype=np.int64)
    K = head.n_classes - 1
    if labels.shape != (x.shape[0],):
        raise ContractError(f"got {labels.shape[0]} labels for a batch of {x.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() > K):
        raise ContractError(f"labels must lie in 0..{K}")

    G = extractor.G
    extract_feats = group_outputs(extractor, x)
    suasg_feats = group_outputs(suasg, x)
    clean_logits = classify(head, extract_feats[-1]) if clean else None
    sid_logits = []
    if sid:
        for g in range(1, G):
            emb = forward_groups(extractor, suasg_feats[g - 1], g + 1, G)
            sid_logits.append(classify(head, emb))
    sood_logits = classify(head, suasg_feats[-1]) if sood else None
    return RoutedBatch(clean_logits, sid_logits, sood_logits, suasg_feats, extract_feats, labels, alphas)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def smooth_targets(labels, K: int, alpha: float) -> np.ndarray:
    """(1 - alpha) * onehot(y) + alpha / (K + 1) for every entry."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() > K):
        raise ContractError(f"labels must lie in 0..{K}")
    return (1.0 - alpha) * one_hot(labels, K + 1) + alpha / (K + 1)

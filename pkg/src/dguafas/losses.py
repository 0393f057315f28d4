"""Training objectives.

``cross_entropy`` handles both hard and smoothed targets, ``assoc_loss`` pulls
real-class embeddings toward the origin, ``imitation_loss`` ties generator
features to extractor features group by group, and ``compose_extract_loss``
assembles the extractor objective.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, as_tensor, log_softmax_rows, mul, sum_rows, tensor_abs, tensor_sum

_ZERO = 0.0


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Batch mean of -sum_c t_c * log_softmax(logits)_c."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise DimensionError(f"targets {t.shape} do not match logits {logits.shape}")
    sums = t.sum(axis=1)
    bad = np.flatnonzero((np.abs(sums - 1.0) > 1e-6) | (t < 0).any(axis=1))
    if bad.size:
        raise ContractError(f"target row {bad[0]} is not a probability vector (sum {sums[bad[0]]!r})")
    B = logits.shape[0]
    if B == 0:
        return Tensor(0.0)
    return mul(tensor_sum(mul(log_softmax_rows(logits), t)), -1.0 / B)


def assoc_loss(real_embeddings: Tensor) -> Tensor:
    """Mean L1 norm of the real-class embeddings; 0 for an empty set."""
    R = real_embeddings.shape[0]
    if R == 0:
        return Tensor(0.0)
    return mul(tensor_sum(tensor_abs(real_embeddings)), 1.0 / R)


def imitation_loss(
    suasg_feats: Sequence[Tensor],
    extract_feats: Sequence[Tensor],
    groups: Sequence[int] | None = None,
) -> Tensor:
    """Per-sample L1 distance between paired group features, summed over groups.

    ``groups`` holds 1-based group indices and defaults to 1..G-1.
    """
    if len(suasg_feats) != len(extract_feats):
        raise DimensionError(f"{len(suasg_feats)} generator groups vs {len(extract_feats)} extractor groups")
    if groups is None:
        groups = range(1, len(suasg_feats))
    total = None
    N = None
    for g in groups:
        a, b = suasg_feats[g - 1], extract_feats[g - 1]
        if a.shape != b.shape:
            raise DimensionError(f"group {g}: shapes {a.shape} and {b.shape} differ")
        N = a.shape[0]
        term = tensor_sum(tensor_abs(a - b))
        total = term if total is None else total + term
    if total is None or N == 0:
        return Tensor(0.0)
    return mul(total, 1.0 / N)


@dataclass
class LossBundle:
    cls: Tensor
    assoc: Tensor
    imi: Tensor
    sid_cls: Tensor
    sood_cls: Tensor
    main: Tensor
    extract: Tensor
    lam: float = 1.0

    def values(self) -> dict[str, float]:
        return {f.name: (getattr(self, f.name) if f.name == "lam" else getattr(self, f.name).item()) for f in fields(self)}


def compose_extract_loss(cls, assoc, sid_ces: Sequence, sood, lam: float, imi=_ZERO) -> LossBundle:
    """main = cls + lam * assoc; extract = main + mean(sid_ces) + sood.

    An empty ``sid_ces`` and a ``None`` sood contribute 0 (ablated terms).
    """
    cls, assoc, imi = as_tensor(cls), as_tensor(assoc), as_tensor(imi)
    main = cls + mul(assoc, float(lam))
    if sid_ces:
        sid = as_tensor(sid_ces[0])
        for term in sid_ces[1:]:
            sid = sid + as_tensor(term)
        sid = mul(sid, 1.0 / len(sid_ces))
    else:
        sid = Tensor(0.0)
    sood = Tensor(0.0) if sood is None else as_tensor(sood)
    extract = main + sid + sood
    return LossBundle(cls, assoc, imi, sid, sood, main, extract, float(lam))

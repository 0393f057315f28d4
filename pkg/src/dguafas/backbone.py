"""Grouped feed-forward networks and the classifier head.

A network is split into G contiguous groups. Group indices are 1-based in the
public API so that ``forward_groups(net, x, g + 1, G)`` reads like the routing
rule it implements.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ArchitectureError, DimensionError
from .nn import LinearLayer, init_layer
from .tensor import Tensor


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int = 8
    group_widths: tuple[tuple[int, ...], ...] = ((32,), (32,), (16,))
    embed_dim: int = 16
    K: int = 2

    def __post_init__(self):
        object.__setattr__(self, "group_widths", tuple(tuple(int(w) for w in g) for g in self.group_widths))
        if self.G < 2:
            raise ArchitectureError(f"need at least 2 groups, got {self.G}")
        if any(len(g) == 0 for g in self.group_widths):
            raise ArchitectureError("every group needs at least one layer")
        if min(w for g in self.group_widths for w in g) < 1 or self.input_dim < 1:
            raise ArchitectureError("all widths must be >= 1")
        if self.group_widths[-1][-1] != self.embed_dim:
            raise ArchitectureError(
                f"last group ends at width {self.group_widths[-1][-1]} but embed_dim is {self.embed_dim}"
            )
        if self.K < 1:
            raise ArchitectureError(f"K must be >= 1, got {self.K}")

    @property
    def G(self) -> int:
        return len(self.group_widths)

    def group_in_width(self, g: int) -> int:
        return self.input_dim if g == 1 else self.group_widths[g - 2][-1]

    def group_out_width(self, g: int) -> int:
        return self.group_widths[g - 1][-1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "group_widths": [list(g) for g in self.group_widths],
            "embed_dim": self.embed_dim,
            "K": self.K,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(
            input_dim=d["input_dim"],
            group_widths=tuple(tuple(g) for g in d["group_widths"]),
            embed_dim=d["embed_dim"],
            K=d["K"],
        )


@dataclass
class GroupedNetwork:
    spec: ArchitectureSpec
    groups: list[list[LinearLayer]] = field(default_factory=list)

    @property
    def G(self) -> int:
        return len(self.groups)

    @property
    def embed_dim(self) -> int:
        return self.groups[-1][-1].out_features

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for gi, group in enumerate(self.groups, start=1):
            for li, layer in enumerate(group):
                out[f"g{gi}.l{li}.weight"] = layer.weight
                out[f"g{gi}.l{li}.bias"] = layer.bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def group_parameters(self, g: int) -> list[Tensor]:
        return [p for layer in self.groups[g - 1] for p in layer.parameters()]

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def load_from(self, other: "GroupedNetwork") -> None:
        """Copy parameter values (not identity) from an architectural twin."""
        check_twins(self, other)
        for dst, src in zip(self.parameters(), other.parameters()):
            dst.data = src.data.copy()

    def checksum(self) -> int:
        return params_checksum(self.parameters())

    def __call__(self, x: Tensor) -> Tensor:
        return forward_groups(self, x, 1, self.G)


@dataclass
class ClassifierHead:
    linear: LinearLayer

    @property
    def n_classes(self) -> int:
        return self.linear.out_features

    def named_parameters(self) -> dict[str, Tensor]:
        return {"head.weight": self.linear.weight, "head.bias": self.linear.bias}

    def parameters(self) -> list[Tensor]:
        return self.linear.parameters()

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def checksum(self) -> int:
        return params_checksum(self.parameters())

    def __call__(self, emb: Tensor) -> Tensor:
        return classify(self, emb)


def params_checksum(params) -> int:
    crc = 0
    for p in params:
        crc = zlib.crc32(np.ascontiguousarray(p.data).tobytes(), crc)
    return crc


def build_network(spec: ArchitectureSpec, seed: int) -> GroupedNetwork:
    """Build a grouped MLP; relu after every layer except the very last one."""
    groups = []
    width = spec.input_dim
    layer_idx = 0
    n_layers = sum(len(g) for g in spec.group_widths)
    for widths in spec.group_widths:
        group = []
        for w in widths:
            last = layer_idx == n_layers - 1
            group.append(init_layer(width, w, seed=[seed, layer_idx], activation="none" if last else "relu"))
            width = w
            layer_idx += 1
        groups.append(group)
    return GroupedNetwork(spec, groups)


def build_head(spec: ArchitectureSpec, seed: int) -> ClassifierHead:
    return ClassifierHead(init_layer(spec.embed_dim, spec.K + 1, seed=[seed, 10_000], activation="none"))


def check_twins(a: GroupedNetwork, b: GroupedNetwork) -> None:
    if a.G != b.G:
        raise ArchitectureError(f"networks have {a.G} and {b.G} groups")
    for g, (ga, gb) in enumerate(zip(a.groups, b.groups), start=1):
        sa = [(l.weight.shape, l.activation) for l in ga]
        sb = [(l.weight.shape, l.activation) for l in gb]
        if sa != sb:
            raise ArchitectureError(f"group {g} differs between networks: {sa} vs {sb}")


def forward_groups(net: GroupedNetwork, x: Tensor, from_group: int, to_group: int) -> Tensor:
    """Apply groups ``from_group..to_group`` (inclusive, 1-based) in order."""
    if not 1 <= from_group <= to_group <= net.G:
        raise ValueError(f"invalid group range {from_group}..{to_group} for G={net.G}")
    expected = net.groups[from_group - 1][0].in_features
    if x.data.ndim != 2 or x.shape[1] != expected:
        raise DimensionError(f"group {from_group} expects input width {expected}, got shape {x.shape}")
    for group in net.groups[from_group - 1 : to_group]:
        for layer in group:
            x = layer(x)
    return x


def group_outputs(net: GroupedNetwork, x: Tensor) -> list[Tensor]:
    """Outputs of every group from one pass; the last one is the embedding."""
    outs = []
    for g in range(1, net.G + 1):
        x = forward_groups(net, x, g, g)
        outs.append(x)
    return outs


def classify(head: ClassifierHead, emb: Tensor) -> Tensor:
    if emb.data.ndim != 2 or emb.shape[1] != head.linear.in_features:
        raise DimensionError(f"head expects embedding width {head.linear.in_features}, got {emb.shape}")
    return head.linear(emb)

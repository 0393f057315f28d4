"""Tape gradients of every objective vs. the independent finite-difference oracle."""

import numpy as np
import pytest

from dguafas.backbone import ArchitectureSpec, build_head, build_network
from dguafas.datagen import Dataset
from dguafas.losses import assoc_loss, cross_entropy, imitation_loss
from dguafas.routing import smooth_targets
from dguafas.tensor import Tensor, backward, take_rows
from dguafas.trainer import TrainConfig, extractor_objective, suasg_objective

import oracle

TOL = 1e-4


def make_case(seed, batch=8):
    """Default-spec networks in generic position (non-zero biases, generator != extractor)."""
    spec = ArchitectureSpec()
    rng = np.random.default_rng(seed)
    e, h, s = build_network(spec, seed), build_head(spec, seed), build_network(spec, seed + 1)
    for p in e.parameters() + h.parameters():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    for ps, pe in zip(s.parameters(), e.parameters()):
        ps.data = pe.data + 0.05 * rng.standard_normal(pe.shape)
    x = rng.standard_normal((batch, spec.input_dim))
    labels = np.arange(batch) % (spec.K + 1)
    ctx = dict(e=oracle.layout(e, "e."), s=oracle.layout(s, "s."), x=x, labels=labels, C=spec.K + 1)
    return e, h, s, ctx


def tape_grads(e, h, s):
    out = {}
    for prefix, params in (("e.", e.named_parameters()), ("s.", s.named_parameters())):
        for k, p in params.items():
            out[prefix + k] = p.grad
    out["head.weight"], out["head.bias"] = h.linear.weight.grad, h.linear.bias.grad
    return out


def set_trainable(e, h, s, extractor, generator):
    e.set_requires_grad(extractor)
    h.set_requires_grad(extractor)
    s.set_requires_grad(generator)
    for p in e.parameters() + h.parameters() + s.parameters():
        p.grad = None


def check(objective, ctx, params, grads, names):
    worst = 0.0
    skipped = 0
    for name in names:
        assert grads[name] is not None, f"no tape gradient for {name}"
        num, _, sk = oracle.numeric_grad(objective, ctx, params, name)
        skipped += sk
        worst = max(worst, oracle.max_rel_error(grads[name], num))
    return worst, skipped


def extractor_names(params):
    return [k for k in params if k.startswith("e.") or k.startswith("head.")]


def run_all_objectives(seed):
    """Worst relative error per objective for one seed."""
    results = {}
    e, h, s, ctx = make_case(seed)
    batch = Dataset(ctx["x"], ctx["labels"], np.zeros(len(ctx["labels"]), int))
    params = oracle.collect_params(e, h, s)
    e_names = [k for k in params if k.startswith("e.")]

    set_trainable(e, h, s, True, False)
    emb = e(Tensor(ctx["x"]))
    backward(assoc_loss(take_rows(emb, np.flatnonzero(ctx["labels"] == 0))))
    results["assoc"] = check(oracle.assoc_objective, ctx, params, tape_grads(e, h, s), e_names)

    set_trainable(e, h, s, True, True)
    from dguafas.backbone import group_outputs

    backward(imitation_loss(group_outputs(s, Tensor(ctx["x"])), group_outputs(e, Tensor(ctx["x"]))))
    imi_names = [k for k in params if k[2:4] in ("g1", "g2")]
    results["imitation"] = check(oracle.imitation_objective, ctx, params, tape_grads(e, h, s), imi_names)

    set_trainable(e, h, s, True, False)
    logits = h(e(Tensor(ctx["x"])))
    backward(cross_entropy(logits, smooth_targets(ctx["labels"], 2, 0.5)))
    results["smoothed_ce"] = check(oracle.smoothed_ce_objective, ctx, params, tape_grads(e, h, s), extractor_names(params))

    set_trainable(e, h, s, True, False)
    backward(extractor_objective(batch, e, h, s, TrainConfig()).extract)
    results["extract"] = check(oracle.extract_objective, ctx, params, tape_grads(e, h, s), extractor_names(params))

    set_trainable(e, h, s, False, True)
    total, _ = suasg_objective(batch, e, h, s)
    backward(total)
    s_names = [k for k in params if k.startswith("s.")]
    results["suasg"] = check(oracle.suasg_objective, ctx, params, tape_grads(e, h, s), s_names)
    return results


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_objective_matches_finite_differences(seed):
    for name, (worst, skipped) in run_all_objectives(seed).items():
        assert worst < TOL, f"{name}: relative error {worst:.3g}"
        assert skipped <= 2, f"{name}: {skipped} coordinates straddled kinks on both sides"


def test_frozen_parameters_receive_no_gradient():
    e, h, s, ctx = make_case(5)
    batch = Dataset(ctx["x"], ctx["labels"], np.zeros(len(ctx["labels"]), int))
    set_trainable(e, h, s, True, False)
    backward(extractor_objective(batch, e, h, s, TrainConfig()).extract)
    assert all(p.grad is None for p in s.parameters())
    set_trainable(e, h, s, False, True)
    backward(suasg_objective(batch, e, h, s)[0])
    assert all(p.grad is None for p in e.parameters() + h.parameters())

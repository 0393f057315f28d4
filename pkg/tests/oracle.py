"""Independent plain-numpy reference for the losses, used as a gradient oracle.

Nothing here touches the tape. Every forward function broadcasts over a leading
"perturbation" axis, so a whole block of finite-difference probes runs as one
batched numpy evaluation. Each forward also returns the sign pattern of every
relu pre-activation and every |.| argument; a probe whose pattern differs from
the base point has crossed a kink and falls back to a one-sided difference.
"""

import numpy as np


def layout(net, prefix):
    """[[(weight_name, bias_name, activation), ...] per group] for a GroupedNetwork."""
    groups = []
    for gi, group in enumerate(net.groups, start=1):
        groups.append([
            (f"{prefix}g{gi}.l{li}.weight", f"{prefix}g{gi}.l{li}.bias", layer.activation)
            for li, layer in enumerate(group)
        ])
    return groups


def collect_params(extractor, head, suasg):
    params = {}
    for prefix, net in (("e.", extractor), ("s.", suasg)):
        for k, p in net.named_parameters().items():
            params[prefix + k] = p.data.copy()
    params["head.weight"] = head.linear.weight.data.copy()
    params["head.bias"] = head.linear.bias.data.copy()
    return params


def _bias(b):
    return b[..., None, :] if b.ndim > 1 else b


def run_groups(groups, h, params, signs):
    outs = []
    for group in groups:
        for wn, bn, act in group:
            z = h @ params[wn] + _bias(params[bn])
            if act == "relu":
                signs.append(z > 0)
                z = np.where(z > 0, z, 0.0)
            h = z
        outs.append(h)
    return outs


def head_logits(emb, params):
    return emb @ params["head.weight"] + _bias(params["head.bias"])


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def ce(logits, targets):
    return -(targets * log_softmax(logits)).sum(axis=-1).mean(axis=-1)


def smoothed(labels, n_classes, alpha):
    onehot = np.eye(n_classes)[labels]
    return (1 - alpha) * onehot + alpha / n_classes


def l1_rows_mean(x, signs):
    signs.append(np.sign(x))
    return np.abs(x).sum(axis=(-1, -2)) / x.shape[-2]


# --- the objectives ---------------------------------------------------------


def assoc_objective(ctx, params):
    signs = []
    emb = run_groups(ctx["e"], ctx["x"], params, signs)[-1]
    real = emb[..., ctx["labels"] == 0, :]
    return l1_rows_mean(real, signs), signs


def imitation_objective(ctx, params):
    signs = []
    fe = run_groups(ctx["e"], ctx["x"], params, signs)
    fs = run_groups(ctx["s"], ctx["x"], params, signs)
    total = 0.0
    for g in range(len(fe) - 1):
        d = fs[g] - fe[g]
        signs.append(np.sign(d))
        total = total + np.abs(d).sum(axis=(-1, -2))
    return total / ctx["x"].shape[0], signs


def smoothed_ce_objective(ctx, params, alpha=0.5):
    signs = []
    emb = run_groups(ctx["e"], ctx["x"], params, signs)[-1]
    return ce(head_logits(emb, params), smoothed(ctx["labels"], ctx["C"], alpha)), signs


def extract_objective(ctx, params, lam=1.0, alpha_id=0.5, alpha_ood=1.0):
    """cls + lam * assoc + mean over switch points of SID CE + SOOD CE."""
    signs = []
    labels, C = ctx["labels"], ctx["C"]
    fe = run_groups(ctx["e"], ctx["x"], params, signs)
    fs = run_groups(ctx["s"], ctx["x"], params, signs)
    G = len(fe)
    cls = ce(head_logits(fe[-1], params), np.eye(C)[labels])
    assoc = l1_rows_mean(fe[-1][..., labels == 0, :], signs)
    sid = 0.0
    for g in range(1, G):
        emb = run_groups(ctx["e"][g:], fs[g - 1], params, signs)[-1]
        sid = sid + ce(head_logits(emb, params), smoothed(labels, C, alpha_id))
    sid = sid / (G - 1)
    sood = ce(head_logits(fs[-1], params), smoothed(labels, C, alpha_ood))
    return cls + lam * assoc + sid + sood, signs


def suasg_objective(ctx, params):
    """Imitation loss plus hard-label CE of the generator's full path."""
    imi, signs = imitation_objective(ctx, params)
    fs = run_groups(ctx["s"], ctx["x"], params, [])
    cls = ce(head_logits(fs[-1], params), np.eye(ctx["C"])[ctx["labels"]])
    return imi + cls, signs


# --- finite differences -----------------------------------------------------


def _flat_signs(signs, P):
    parts = []
    for s in signs:
        s = np.asarray(s)
        if P is not None:
            if s.ndim == 2:  # computed upstream of the perturbed parameter
                s = np.broadcast_to(s, (P,) + s.shape)
            parts.append(s.reshape(P, -1))
        else:
            parts.append(s.reshape(-1))
    return np.concatenate(parts, axis=-1)


def numeric_grad(objective, ctx, params, name, h=1e-5, chunk=256):
    """Central differences with one-sided fallback at kinks.

    Returns (grad, n_one_sided, n_skipped); skipped coordinates are NaN.
    """
    base, base_signs = objective(ctx, params)
    base = float(base)
    ref = _flat_signs(base_signs, None)
    p = params[name]
    n = p.size
    grad = np.empty(n)
    one_sided = skipped = 0
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        m = idx.size
        stack = np.broadcast_to(p, (2 * m,) + p.shape).copy()
        flat = stack.reshape(2 * m, -1)
        flat[np.arange(m), idx] += h
        flat[m + np.arange(m), idx] -= h
        vals, signs = objective(ctx, {**params, name: stack})
        vals = np.broadcast_to(vals, (2 * m,))
        pattern = _flat_signs(signs, 2 * m)
        same = (pattern == ref).all(axis=1)
        plus_ok, minus_ok = same[:m], same[m:]
        central = (vals[:m] - vals[m:]) / (2 * h)
        forward = (vals[:m] - base) / h
        backward = (base - vals[m:]) / h
        g = np.where(plus_ok & minus_ok, central, np.where(plus_ok, forward, np.where(minus_ok, backward, np.nan)))
        one_sided += int(np.sum(plus_ok ^ minus_ok))
        skipped += int(np.sum(~plus_ok & ~minus_ok))
        grad[idx] = g
    return grad.reshape(p.shape), one_sided, skipped


def max_rel_error(analytic, numeric):
    ok = ~np.isnan(numeric)
    err = np.abs(analytic[ok] - numeric[ok]) / np.maximum(1.0, np.abs(numeric[ok]))
    return float(err.max()) if err.size else 0.0

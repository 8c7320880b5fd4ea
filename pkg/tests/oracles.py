"""Independent re-implementations used as test oracles.

Nothing here imports the engine's kernels: convolutions go through
``scipy.signal.correlate`` and everything runs per sample in float64.
"""
import numpy as np
from scipy import signal

from subspace_lab import micronet as mn


def conv_same_or_valid(x, w, b, padding):
    # x (C, H, W), w (F, C, k, k)
    mode = "same" if padding == "same" else "valid"
    out = [sum(signal.correlate(x[c], w[f, c], mode=mode) for c in range(x.shape[0])) + b[f]
           for f in range(w.shape[0])]
    return np.stack(out)


def pool2(x):
    c, h, w = x.shape
    x = x[:, :h // 2 * 2, :w // 2 * 2]
    # window order: top-left, top-right, bottom-left, bottom-right
    win = np.stack([x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2]])
    arg = np.argmax(win, axis=0)
    return np.take_along_axis(win, arg[None], axis=0)[0], arg


def reference_forward(spec, params, x, drop=None):
    """Logits and the activation pattern (ReLU signs, pool choices) of one input."""
    h = np.asarray(x, dtype=np.float64)
    masks = drop.unit_masks if drop is not None else {}
    keep = drop.block_keep if drop is not None else {}
    pattern = []
    for i, layer in enumerate(spec.layers):
        p = {k: np.asarray(v, dtype=np.float64) for k, v in params.get(i, {}).items()}
        if layer.kind in ("dense", "head"):
            h = p["w"] @ h + p["b"]
        elif layer.kind == "conv":
            h = conv_same_or_valid(h, p["w"], p["b"], layer.padding)
        elif layer.kind == "relu":
            pattern.append(h > 0)
            h = np.maximum(h, 0)
        elif layer.kind == "maxpool":
            h, arg = pool2(h)
            pattern.append(arg)
        elif layer.kind == "dropout":
            if str(i) in masks:
                h = h * masks[str(i)]
        elif layer.kind == "flatten":
            h = h.ravel()
        elif layer.kind == "residual":
            if keep.get(i, True):
                z1 = conv_same_or_valid(h, p["w1"], p["b1"], "same")
                pattern.append(z1 > 0)
                a1 = np.maximum(z1, 0) * masks.get(f"{i}.1", 1.0)
                z2 = conv_same_or_valid(a1, p["w2"], p["b2"], "same")
                pattern.append(z2 > 0)
                h = h + np.maximum(z2, 0) * masks.get(f"{i}.2", 1.0)
    return h, pattern


def hinge(scores, y):
    others = np.delete(scores, y)
    return float(others.max() - scores[y])


def cross_entropy(scores, y):
    z = scores - scores.max()
    return float(np.log(np.exp(z).sum()) - z[y])


def loss_signature(scores, y, kind):
    if kind == "hinge":
        masked = scores.copy()
        masked[y] = -np.inf
        return int(np.argmax(masked))
    return None


def same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def check_input_gradient(spec, params, x, y, loss_kind, grad, idx, h=1e-3, drop=None):
    """Relative errors of ``grad`` at flat indices ``idx`` against central differences.

    Components whose +/- h perturbation changes the activation pattern (a
    ReLU sign, a pool choice or the hinge rival class) sit on a kink and are
    skipped, as are components with magnitude <= 1e-6. Returns the list of
    relative errors of the checked components.
    """
    loss = hinge if loss_kind == "hinge" else cross_entropy
    x = np.asarray(x, dtype=np.float64)
    base_scores, base_pat = reference_forward(spec, params, x, drop)
    base_sig = loss_signature(base_scores, y, loss_kind)
    flat_grad = np.asarray(grad, dtype=np.float64).ravel()
    errors = []
    for j in idx:
        values = []
        smooth = True
        for sign in (1.0, -1.0):
            xp = x.copy().ravel()
            xp[j] += sign * h
            s, pat = reference_forward(spec, params, xp.reshape(x.shape), drop)
            if not same_pattern(pat, base_pat) or loss_signature(s, y, loss_kind) != base_sig:
                smooth = False
                break
            values.append(loss(s, y))
        if not smooth:
            continue
        fd = (values[0] - values[1]) / (2 * h)
        an = flat_grad[j]
        if max(abs(fd), abs(an)) <= 1e-6:
            continue
        errors.append(abs(fd - an) / max(abs(fd), abs(an)))
    return errors


def check_param_gradient(spec, params, x, labels, grads, coords, h=1e-3):
    """Like :func:`check_input_gradient` for the mean cross-entropy of a batch.

    ``coords`` lists ``(layer, name, flat_index)`` triples.
    """
    xs = np.asarray(x, dtype=np.float64)

    def evaluate(ps):
        total, pats = 0.0, []
        for xi, yi in zip(xs, labels):
            s, pat = reference_forward(spec, ps, xi)
            total += cross_entropy(s, int(yi))
            pats.append(pat)
        return total / len(xs), pats

    _, base_pats = evaluate(params)
    errors = []
    for layer, name, j in coords:
        values = []
        smooth = True
        for sign in (1.0, -1.0):
            ps = mn.ParameterSet({i: {k: np.array(v, dtype=np.float64) for k, v in t.items()}
                                  for i, t in params.items()})
            ps[layer][name].ravel()[j] += sign * h
            value, pats = evaluate(ps)
            if not all(same_pattern(a, b) for a, b in zip(pats, base_pats)):
                smooth = False
                break
            values.append(value)
        if not smooth:
            continue
        fd = (values[0] - values[1]) / (2 * h)
        an = float(np.asarray(grads[layer][name], dtype=np.float64).ravel()[j])
        if max(abs(fd), abs(an)) <= 1e-6:
            continue
        errors.append(abs(fd - an) / max(abs(fd), abs(an)))
    return errors

"""Minimal numpy network engine.

Networks are described by a :class:`NetworkSpec` (an ordered tuple of layer
descriptors) and evaluated against a :class:`ParameterSet`. The engine gives
deterministic forward passes and exact reverse-mode gradients with respect to
both the input and the parameters, optionally under a :class:`DropSample`
that zeroes hidden units (drop-out) or bypasses residual branches
(drop-layer). Masks are pure 0/1: no ``1/(1-p)`` rescaling is applied.

Arrays are channels-first, ``(C, H, W)`` for one image or ``(B, C, H, W)``
for a batch. Computation happens in the parameters' dtype (float32 unless the
caller casts the parameters, e.g. for float64 gradient checking).
"""
from __future__ import annotations

import collections
import contextlib
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import losses

DTYPE = np.float32


class StructureError(ValueError):
    """Shapes or descriptors do not fit together."""


class InputError(ValueError):
    """The input tensor is unusable (wrong shape, non-finite values)."""


class ConfigError(ValueError):
    """An out-of-range hyperparameter such as a drop ratio."""


# ---------------------------------------------------------------------------
# Layer descriptors


@dataclass(frozen=True)
class Dense:
    units: int
    kind = "dense"


@dataclass(frozen=True)
class Conv2D:
    filters: int
    kernel: int = 3
    padding: str = "same"
    kind = "conv"


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


@dataclass(frozen=True)
class MaxPool2:
    kind = "maxpool"


@dataclass(frozen=True)
class Residual:
    """Two same-padded conv+ReLU stages added onto a skip path.

    ``out = x + relu(conv2(relu(conv1(x))))``; with the block dropped the
    output is ``x``. Each inner ReLU output carries its own drop-out site.
    """

    kernel: int = 3
    droppable: bool = True
    kind = "residual"


@dataclass(frozen=True)
class Dropout:
    kind = "dropout"


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"


@dataclass(frozen=True)
class Head:
    """Dense classifier head producing ``class_count`` logits."""

    kind = "head"


Layer = Union[Dense, Conv2D, ReLU, MaxPool2, Residual, Dropout, Flatten, Head]
LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv2D, ReLU, MaxPool2, Residual, Dropout, Flatten, Head)}
PARAMETRIC = ("dense", "conv", "residual", "head")


def layer_to_dict(layer: Layer) -> dict:
    out = {"kind": layer.kind}
    out.update(layer.__dict__)
    return out


def layer_from_dict(d: Mapping) -> Layer:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in LAYER_TYPES:
        raise StructureError(f"unknown layer kind {kind!r}")
    return LAYER_TYPES[kind](**d)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple
    class_count: int
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "shapes", tuple(self._infer_shapes()))

    def _infer_shapes(self):
        if self.class_count < 2:
            raise StructureError("class_count must be at least 2")
        if not self.layers or self.layers[-1].kind != "head":
            raise StructureError("the last layer must be the classifier head")
        if sum(layer.kind == "head" for layer in self.layers) != 1:
            raise StructureError("exactly one classifier head is allowed")
        shape = self.input_shape
        if not shape or any(s <= 0 for s in shape):
            raise StructureError(f"bad input shape {shape}")
        shapes = [shape]
        for i, layer in enumerate(self.layers):
            kind = layer.kind
            if kind in ("conv", "maxpool", "residual") and len(shape) != 3:
                raise StructureError(f"layer {i} ({kind}) needs a (C, H, W) input, got {shape}")
            if kind in ("dense", "head") and len(shape) != 1:
                raise StructureError(f"layer {i} ({kind}) needs a flat input, got {shape}")
            if kind == "dense":
                shape = (layer.units,)
            elif kind == "head":
                shape = (self.class_count,)
            elif kind == "conv":
                c, h, w = shape
                if layer.padding == "same":
                    if layer.kernel % 2 != 1:
                        raise StructureError("same padding needs an odd kernel")
                    shape = (layer.filters, h, w)
                elif layer.padding == "valid":
                    if h < layer.kernel or w < layer.kernel:
                        raise StructureError(f"layer {i}: kernel larger than input {shape}")
                    shape = (layer.filters, h - layer.kernel + 1, w - layer.kernel + 1)
                else:
                    raise StructureError(f"unknown padding {layer.padding!r}")
            elif kind == "maxpool":
                c, h, w = shape
                if h < 2 or w < 2:
                    raise StructureError(f"layer {i}: cannot pool {shape}")
                shape = (c, h // 2, w // 2)
            elif kind == "residual":
                if layer.kernel % 2 != 1:
                    raise StructureError("residual blocks need an odd kernel")
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            shapes.append(shape)
        return shapes

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def dropout_sites(self) -> dict:
        """Map site key -> activation shape. Residual blocks own two sites each."""
        sites = {}
        for i, layer in enumerate(self.layers):
            if layer.kind == "dropout":
                sites[str(i)] = self.shapes[i]
            elif layer.kind == "residual":
                sites[f"{i}.1"] = self.shapes[i]
                sites[f"{i}.2"] = self.shapes[i]
        return sites

    def droppable_blocks(self) -> list:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "residual" and layer.droppable]

    def param_shapes(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            in_shape = self.shapes[i]
            if layer.kind in ("dense", "head"):
                units = layer.units if layer.kind == "dense" else self.class_count
                out[i] = {"w": (units, in_shape[0]), "b": (units,)}
            elif layer.kind == "conv":
                out[i] = {"w": (layer.filters, in_shape[0], layer.kernel, layer.kernel), "b": (layer.filters,)}
            elif layer.kind == "residual":
                c, k = in_shape[0], layer.kernel
                out[i] = {"w1": (c, c, k, k), "b1": (c,), "w2": (c, c, k, k), "b2": (c,)}
        return out

    def to_dict(self) -> dict:
        return {
            "layers": [layer_to_dict(layer) for layer in self.layers],
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(tuple(layer_from_dict(x) for x in d["layers"]), tuple(d["input_shape"]), int(d["class_count"]))


class ParameterSet(dict):
    """``{layer_index: {name: array}}`` for the parametric layers of a spec."""

    def copy(self) -> "ParameterSet":
        return ParameterSet({i: {k: v.copy() for k, v in t.items()} for i, t in self.items()})

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet({i: {k: v.astype(dtype) for k, v in t.items()} for i, t in self.items()})

    def keys_match(self, spec: NetworkSpec) -> bool:
        expected = spec.param_shapes()
        if set(self) != set(expected):
            return False
        return all(
            set(self[i]) == set(expected[i]) and all(self[i][k].shape == s for k, s in expected[i].items())
            for i in expected
        )

    def ordered(self) -> Iterator:
        """(layer, name, array) in canonical serialization order."""
        for i in sorted(self):
            for name in sorted(self[i]):
                yield i, name, self[i][name]

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet({i: {k: np.zeros_like(v) for k, v in t.items()} for i, t in self.items()})


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> ParameterSet:
    """He-normal weights, zero biases."""
    params = ParameterSet()
    for i, shapes in spec.param_shapes().items():
        tensors = {}
        for name, shape in shapes.items():
            if name.startswith("b"):
                tensors[name] = np.zeros(shape, dtype=DTYPE)
            else:
                fan_in = int(np.prod(shape[1:]))
                std = np.sqrt(2.0 / fan_in)
                if spec.layers[i].kind == "residual" and name == "w2":
                    std *= 0.5  # keeps early residual outputs near the skip path
                tensors[name] = (rng.standard_normal(shape) * std).astype(DTYPE)
        params[i] = tensors
    return params


@dataclass
class DropSample:
    """One sampled drop configuration: unit masks per site and keep bits per block."""

    unit_masks: dict
    block_keep: dict
    ratio: float

    def matches(self, spec: NetworkSpec) -> bool:
        sites = spec.dropout_sites()
        if set(self.unit_masks) != set(sites) or set(self.block_keep) != set(spec.droppable_blocks()):
            return False
        return all(np.shape(self.unit_masks[k]) == s for k, s in sites.items())


def no_drop(spec: NetworkSpec) -> DropSample:
    return DropSample(
        {k: np.ones(s, dtype=DTYPE) for k, s in spec.dropout_sites().items()},
        {i: True for i in spec.droppable_blocks()},
        0.0,
    )


def sample_drop(spec: NetworkSpec, ratio: float, rng: np.random.Generator) -> DropSample:
    """Drop each unit and each droppable residual block independently with prob. ``ratio``."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"drop ratio must lie in [0, 1], got {ratio}")
    if ratio == 0.0:
        return no_drop(spec)
    masks = {k: (rng.random(s) >= ratio).astype(DTYPE) for k, s in spec.dropout_sites().items()}
    keep = {i: bool(rng.random() >= ratio) for i in spec.droppable_blocks()}
    return DropSample(masks, keep, float(ratio))


# ---------------------------------------------------------------------------
# Forward-pass audit (test instrumentation)

_audit: Optional[collections.Counter] = None


@contextlib.contextmanager
def forward_audit():
    """Count evaluated samples per parameter set (keyed by ``id(params)``)."""
    global _audit
    previous, _audit = _audit, collections.Counter()
    try:
        yield _audit
    finally:
        _audit = previous


# ---------------------------------------------------------------------------
# Primitive kernels


def _conv_forward(x, w, b, padding):
    k = w.shape[-1]
    pad = k // 2 if padding == "same" else 0
    if pad:
        xp = np.zeros(x.shape[:2] + (x.shape[2] + 2 * pad, x.shape[3] + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:-pad, pad:-pad] = x
        x = xp
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    bsz, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, c * k * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(bsz, ho, wo, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, w, padding, need_input=True):
    bsz, f, ho, wo = dout.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    if not need_input:
        return None, dw, db
    k = w.shape[-1]
    pad = k // 2 if padding == "same" else 0
    c = w.shape[1]
    dcols = (dmat @ w.reshape(f, -1)).reshape(bsz, ho, wo, c, k, k)
    dx = np.zeros((bsz, c, x_shape[2] + 2 * pad, x_shape[3] + 2 * pad), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx, dw, db


def _pool_forward(x, record):
    bsz, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if not record:
        return x[:, :, :2 * h2, :2 * w2].reshape(bsz, c, h2, 2, w2, 2).max(axis=(3, 5)), None
    blocks = x[:, :, :2 * h2, :2 * w2].reshape(bsz, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(bsz, c, h2, w2, 4)
    arg = blocks.argmax(axis=-1)  # ties resolve to the first window element
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, x_shape):
    bsz, c, h, w = x_shape
    h2, w2 = dout.shape[2:]
    grad = np.zeros((bsz, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(grad, arg[..., None], dout[..., None], axis=-1)
    grad = grad.reshape(bsz, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, 2 * h2, 2 * w2)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, :2 * h2, :2 * w2] = grad
    return dx


# ---------------------------------------------------------------------------
# Whole-network passes


def _param_dtype(params):
    return next(params.ordered())[2].dtype


def _check_input(spec, params, x):
    x = np.asarray(x)
    single = x.shape == spec.input_shape
    if not single and x.shape[1:] != spec.input_shape:
        raise StructureError(f"input shape {x.shape} does not match {spec.input_shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("input contains non-finite values")
    x = x.astype(_param_dtype(params), copy=False)
    return (x[None] if single else x), single


def _check_drop(spec, drop):
    if drop is None:
        return {}, {}
    if not drop.matches(spec):
        raise StructureError("drop sample does not match the network structure")
    return drop.unit_masks, drop.block_keep


def _run(spec, params, x, masks, keep, record):
    if _audit is not None:
        _audit[id(params)] += len(x)
    caches = []
    h = x
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        cache = None
        if kind in ("dense", "head"):
            p = params[i]
            cache = h
            h = h @ p["w"].T + p["b"]
        elif kind == "conv":
            p = params[i]
            out, cols = _conv_forward(h, p["w"], p["b"], layer.padding)
            cache = (cols, h.shape)
            h = out
        elif kind == "relu":
            cache = h > 0
            h = h * cache
        elif kind == "maxpool":
            out, arg = _pool_forward(h, record)
            cache = (arg, h.shape)
            h = out
        elif kind == "dropout":
            m = masks.get(str(i))
            cache = m
            if m is not None:
                h = h * m
        elif kind == "flatten":
            cache = h.shape
            h = h.reshape(len(h), -1)
        elif kind == "residual":
            if not keep.get(i, True):
                cache = None
            else:
                p = params[i]
                m1, m2 = masks.get(f"{i}.1"), masks.get(f"{i}.2")
                z1, cols1 = _conv_forward(h, p["w1"], p["b1"], "same")
                a1 = np.maximum(z1, 0)
                if m1 is not None:
                    a1 = a1 * m1
                z2, cols2 = _conv_forward(a1, p["w2"], p["b2"], "same")
                a2 = np.maximum(z2, 0)
                if m2 is not None:
                    a2 = a2 * m2
                cache = (cols1, z1 > 0, m1, a1.shape, cols2, z2 > 0, m2, h.shape)
                h = h + a2
        if record:
            caches.append(cache)
    return h, caches


def _backward(spec, params, caches, dout, want_params, want_input=True):
    grads = ParameterSet() if want_params else None
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, cache = spec.layers[i], caches[i]
        kind = layer.kind
        need_input = i > 0 or want_input
        if kind in ("dense", "head"):
            p = params[i]
            if want_params:
                grads[i] = {"w": dout.T @ cache, "b": dout.sum(axis=0)}
            dout = dout @ p["w"]
        elif kind == "conv":
            cols, x_shape = cache
            dx, dw, db = _conv_backward(dout, cols, x_shape, params[i]["w"], layer.padding, need_input)
            if want_params:
                grads[i] = {"w": dw, "b": db}
            dout = dx
        elif kind == "relu":
            dout = dout * cache
        elif kind == "maxpool":
            arg, x_shape = cache
            dout = _pool_backward(dout, arg, x_shape)
        elif kind == "dropout":
            if cache is not None:
                dout = dout * cache
        elif kind == "flatten":
            dout = dout.reshape(cache)
        elif kind == "residual":
            p = params[i]
            if cache is None:
                if want_params:
                    grads[i] = {k: np.zeros_like(v) for k, v in p.items()}
                continue
            cols1, on1, m1, a1_shape, cols2, on2, m2, x_shape = cache
            d2 = dout * on2
            if m2 is not None:
                d2 = d2 * m2
            da1, dw2, db2 = _conv_backward(d2, cols2, a1_shape, p["w2"], "same")
            d1 = da1 * on1
            if m1 is not None:
                d1 = d1 * m1
            dx, dw1, db1 = _conv_backward(d1, cols1, x_shape, p["w1"], "same", need_input)
            if want_params:
                grads[i] = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
            if need_input:
                dout = dout + dx
    return dout, grads


def forward(spec: NetworkSpec, params: ParameterSet, x, drop: Optional[DropSample] = None) -> np.ndarray:
    """Logits for one input ``(k,)`` or a batch ``(B, k)``."""
    xb, single = _check_input(spec, params, x)
    masks, keep = _check_drop(spec, drop)
    logits, _ = _run(spec, params, xb, masks, keep, record=False)
    return logits[0] if single else logits


def predict(spec: NetworkSpec, params: ParameterSet, x, batch_size: int = 512) -> np.ndarray:
    """Argmax class per input of a batch, evaluated in chunks."""
    x = np.asarray(x)
    out = [np.argmax(forward(spec, params, x[s:s + batch_size]), axis=1) for s in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def loss_and_input_gradient(spec, params, x, label, loss_kind="hinge", drop=None, target=None):
    """Per-sample loss and its gradient w.r.t. the input, for one input or a batch."""
    xb, single = _check_input(spec, params, x)
    masks, keep = _check_drop(spec, drop)
    logits, caches = _run(spec, params, xb, masks, keep, record=True)
    value, dlogits = losses.loss_and_grad(loss_kind, logits, label, target)
    dx, _ = _backward(spec, params, caches, dlogits.astype(logits.dtype), want_params=False)
    if single:
        return value[0], dx[0]
    return value, dx


def input_gradient(spec, params, x, label, loss_kind="hinge", drop=None, target=None) -> np.ndarray:
    """Exact d loss / d input under a fixed drop sample (none if ``drop`` is None)."""
    return loss_and_input_gradient(spec, params, x, label, loss_kind, drop, target)[1]


def loss_and_param_gradient(spec, params, x, label, loss_kind="ce", masks=None):
    """Mean loss over the batch and its gradient w.r.t. every parameter tensor.

    ``masks`` may map site keys to per-sample arrays of shape ``(B, *site)``
    (used for train-time drop-out).
    """
    xb, single = _check_input(spec, params, x)
    logits, caches = _run(spec, params, xb, masks or {}, {}, record=True)
    value, dlogits = losses.loss_and_grad(loss_kind, logits, label)
    dlogits = np.atleast_2d(dlogits).astype(logits.dtype) / len(xb)
    _, grads = _backward(spec, params, caches, dlogits, want_params=True, want_input=False)
    return float(np.mean(value)), grads


def param_gradient(spec, params, x, label, loss_kind="ce") -> ParameterSet:
    return loss_and_param_gradient(spec, params, x, label, loss_kind)[1]


def sgd_update(params: ParameterSet, gradients: ParameterSet, learning_rate: float) -> ParameterSet:
    """``params - learning_rate * gradients`` as a new ParameterSet."""
    if set(params) != set(gradients) or any(set(params[i]) != set(gradients[i]) for i in params):
        raise StructureError("gradients do not match the parameter structure")
    out = ParameterSet()
    for i, tensors in params.items():
        out[i] = {}
        for name, value in tensors.items():
            g = gradients[i][name]
            if g.shape != value.shape:
                raise StructureError(f"gradient shape {g.shape} != parameter shape {value.shape} at {i}.{name}")
            out[i][name] = (value - np.asarray(learning_rate, dtype=value.dtype) * g).astype(value.dtype)
    return out

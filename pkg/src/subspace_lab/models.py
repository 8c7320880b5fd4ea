"""Desk-scale model zoo, SGD training, evaluation and the on-disk weight format."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import micronet as mn
from .data import Dataset

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
ARCHITECTURES = ("mlp-small", "mlp-wide", "conv-small", "conv-deep", "resnet-tiny")


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class ModelFormatError(ValueError):
    pass


class ChecksumError(ModelFormatError):
    pass


def _conv_stage(filters):
    return [mn.Conv2D(filters), mn.ReLU(), mn.Dropout(), mn.MaxPool2()]


def _dense_stage(units):
    return [mn.Dense(units), mn.ReLU(), mn.Dropout()]


def build_architecture(arch_id: str, input_shape=(1, 28, 28), class_count: int = 10) -> mn.NetworkSpec:
    """Return the NetworkSpec of a zoo architecture.

    Every hidden conv/dense nonlinearity is followed by a drop-out site;
    ``resnet-tiny`` additionally carries two droppable residual blocks.
    """
    if arch_id == "mlp-small":
        layers = [mn.Flatten(), *_dense_stage(64), *_dense_stage(32)]
    elif arch_id == "mlp-wide":
        layers = [mn.Flatten(), *_dense_stage(256), *_dense_stage(128)]
    elif arch_id == "conv-small":
        layers = [*_conv_stage(8), mn.Flatten(), *_dense_stage(32)]
    elif arch_id == "conv-deep":
        layers = [*_conv_stage(8), *_conv_stage(16), *_conv_stage(16), mn.Flatten(), *_dense_stage(64)]
    elif arch_id == "resnet-tiny":
        layers = [*_conv_stage(8), mn.Residual(), mn.Residual(), mn.MaxPool2(), mn.Flatten(), *_dense_stage(32)]
    else:
        raise ValueError(f"unknown architecture {arch_id!r}; choose from {ARCHITECTURES}")
    return mn.NetworkSpec(tuple(layers + [mn.Head()]), tuple(input_shape), class_count)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 0.05
    decay_every: int = 4
    decay_factor: float = 0.5
    seed: int = 0
    dropout: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0, batch size and learning rate positive")
        if self.decay_every <= 0 or not 0 < self.decay_factor <= 1:
            raise ValueError("decay_every must be positive and decay_factor in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ValueError("train-time dropout must lie in [0, 1)")


def train(spec: mn.NetworkSpec, dataset: Dataset, config: TrainConfig = TrainConfig(),
          rng: Optional[np.random.Generator] = None, history: Optional[list] = None) -> mn.ParameterSet:
    """Minibatch SGD with step decay on cross-entropy.

    Weights are initialised from ``config.seed``; ``rng`` (defaulting to a
    generator seeded by ``config.seed + 1``) drives shuffling and train-time
    drop-out. Mean epoch losses are appended to ``history`` when given.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.input_shape != spec.input_shape:
        raise mn.StructureError(f"dataset shape {dataset.input_shape} != network input {spec.input_shape}")
    params = mn.init_params(spec, np.random.default_rng(config.seed))
    rng = rng if rng is not None else np.random.default_rng(config.seed + 1)
    sites = spec.dropout_sites()
    lr = config.learning_rate
    for epoch in range(config.epochs):
        if epoch and epoch % config.decay_every == 0:
            lr *= config.decay_factor
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            masks = None
            if config.dropout > 0:
                scale = np.float32(1.0 / (1.0 - config.dropout))
                masks = {k: (rng.random((len(idx),) + s) >= config.dropout).astype(np.float32) * scale
                         for k, s in sites.items()}
            loss, grads = mn.loss_and_param_gradient(spec, params, dataset.images[idx], dataset.labels[idx],
                                                     "ce", masks)
            if not np.isfinite(loss):
                raise TrainingError(epoch, "non-finite training loss")
            params = mn.sgd_update(params, grads, lr)
            total += loss * len(idx)
        mean = total / len(dataset)
        log.debug("epoch %d loss %.4f lr %.4g", epoch, mean, lr)
        if history is not None:
            history.append(mean)
    return params


def evaluate(spec: mn.NetworkSpec, params: mn.ParameterSet, dataset: Dataset):
    """Return ``(accuracy, indices_of_correct_samples)``."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = mn.predict(spec, params, dataset.images)
    correct = np.flatnonzero(pred == dataset.labels)
    return len(correct) / len(dataset), correct


# ---------------------------------------------------------------------------
# Serialization


@dataclass
class ModelManifest:
    architecture: str
    input_shape: list
    class_count: int
    training_split: str
    test_accuracy: float
    checksum: str = ""
    format_version: int = FORMAT_VERSION
    spec: dict = field(default_factory=dict)
    tensors: list = field(default_factory=list)


def _blob(params: mn.ParameterSet) -> bytes:
    return b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for _, _, v in params.ordered())


def _paths(path):
    path = Path(path)
    return path.with_name(path.name + ".manifest.json"), path.with_name(path.name + ".weights.bin")


def save_model(spec: mn.NetworkSpec, params: mn.ParameterSet, manifest: ModelManifest, path) -> ModelManifest:
    """Write ``<path>.manifest.json`` and ``<path>.weights.bin``; returns the stored manifest."""
    if not params.keys_match(spec):
        raise mn.StructureError("parameters do not match the network spec")
    blob = _blob(params)
    manifest = ModelManifest(**{**asdict(manifest),
                                "checksum": "sha256:" + hashlib.sha256(blob).hexdigest(),
                                "format_version": FORMAT_VERSION,
                                "input_shape": list(spec.input_shape),
                                "class_count": spec.class_count,
                                "spec": spec.to_dict(),
                                "tensors": [[i, name, list(v.shape)] for i, name, v in params.ordered()]})
    mpath, wpath = _paths(path)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    wpath.write_bytes(blob)
    return manifest


def load_model(path):
    """Return ``(spec, params, manifest)``; verifies version, size and checksum."""
    mpath, wpath = _paths(path)
    try:
        raw = json.loads(mpath.read_text())
    except ValueError as exc:
        raise ModelFormatError(f"{mpath}: unreadable manifest ({exc})") from exc
    if raw.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{mpath}: unknown format version {raw.get('format_version')!r}")
    manifest = ModelManifest(**raw)
    spec = mn.NetworkSpec.from_dict(manifest.spec)
    blob = wpath.read_bytes()
    expected = sum(int(np.prod(shape)) for _, _, shape in manifest.tensors) * 4
    if len(blob) != expected:
        raise ModelFormatError(f"{wpath}: blob has {len(blob)} bytes, expected {expected} (truncated?)")
    digest = "sha256:" + hashlib.sha256(blob).hexdigest()
    if digest != manifest.checksum:
        raise ChecksumError(f"{wpath}: checksum mismatch")
    params = mn.ParameterSet()
    offset = 0
    for i, name, shape in manifest.tensors:
        size = int(np.prod(shape))
        params.setdefault(int(i), {})[name] = np.frombuffer(blob, "<f4", size, offset).astype(np.float32).reshape(shape)
        offset += size * 4
    if not params.keys_match(spec):
        raise ModelFormatError(f"{mpath}: tensors do not match the stored spec")
    return spec, params, manifest

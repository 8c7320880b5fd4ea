"""The black-box boundary: a metered score oracle for the victim and a
prior-gradient source for each reference model."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import losses
from . import micronet as mn

UNLIMITED = math.inf
SCORE_KINDS = ("logits", "probabilities")


class BudgetExhausted(RuntimeError):
    def __init__(self, query_count: int):
        super().__init__(f"query budget exhausted after {query_count} queries")
        self.query_count = query_count


class VictimOracle:
    """Score-only access to a victim network with a hard query budget.

    Only ``query``/``query_batch`` reveal anything about the model, and only
    its output scores. Each evaluated input costs exactly one query.
    """

    def __init__(self, spec: mn.NetworkSpec, params: mn.ParameterSet, budget: Optional[int] = None,
                 score_kind: str = "logits"):
        if score_kind not in SCORE_KINDS:
            raise ValueError(f"score_kind must be one of {SCORE_KINDS}")
        if budget is not None and budget <= 0:
            raise ValueError("budget must be positive (or None for unlimited)")
        self.__spec = spec
        self.__params = params
        self._count = 0
        self.budget = UNLIMITED if budget is None else int(budget)
        self.score_kind = score_kind
        self.input_shape = spec.input_shape
        self.class_count = spec.class_count

    @property
    def query_count(self) -> int:
        return self._count

    def remaining_budget(self):
        return self.budget - self._count

    def _check(self, x):
        x = np.asarray(x)
        if x.min() < 0 or x.max() > 1:
            raise ValueError("queries must lie in [0, 1]")
        return x

    def _scores(self, logits):
        return losses.softmax(logits) if self.score_kind == "probabilities" else logits

    def query(self, x) -> np.ndarray:
        x = self._check(x)
        if x.shape != self.input_shape:
            raise mn.StructureError(f"query shape {x.shape} != {self.input_shape}")
        if self._count >= self.budget:
            raise BudgetExhausted(self._count)
        scores = self._scores(mn.forward(self.__spec, self.__params, x))
        self._count += 1
        return scores

    def query_batch(self, xs) -> np.ndarray:
        """Score several inputs in one pass; costs ``len(xs)`` queries, all or nothing."""
        xs = self._check(xs)
        if xs.shape[1:] != self.input_shape:
            raise mn.StructureError(f"query shape {xs.shape[1:]} != {self.input_shape}")
        if self._count + len(xs) > self.budget:
            raise BudgetExhausted(self._count)
        scores = self._scores(mn.forward(self.__spec, self.__params, xs))
        self._count += len(xs)
        return scores


def query(victim: VictimOracle, x) -> np.ndarray:
    return victim.query(x)


def remaining_budget(victim: VictimOracle):
    return victim.remaining_budget()


@dataclass(frozen=True)
class ReferenceOracle:
    """White-box reference model that supplies prior gradients."""

    spec: mn.NetworkSpec
    params: mn.ParameterSet
    model_index: int = 0
    name: str = ""

    @property
    def droppable(self) -> bool:
        return bool(self.spec.droppable_blocks())

    def prior_gradient(self, x, y, p: float, rng: np.random.Generator, loss_kind: str = "hinge",
                       target: Optional[int] = None) -> np.ndarray:
        """Loss gradient at ``x`` under a freshly sampled drop configuration of ratio ``p``.

        The returned vector is not normalized.
        """
        drop = mn.sample_drop(self.spec, p, rng)
        return mn.input_gradient(self.spec, self.params, x, y, loss_kind, drop, target)


def prior_gradient(ref: ReferenceOracle, x, y, p, rng, loss_kind="hinge", target=None) -> np.ndarray:
    return ref.prior_gradient(x, y, p, rng, loss_kind, target)

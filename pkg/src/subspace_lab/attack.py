"""Subspace attack: bandit gradient estimation along reference-model gradients.

Each iteration draws one search direction ``u`` (a prior gradient of a
randomly chosen reference model, evaluated at the current candidate under a
fresh drop-out/drop-layer sample), probes the victim twice along the
normalized estimates ``g +/- tau*u``, updates ``g`` by the finite-difference
step and takes a signed PGD step inside the L-infinity ball.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import losses
from .oracle import SCORE_KINDS

UNTARGETED_BUDGET = 10_000
TARGETED_BUDGET = 50_000
MODES = ("coordinate", "full-subspace")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    eta: float = 1 / 255
    eta_g: float = 100.0
    delta: float = 0.1
    tau: float = 0.1
    budget: Optional[int] = None
    p0: float = 0.05
    p_step: float = 0.01
    p_max: float = 0.5
    target: Optional[int] = None
    mode: str = "coordinate"
    score_kind: str = "logits"
    loss_kind: str = "hinge"

    def __post_init__(self):
        if self.budget is None:
            object.__setattr__(self, "budget", TARGETED_BUDGET if self.target is not None else UNTARGETED_BUDGET)
        if min(self.epsilon, self.eta, self.eta_g, self.delta, self.tau) <= 0:
            raise ValueError("epsilon, eta, eta_g, delta and tau must be positive")
        if not 0 <= self.p0 <= self.p_max <= 1 or self.p_step < 0:
            raise ValueError("drop schedule needs 0 <= p0 <= p_max <= 1 and p_step >= 0")
        if self.budget < 2:
            raise ValueError("budget must allow at least one pair of queries")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.score_kind not in SCORE_KINDS:
            raise ValueError(f"score_kind must be one of {SCORE_KINDS}")

    def replace(self, **changes) -> "AttackConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class AttackState:
    x: np.ndarray
    x_adv: np.ndarray
    g: np.ndarray
    p: float = 0.0
    t: int = 0
    queries_used: int = 0


@dataclass
class AttackResult:
    success: bool
    queries_used: int
    iterations: int
    x_adv: np.ndarray
    scores: Optional[np.ndarray] = None
    failure_reason: Optional[str] = None  # "budget" | "stalled" | None


# ---------------------------------------------------------------------------
# Losses on victim scores


def cw_hinge_loss(scores, y, target=None):
    """Logit-difference loss to maximize (``max_{i!=y} s_i - s_y`` untargeted)."""
    return losses.hinge_loss(scores, y, target)


def victim_loss(scores, y, cfg: AttackConfig):
    # log-probabilities differ from logits by a per-input constant, so the hinge is unchanged
    if cfg.score_kind == "probabilities":
        scores = np.log(np.maximum(scores, np.finfo(np.float64).tiny))
    return cw_hinge_loss(scores, y, cfg.target)


def is_success(scores, y, target=None) -> bool:
    pred = int(np.argmax(scores))  # ties go to the lowest index
    return pred == target if target is not None else pred != y


# ---------------------------------------------------------------------------
# Loop pieces


def clip_to_ball(v, x, epsilon):
    return np.clip(np.clip(v, x - epsilon, x + epsilon), 0.0, 1.0)


def bandit_step(state: AttackState, victim, u, cfg: AttackConfig, y):
    """Two-query finite-difference update of ``g`` along ``u``.

    Returns ``(new_state, probes)`` where ``probes`` lists the ``(point,
    scores)`` pairs that were queried (``+`` probe first). Probe points are
    clipped into the epsilon-ball and the valid pixel range before querying.
    A probe whose direction ``g +/- tau*u`` is exactly zero is skipped and
    its loss taken equal to the other probe's.
    """
    u = np.asarray(u, dtype=np.float64)
    points, signs = [], []
    for sign in (1.0, -1.0):
        d = state.g + sign * cfg.tau * u
        norm = np.linalg.norm(d)
        if norm > 0:
            points.append(clip_to_ball(state.x_adv + cfg.delta * d / norm, state.x, cfg.epsilon))
            signs.append(sign)
    if len(points) == 2:
        scores = list(victim.query_batch(np.stack(points)))
    else:
        scores = [victim.query(pt) for pt in points]
    values = {s: float(victim_loss(sc, y, cfg)) for s, sc in zip(signs, scores)}
    if len(values) == 2:
        diff = values[1.0] - values[-1.0]
    else:
        diff = 0.0
    step = diff / (cfg.tau * cfg.delta) * u
    new = dataclasses.replace(state, g=state.g + cfg.eta_g * step, queries_used=state.queries_used + len(points))
    return new, list(zip(points, scores))


def pgd_project(x, state: AttackState, cfg: AttackConfig) -> AttackState:
    """Signed step on ``x_adv`` followed by clipping to the epsilon-ball and ``[0, 1]``."""
    x_adv = clip_to_ball(state.x_adv + cfg.eta * np.sign(state.g), x, cfg.epsilon)
    return dataclasses.replace(state, x_adv=x_adv)


def next_drop_ratio(p: float, cfg: AttackConfig) -> float:
    return min(p + cfg.p_step, cfg.p_max)


def drop_ratio_at(t: int, cfg: AttackConfig) -> float:
    return min(cfg.p0 + t * cfg.p_step, cfg.p_max)


def choose_reference(m: int, rng: np.random.Generator) -> int:
    return int(rng.integers(m))


def full_subspace_direction(refs, x_adv, y, p, loss_kind, target, rng) -> np.ndarray:
    """Gaussian combination of fresh prior gradients from every reference."""
    if not refs:
        raise ValueError("at least one reference model is required")
    grads = [ref.prior_gradient(x_adv, y, p, rng, loss_kind, target).astype(np.float64) for ref in refs]
    alpha = rng.standard_normal(len(grads))
    return sum(a * g for a, g in zip(alpha, grads))


def run_bandit(x, y, victim, cfg: AttackConfig, rng: np.random.Generator,
               direction: Callable[[AttackState, np.random.Generator], np.ndarray],
               schedule: bool = True, trace: Optional[list] = None) -> AttackResult:
    """The shared bandit/PGD loop; ``direction`` supplies ``u`` each iteration.

    Stops at the first successful probe or once fewer than two queries of
    the budget remain. With ``schedule`` off the drop ratio stays at 0.
    """
    x = np.asarray(x, dtype=np.float64)
    budget = min(cfg.budget, victim.remaining_budget())
    max_iterations = int(budget // 2)
    p = drop_ratio_at(0, cfg) if schedule else 0.0
    state = AttackState(x=x, x_adv=x.copy(), g=np.zeros_like(x), p=p)
    last_scores = None
    while True:
        if budget - state.queries_used < 2:
            return AttackResult(False, state.queries_used, state.t, state.x_adv, last_scores, "budget")
        if state.t >= max_iterations:
            return AttackResult(False, state.queries_used, state.t, state.x_adv, last_scores, "stalled")
        u = direction(state, rng)
        state, probes = bandit_step(state, victim, u, cfg, y)
        if trace is not None:
            trace.append({"t": state.t, "p": state.p, "u": np.asarray(u, dtype=np.float64), "g": state.g})
        for point, scores in probes:
            last_scores = scores
            if is_success(scores, y, cfg.target):
                return AttackResult(True, state.queries_used, state.t + 1, point, scores)
        state = pgd_project(x, state, cfg)
        t = state.t + 1
        state = dataclasses.replace(state, t=t, p=drop_ratio_at(t, cfg) if schedule else 0.0)


def subspace_attack(x, y, victim, refs, cfg: AttackConfig, rng: np.random.Generator,
                    trace: Optional[list] = None) -> AttackResult:
    """Untargeted or targeted L-infinity attack guided by reference-model gradients.

    In ``coordinate`` mode a single reference is drawn uniformly at random per
    iteration; ``full-subspace`` mode combines every reference's prior
    gradient with Gaussian coefficients instead.
    """
    refs = list(refs)
    if not refs:
        raise ValueError("subspace_attack needs at least one reference model")

    def direction(state, rng):
        if cfg.mode == "full-subspace":
            return full_subspace_direction(refs, state.x_adv, y, state.p, cfg.loss_kind, cfg.target, rng)
        i = choose_reference(len(refs), rng)
        if trace is not None:
            trace_ref.append(i)
        return refs[i].prior_gradient(state.x_adv, y, state.p, rng, cfg.loss_kind, cfg.target)

    trace_ref: list = []
    result = run_bandit(x, y, victim, cfg, rng, direction, schedule=True, trace=trace)
    if trace is not None:
        for entry, i in zip(trace, trace_ref):
            entry["ref"] = i
    return result


def check_result(result: AttackResult, x, epsilon: float, budget, slack: float = 1e-6) -> list:
    """Constraint violations of a finished run (empty when the result is valid)."""
    problems = []
    dev = np.max(np.abs(np.asarray(result.x_adv, dtype=np.float64) - np.asarray(x, dtype=np.float64)))
    if dev > epsilon + slack:
        problems.append(f"L-inf distance {dev:.3g} exceeds epsilon {epsilon:.3g}")
    if np.min(result.x_adv) < -slack or np.max(result.x_adv) > 1 + slack:
        problems.append("x_adv leaves [0, 1]")
    if result.queries_used > budget:
        problems.append(f"{result.queries_used} queries exceed budget {budget}")
    return problems

"""Comparison attacks: fixed random subspaces, the Gaussian bandit, NES and
pure transfer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attack import AttackConfig, AttackResult, clip_to_ball, is_success, pgd_project, run_bandit, victim_loss
from .attack import AttackState


@dataclass(frozen=True)
class OrthonormalBasis:
    vectors: np.ndarray  # (m, n), one unit vector per row

    @property
    def dimension(self) -> int:
        return len(self.vectors)


def gram_schmidt(vectors, tol: float = 1e-8) -> np.ndarray:
    """Orthonormalize rows in order, dropping rows that are (nearly) dependent.

    Uses two passes of classical Gram-Schmidt per vector so orthogonality
    holds to round-off even for long sequences.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    basis = np.empty_like(vectors)
    k = 0
    for v in vectors:
        scale = np.linalg.norm(v)
        if scale == 0:
            continue
        w = v / scale
        for _ in range(2):
            w = w - basis[:k].T @ (basis[:k] @ w)
        norm = np.linalg.norm(w)
        if norm > tol:
            basis[k] = w / norm
            k += 1
    return basis[:k]


def random_orthonormal_basis(n: int, m: int, rng: np.random.Generator, tol: float = 1e-6) -> OrthonormalBasis:
    """``m`` orthonormal vectors in R^n obtained by orthonormalizing Gaussian draws in order.

    A Householder QR with the signs fixed so that ``diag(R) > 0`` returns
    exactly the Gram-Schmidt sequence of the columns, at LAPACK speed.
    Draws whose new component is below ``tol`` (relative) are redrawn.
    """
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    while True:
        draws = rng.standard_normal((n, m))
        q, r = np.linalg.qr(draws)
        diag = np.diag(r)
        if np.all(np.abs(diag) > tol * np.linalg.norm(draws, axis=0)):
            break
    return OrthonormalBasis(np.ascontiguousarray((q * np.sign(diag)).T))


def gaussian_combination(basis: OrthonormalBasis, rng: np.random.Generator) -> np.ndarray:
    """``sum_i alpha_i u_i`` with ``alpha_i ~ N(0, 1)``."""
    return rng.standard_normal(basis.dimension) @ basis.vectors


def random_subspace_attack(x, y, victim, basis: OrthonormalBasis, cfg: AttackConfig,
                           rng: np.random.Generator) -> AttackResult:
    """Bandit attack whose directions stay in a fixed random subspace."""
    shape = np.shape(x)
    return run_bandit(x, y, victim, cfg, rng, lambda state, rng: gaussian_combination(basis, rng).reshape(shape),
                      schedule=False)


def bandit_gaussian_attack(x, y, victim, cfg: AttackConfig, rng: np.random.Generator) -> AttackResult:
    """Bandit attack with fresh ``N(0, I/n)`` directions and no priors."""
    shape = np.shape(x)
    n = int(np.prod(shape))
    return run_bandit(x, y, victim, cfg, rng, lambda state, rng: rng.standard_normal(shape) / np.sqrt(n),
                      schedule=False)


@dataclass(frozen=True)
class NesConfig:
    samples: int = 25
    sigma: float = 0.01
    antithetic: bool = True
    attack: AttackConfig = AttackConfig()

    def __post_init__(self):
        if self.samples < 1 or self.sigma <= 0:
            raise ValueError("NES needs samples >= 1 and sigma > 0")
        if not self.antithetic:
            raise ValueError("only antithetic sampling is supported")


def nes_gradient(victim, x, y, nes_cfg: NesConfig, rng: np.random.Generator, lower=0.0, upper=1.0,
                 probes: Optional[list] = None) -> np.ndarray:
    """Antithetic NES estimate of the loss gradient; costs ``2 * samples`` queries.

    Probe points ``x +/- sigma * v`` are clipped into ``[lower, upper]``.
    Queried ``(point, scores)`` pairs are appended to ``probes`` if given.
    """
    cfg = nes_cfg.attack
    x = np.asarray(x, dtype=np.float64)
    v = rng.standard_normal((nes_cfg.samples,) + x.shape)
    points = np.clip(np.concatenate([x + nes_cfg.sigma * v, x - nes_cfg.sigma * v]), lower, upper)
    scores = victim.query_batch(points)
    values = np.asarray(victim_loss(scores, y, cfg), dtype=np.float64)
    diff = values[:nes_cfg.samples] - values[nes_cfg.samples:]
    if probes is not None:
        probes.extend(zip(points, scores))
    return np.tensordot(diff, v, axes=1) / (2 * nes_cfg.samples * nes_cfg.sigma)


def nes_attack(x, y, victim, nes_cfg: NesConfig, rng: np.random.Generator) -> AttackResult:
    """PGD driven by NES gradient estimates; success is read off the probe scores."""
    cfg = nes_cfg.attack
    x = np.asarray(x, dtype=np.float64)
    budget = min(cfg.budget, victim.remaining_budget())
    per_step = 2 * nes_cfg.samples
    lower, upper = np.maximum(x - cfg.epsilon, 0.0), np.minimum(x + cfg.epsilon, 1.0)
    state = AttackState(x=x, x_adv=x.copy(), g=np.zeros_like(x))
    used, t, last = 0, 0, None
    while budget - used >= per_step:
        probes = []
        state.g = nes_gradient(victim, state.x_adv, y, nes_cfg, rng, lower, upper, probes)
        used += per_step
        t += 1
        for point, scores in probes:
            last = scores
            if is_success(scores, y, cfg.target):
                return AttackResult(True, used, t, point, scores)
        state = pgd_project(x, state, cfg)
    return AttackResult(False, used, t, state.x_adv, last, "budget")


def transfer_attack(x, y, refs, victim, cfg: AttackConfig, rng: Optional[np.random.Generator] = None,
                    steps: int = 50) -> AttackResult:
    """White-box PGD on the averaged reference hinge loss, then one victim query."""
    refs = list(refs)
    x = np.asarray(x, dtype=np.float64)
    x_adv = x.copy()
    for _ in range(steps):
        grad = sum(ref.prior_gradient(x_adv, y, 0.0, rng, cfg.loss_kind, cfg.target).astype(np.float64)
                   for ref in refs) / len(refs)
        x_adv = clip_to_ball(x_adv + cfg.eta * np.sign(grad), x, cfg.epsilon)
    if victim.remaining_budget() < 1:
        return AttackResult(False, 0, steps, x_adv, None, "budget")
    scores = victim.query(x_adv)
    ok = is_success(scores, y, cfg.target)
    return AttackResult(ok, 1, steps, x_adv, scores, None if ok else "budget")

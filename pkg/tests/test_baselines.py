import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import linear_net
from subspace_lab import baselines
from subspace_lab.attack import AttackConfig
from subspace_lab.baselines import NesConfig, OrthonormalBasis
from subspace_lab.oracle import ReferenceOracle, VictimOracle


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 60), frac=st.floats(0.01, 1.0), seed=st.integers(0, 2**32 - 1))
def test_basis_is_orthonormal(n, frac, seed):
    m = max(1, int(frac * n))
    b = baselines.random_orthonormal_basis(n, m, np.random.default_rng(seed))
    assert b.vectors.shape == (m, n) and b.dimension == m
    np.testing.assert_allclose(b.vectors @ b.vectors.T, np.eye(m), atol=1e-10)


def test_basis_matches_sequential_gram_schmidt():
    rng = np.random.default_rng(3)
    b = baselines.random_orthonormal_basis(40, 12, rng)
    draws = np.random.default_rng(3).standard_normal((40, 12)).T
    np.testing.assert_allclose(b.vectors, baselines.gram_schmidt(draws), atol=1e-10)


def test_basis_rejects_bad_sizes(rng):
    for n, m in ((5, 0), (5, 6)):
        with pytest.raises(ValueError):
            baselines.random_orthonormal_basis(n, m, rng)


def test_gram_schmidt_drops_dependent_rows():
    v = np.array([[1.0, 0, 0], [2.0, 0, 0], [1.0, 1.0, 0], [0, 0, 0]])
    b = baselines.gram_schmidt(v)
    np.testing.assert_allclose(b, [[1, 0, 0], [0, 1, 0]], atol=1e-12)


def test_gaussian_combination_second_moment():
    rng = np.random.default_rng(0)
    b = baselines.random_orthonormal_basis(30, 6, rng)
    norms = [np.sum(baselines.gaussian_combination(b, rng) ** 2) for _ in range(10_000)]
    assert abs(np.mean(norms) - 6) <= 0.2


def test_gaussian_combination_stays_in_span(rng):
    b = baselines.random_orthonormal_basis(20, 4, rng)
    u = baselines.gaussian_combination(b, rng)
    np.testing.assert_allclose(b.vectors.T @ (b.vectors @ u), u, atol=1e-12)


def test_nes_constant_loss_gives_zero_estimate(rng):
    victim = VictimOracle(*linear_net(np.zeros((2, 4))))
    est = baselines.nes_gradient(victim, np.full((1, 1, 4), 0.5), 0, NesConfig(), rng)
    assert not est.any() and victim.query_count == 50


def test_nes_linear_loss_direction():
    c = np.array([1.0, -2.0, 0.5, 3.0, -1.0, 0.0, 2.0, -0.5])
    victim = VictimOracle(*linear_net(np.stack([np.zeros_like(c), c]).astype(np.float64)))
    est = baselines.nes_gradient(victim, np.full((1, 1, 8), 0.5), 0, NesConfig(samples=100),
                                 np.random.default_rng(0))
    cos = est.ravel() @ c / (np.linalg.norm(est) * np.linalg.norm(c))
    assert cos > 0.9


def test_nes_query_accounting(rng):
    victim = VictimOracle(*linear_net(np.zeros((2, 3)), bias=[5.0, 0.0]))
    cfg = NesConfig(samples=10, attack=AttackConfig(budget=105))
    r = baselines.nes_attack(np.full((1, 1, 3), 0.5), 0, victim, cfg, rng)
    assert not r.success and r.queries_used == 100 == victim.query_count and r.iterations == 5


def test_nes_config_validation():
    with pytest.raises(ValueError):
        NesConfig(samples=0)
    with pytest.raises(ValueError):
        NesConfig(sigma=0)


def test_random_subspace_and_bandit_respect_constraints(tiny_conv, rng):
    spec, params = tiny_conv
    x = rng.random((1, 8, 8))
    cfg = AttackConfig(epsilon=0.1, budget=60)
    basis = baselines.random_orthonormal_basis(64, 8, rng)
    for r in (baselines.random_subspace_attack(x, 0, VictimOracle(spec, params, 60), basis, cfg, rng),
              baselines.bandit_gaussian_attack(x, 0, VictimOracle(spec, params, 60), cfg, rng)):
        assert r.queries_used <= 60
        assert np.abs(r.x_adv - x).max() <= 0.1 + 1e-12
        assert 0 <= r.x_adv.min() and r.x_adv.max() <= 1


def test_transfer_uses_one_query(tiny_conv, rng):
    spec, params = tiny_conv
    victim = VictimOracle(spec, params, 10)
    x = rng.random((1, 8, 8))
    r = baselines.transfer_attack(x, 0, [ReferenceOracle(spec, params)], victim, AttackConfig(epsilon=0.1), rng)
    assert r.queries_used == 1 == victim.query_count
    assert np.abs(r.x_adv - x).max() <= 0.1 + 1e-12


def test_transfer_with_self_reference_is_white_box():
    # victim == reference and a linear decision: PGD flips it within the ball
    spec, params = linear_net(np.array([[0.0, 0.0], [1.0, 1.0]]), bias=[0.9, 0.0])
    victim = VictimOracle(spec, params)
    r = baselines.transfer_attack(np.full((1, 1, 2), 0.4), 0, [ReferenceOracle(spec, params)], victim,
                                  AttackConfig(epsilon=0.1, eta=0.01))
    assert r.success


def test_transfer_without_budget(tiny_conv, rng):
    spec, params = tiny_conv
    victim = VictimOracle(spec, params, 1)
    victim.query(np.zeros((1, 8, 8)))
    r = baselines.transfer_attack(rng.random((1, 8, 8)), 0, [ReferenceOracle(spec, params)], victim,
                                  AttackConfig(), rng)
    assert not r.success and r.queries_used == 0


def test_basis_type():
    assert OrthonormalBasis(np.eye(3)).dimension == 3

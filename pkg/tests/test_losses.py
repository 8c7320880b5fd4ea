import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from subspace_lab import losses

scores_strategy = arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50))


def test_hinge_examples():
    assert losses.hinge_loss(np.zeros(4), 1) == 0
    assert losses.hinge_loss(np.array([2.0, 1.0, 0.0]), 0) == -1
    assert losses.hinge_loss(np.array([2.0, 1.0, 0.0]), 0, target=2) == -2


def test_hinge_needs_two_classes():
    with pytest.raises(ValueError):
        losses.hinge_loss(np.array([1.0]), 0)


@given(scores_strategy, st.data())
def test_hinge_matches_brute_force(scores, data):
    y = data.draw(st.integers(0, len(scores) - 1))
    brute = max(s for i, s in enumerate(scores) if i != y) - scores[y]
    assert losses.hinge_loss(scores, y) == pytest.approx(brute)
    c = data.draw(st.integers(0, len(scores) - 1))
    brute_t = scores[c] - max(s for i, s in enumerate(scores) if i != c)
    assert losses.hinge_loss(scores, y, target=c) == pytest.approx(brute_t)


@given(scores_strategy, st.data())
def test_hinge_grad_is_one_hot_difference(scores, data):
    y = data.draw(st.integers(0, len(scores) - 1))
    g = losses.hinge_grad(scores, y)
    assert g.sum() == 0 and g[y] == -1 and np.count_nonzero(g) == 2


def test_hinge_ties_pick_lowest_rival():
    g = losses.hinge_grad(np.array([1.0, 3.0, 3.0]), 0)
    assert list(g) == [-1, 1, 0]


def test_batched_matches_single():
    s = np.random.default_rng(0).normal(size=(5, 4))
    y = np.array([0, 1, 2, 3, 0])
    np.testing.assert_allclose(losses.hinge_loss(s, y), [losses.hinge_loss(r, l) for r, l in zip(s, y)])
    np.testing.assert_allclose(losses.cross_entropy(s, y), [losses.cross_entropy(r, l) for r, l in zip(s, y)])


def test_cross_entropy_and_grad():
    s = np.array([1.0, 2.0, 0.5])
    p = np.exp(s) / np.exp(s).sum()
    assert losses.cross_entropy(s, 1) == pytest.approx(-np.log(p[1]))
    expected = p.copy()
    expected[1] -= 1
    np.testing.assert_allclose(losses.cross_entropy_grad(s, 1), expected)


def test_softmax_stable_for_large_logits():
    p = losses.softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)


def test_loss_and_grad_rejects_unknown_kind():
    with pytest.raises(ValueError):
        losses.loss_and_grad("mse", np.zeros(3), 0)

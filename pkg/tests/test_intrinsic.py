import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progress_rl.errors import InvalidInputError
from progress_rl.intrinsic import (
    ActionDistribution,
    kl_from_uniform,
    self_certainty,
    self_certainty_batch,
    self_certainty_grad_logits,
)

from oracles import kl_uniform_to

# -0.5 * (ln 1.8 + ln 0.2), evaluated independently
SC_09_01 = 0.5108256237659907


def simplex(min_size=2, max_size=20):
    return st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=min_size,
                    max_size=max_size).map(lambda w: [x / sum(w) for x in w])


def test_uniform_is_zero():
    assert self_certainty([1 / 20] * 20) == pytest.approx(0.0, abs=1e-15)
    assert kl_from_uniform([0.25] * 4) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("p", [(0.9, 0.1), (0.1, 0.9)])
def test_two_action_value(p):
    assert self_certainty(p) == pytest.approx(SC_09_01, abs=1e-9)
    assert kl_from_uniform(p) == pytest.approx(SC_09_01, abs=1e-9)


def test_permutation_exact():
    assert self_certainty((0.9, 0.1)) == self_certainty((0.1, 0.9))


def test_three_action_identity():
    d = ActionDistribution([0.5, 0.25, 0.25])
    assert self_certainty(d) == pytest.approx(kl_from_uniform(d), abs=1e-12)


def test_zero_probability_is_floored():
    val = self_certainty([1.0, 0.0, 0.0])
    assert math.isfinite(val) and val > 0


@pytest.mark.parametrize("bad", [[], [1.0], [0.0, 0.0], [float("nan"), 1.0], ["x", 1]])
def test_malformed_rejected(bad):
    with pytest.raises(InvalidInputError):
        self_certainty(bad)


def test_distribution_invariants():
    d = ActionDistribution([0.0, 2.0, 2.0])
    assert math.isclose(sum(d.probabilities), 1.0, abs_tol=1e-9)
    assert min(d.probabilities) >= 1e-8


@given(p=simplex())
@settings(max_examples=300)
def test_identity_with_kl(p):
    assert self_certainty(p) == pytest.approx(kl_uniform_to(ActionDistribution(p).probabilities), abs=1e-12)
    assert self_certainty(p) >= -1e-15


@given(p=simplex(), seed=st.integers(0, 2**32 - 1))
def test_permutation_invariance(p, seed):
    q = list(np.random.default_rng(seed).permutation(p))
    assert self_certainty(p) == self_certainty(q)


@pytest.mark.parametrize("n", [2, 10, 20])
def test_concentration_monotone(n):
    uniform = np.full(n, 1.0 / n)
    onehot = np.zeros(n)
    onehot[0] = 1.0
    lams = np.linspace(0.0, 1.0 - 1e-8, 200)
    vals = [self_certainty((1 - lam) * uniform + lam * onehot) for lam in lams]
    assert vals[0] == pytest.approx(0.0, abs=1e-15)
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_batch_matches_scalar():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(10), size=50)
    batch = self_certainty_batch(p)
    for row, v in zip(p, batch):
        assert v == pytest.approx(self_certainty(row), abs=1e-12)


def test_grad_matches_finite_difference():
    rng = np.random.default_rng(1)
    z = rng.normal(size=7)

    def sc(logits):
        e = np.exp(logits - logits.max())
        return self_certainty(e / e.sum())

    e = np.exp(z - z.max())
    g = self_certainty_grad_logits(e / e.sum())
    h = 1e-6
    for j in range(7):
        dz = np.zeros(7)
        dz[j] = h
        fd = (sc(z + dz) - sc(z - dz)) / (2 * h)
        assert fd == pytest.approx(g[j], rel=1e-5, abs=1e-9)

import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from ramol.model import (
    MlpParams,
    WeightedExample,
    cross_entropy,
    forward,
    init_params,
    load_params,
    save_params,
    sgd_step,
    softmax,
    weighted_grad,
    weighted_loss,
)


def random_params(rng, d=4, hidden=6, C=3, activation="relu"):
    return MlpParams(
        rng.normal(size=(hidden, d)), rng.normal(size=hidden) * 0.5,
        rng.normal(size=(C, hidden)), rng.normal(size=C) * 0.5, activation,
    )


def random_batch(rng, params, n):
    return [
        WeightedExample(rng.normal(size=params.input_dim), int(rng.integers(params.n_classes)),
                        float(rng.uniform(0.1, 2.0)))
        for _ in range(n)
    ]


def oracle_loss(arrays, activation, batch):
    """Unclamped weighted cross-entropy in extended precision, written from scratch."""
    W1, b1, W2, b2 = arrays
    total = np.longdouble(0)
    for ex in batch:
        pre = W1 @ ex.x.astype(np.longdouble) + b1
        h = np.maximum(pre, 0) if activation == "relu" else np.tanh(pre)
        z = W2 @ h + b2
        m = z.max()
        total += np.longdouble(ex.weight) * (m + np.log(np.exp(z - m).sum()) - z[ex.y])
    return total


def fd_gradient(params, batch, eps=1e-5):
    """Central differences of ``oracle_loss`` with step ``eps``."""
    arrays = [a.astype(np.longdouble) for a in params.arrays()]
    step = np.longdouble(eps)
    out = []
    for a in arrays:
        g = np.zeros(a.shape)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            up = oracle_loss(arrays, params.activation, batch)
            a[idx] = old - step
            down = oracle_loss(arrays, params.activation, batch)
            a[idx] = old
            g[idx] = float((up - down) / (2 * step))
        out.append(g)
    return out


def relu_kink_free(params, batch, eps=1e-5):
    # central differences straddling a relu kink are meaningless; redraw those cases
    for ex in batch:
        pre = params.W1 @ ex.x + params.b1
        if np.min(np.abs(pre)) < 1e-3:
            return False
    return True


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# ---- init -----------------------------------------------------------------


def test_init_deterministic_and_bounded():
    a = init_params(8, 64, 2, 42)
    b = init_params(8, 64, 2, 42)
    assert a.equals(b)
    assert not a.equals(init_params(8, 64, 2, 43))
    assert np.all(a.b1 == 0) and np.all(a.b2 == 0)
    assert np.abs(a.W1).max() <= math.sqrt(6 / (8 + 64))
    assert np.abs(a.W2).max() <= math.sqrt(6 / (64 + 2))
    assert a.W1.shape == (64, 8) and a.W2.shape == (2, 64)


def test_init_rejects_nonpositive_dims():
    with pytest.raises(ValueError):
        init_params(0, 4, 2, 0)


def test_params_shape_validation():
    with pytest.raises(ValueError):
        MlpParams(np.zeros((3, 2)), np.zeros(4), np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        MlpParams(np.zeros((3, 2)), np.zeros(3), np.zeros((2, 3)), np.zeros(2), "sigmoid")


# ---- forward / softmax ----------------------------------------------------


def test_zero_params_give_uniform_probs():
    p = init_params(3, 5, 4, 0).zeros_like()
    fr = forward(p, [1.0, -2.0, 3.0])
    np.testing.assert_array_equal(fr.probs, np.full(4, 0.25))


def test_softmax_large_logits():
    np.testing.assert_array_equal(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])
    p = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(p)) and p[0] == 1.0


def test_forward_matches_decimal_softmax(rng):
    getcontext().prec = 50
    for act in ("relu", "tanh"):
        params = random_params(rng, activation=act)
        for _ in range(20):
            x = rng.normal(size=4) * 3
            fr = forward(params, x)
            pre = params.W1 @ x + params.b1
            h = np.maximum(pre, 0) if act == "relu" else np.tanh(pre)
            np.testing.assert_array_equal(fr.h, h)
            z = [Decimal(float(v)) for v in fr.logits]
            e = [zi.exp() for zi in z]
            total = sum(e)
            expect = np.array([float(ei / total) for ei in e])
            np.testing.assert_allclose(fr.probs, expect, rtol=1e-14, atol=1e-300)
            assert abs(fr.probs.sum() - 1.0) <= 1e-9


def test_forward_rejects_bad_input():
    p = init_params(3, 4, 2, 0)
    with pytest.raises(ValueError):
        forward(p, [1.0, 2.0])
    with pytest.raises(ValueError):
        forward(p, [1.0, np.nan, 0.0])


# ---- loss -----------------------------------------------------------------


def test_cross_entropy_values():
    assert cross_entropy([0.5, 0.5], 0) == pytest.approx(math.log(2))
    assert cross_entropy([1.0, 0.0], 0) == 0.0
    assert cross_entropy([0.9, 0.1], 1) == pytest.approx(2.302585093, rel=1e-9)
    assert cross_entropy([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))
    with pytest.raises(IndexError):
        cross_entropy([0.5, 0.5], 2)


# ---- gradients ------------------------------------------------------------


def test_zero_weight_gives_zero_gradient(rng):
    p = random_params(rng)
    g = weighted_grad(p, [WeightedExample(rng.normal(size=4), 1, 0.0)])
    assert all(np.all(a == 0) for a in g.arrays())


def test_weight_two_equals_duplicate(rng):
    p = random_params(rng)
    x = rng.normal(size=4)
    g2 = weighted_grad(p, [WeightedExample(x, 2, 2.0)])
    g11 = weighted_grad(p, [WeightedExample(x, 2, 1.0), WeightedExample(x, 2, 1.0)])
    for a, b in zip(g2.arrays(), g11.arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def test_gradient_linearity(rng):
    p = random_params(rng, activation="tanh")
    batch = random_batch(rng, p, 5)
    total = weighted_grad(p, batch)
    parts = [weighted_grad(p, [WeightedExample(ex.x, ex.y, 1.0)]) for ex in batch]
    for i, arr in enumerate(total.arrays()):
        summed = sum(ex.weight * part.arrays()[i] for ex, part in zip(batch, parts))
        np.testing.assert_allclose(arr, summed, rtol=1e-12, atol=1e-14)


def test_empty_batch_rejected(rng):
    with pytest.raises(ValueError):
        weighted_grad(random_params(rng), [])


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        WeightedExample(np.zeros(2), 0, -0.1)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(2024 if activation == "relu" else 7)
    checked = 0
    worst = 0.0
    while checked < 60:
        p = random_params(rng, d=3, hidden=5, C=3, activation=activation)
        batch = random_batch(rng, p, 3)
        if activation == "relu" and not relu_kink_free(p, batch):
            continue
        worst = max(worst, max_rel_error(weighted_grad(p, batch).arrays(), fd_gradient(p, batch)))
        checked += 1
    assert worst < 1e-4


def test_oracle_loss_agrees_with_library_off_the_clamp(rng):
    p = random_params(rng)
    for _ in range(20):
        batch = random_batch(rng, p, 3)
        if min(forward(p, ex.x).probs[ex.y] for ex in batch) > 1e-6:
            assert float(oracle_loss(p.arrays(), p.activation, batch)) == pytest.approx(weighted_loss(p, batch), rel=1e-12)


def test_loss_decreases_after_small_step(rng):
    p = random_params(rng)
    batch = random_batch(rng, p, 4)
    before = weighted_loss(p, batch)
    after = weighted_loss(sgd_step(p, weighted_grad(p, batch), 1e-3), batch)
    assert after < before


# ---- sgd ------------------------------------------------------------------


def test_sgd_step_cases(rng):
    p = random_params(rng)
    g = weighted_grad(p, random_batch(rng, p, 2))
    assert sgd_step(p, g, 0.0).equals(p)
    assert sgd_step(p, p.zeros_like(), 0.5).equals(p)
    one = MlpParams(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    grads = MlpParams(np.full((1, 1), 2.0), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    assert sgd_step(one, grads, 0.1).W1[0, 0] == pytest.approx(0.8)


def test_sgd_rejects_nonfinite_and_shape_mismatch(rng):
    p = random_params(rng)
    bad = p.zeros_like()
    bad.W1[0, 0] = np.inf
    with pytest.raises(FloatingPointError):
        sgd_step(p, bad, 0.1)
    with pytest.raises(ValueError):
        sgd_step(p, random_params(rng, d=5), 0.1)


# ---- snapshots ------------------------------------------------------------


def test_snapshot_round_trip(tmp_path, rng):
    p = random_params(rng, activation="tanh")
    path = tmp_path / "p.json"
    save_params(p, path)
    assert load_params(path).equals(p)

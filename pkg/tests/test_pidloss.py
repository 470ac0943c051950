import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsslab import pidloss
from lsslab.errors import InputError, NumericError
from lsslab.gradcheck import numerical_grad, relative_error
from lsslab.pidloss import ConfusionCounts, LossParams, PidState

counts = st.floats(0, 1e4, allow_nan=False)


# ---------------------------------------------------------------- confusion

def test_soft_confusion_half_probs():
    gt = np.zeros((4, 5), bool)
    gt[0, :3] = True
    c = pidloss.soft_confusion(np.full((4, 5), 0.5), gt)
    assert (c.tp, c.fn, c.fp, c.tn) == (1.5, 1.5, 8.5, 8.5)


def test_soft_confusion_exact_labels():
    y = np.random.default_rng(0).random((6, 6)) > 0.5
    c = pidloss.soft_confusion(y.astype(float), y)
    assert c.fp == 0 and c.fn == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_soft_counts_sum_to_n(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.random((5, 7)), rng.random((5, 7)) > 0.5
    assert pidloss.soft_confusion(p, y).total == pytest.approx(35, abs=1e-12)


def test_hard_confusion_examples():
    ones = np.ones((3, 3), bool)
    c = pidloss.hard_confusion(np.full((3, 3), 0.9), ones)
    assert (c.tp, c.fp, c.fn) == (9, 0, 0)
    assert pidloss.hard_confusion(np.full((3, 3), 0.4), ones).fn == 9
    c = pidloss.hard_confusion(np.array([0.6, 0.4, 0.6, 0.4]), np.array([1, 1, 0, 0]))
    assert (c.tp, c.fn, c.fp, c.tn) == (1, 1, 1, 1)


def test_shape_mismatch():
    with pytest.raises(InputError):
        pidloss.soft_confusion(np.zeros((2, 2)), np.zeros((2, 3)))


# ---------------------------------------------------------------- imbalance / Tversky

def test_imbalance_examples():
    assert pidloss.imbalance_signal(ConfusionCounts(0, 10, 30, 0)) == pytest.approx(0.5, abs=1e-7)
    assert pidloss.imbalance_signal(ConfusionCounts(5, 0, 0, 5)) == 0.0
    assert abs(pidloss.imbalance_signal(ConfusionCounts(5, 7, 7, 5))) < 1e-12


@given(counts, counts, counts)
def test_imbalance_open_interval(tp, fp, fn):
    e = pidloss.imbalance_signal(ConfusionCounts(tp, fp, fn, 0))
    assert -1 < e < 1


def test_tversky_examples():
    c = ConfusionCounts(50, 10, 20, 0, epsilon=0.0)
    assert pidloss.tversky_index(c, 0.3, 0.7) == pytest.approx(50 / 67, abs=1e-12)
    assert pidloss.tversky_index(c, 0.5, 0.5) == pytest.approx(100 / 130, abs=1e-12)
    assert pidloss.tversky_index(ConfusionCounts(0, 0, 0, 9), 0.3, 0.7) == 1.0


def test_tversky_matches_dice_on_random_triples():
    rng = np.random.default_rng(0)
    for tp, fp, fn in rng.uniform(0, 1000, (1000, 3)):
        ti = pidloss.tversky_index(ConfusionCounts(tp, fp, fn, 0, epsilon=1e-12), 0.5, 0.5)
        assert abs(ti - 2 * tp / (2 * tp + fp + fn)) < 1e-12


# ---------------------------------------------------------------- losses

def _map(seed, shape=(8, 8)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, shape), rng.random(shape) > 0.6


def test_focal_tversky_gamma_one_is_one_minus_ti():
    p, y = _map(0)
    loss, _ = pidloss.focal_tversky_loss(p, y, 0.3, 0.7, LossParams(gamma=1.0))
    ti = pidloss.tversky_index(pidloss.soft_confusion(p, y), 0.3, 0.7)
    assert loss == pytest.approx(1 - ti, abs=1e-15)


def test_focal_exponent_value():
    assert (1 - 50 / 67) ** (4 / 3) == pytest.approx(0.1606, abs=5e-5)


@pytest.mark.parametrize("seed", range(3))
def test_focal_tversky_gradient(seed):
    p, y = _map(seed)
    _, grad = pidloss.focal_tversky_loss(p, y, 0.3, 0.7)
    num = numerical_grad(lambda: pidloss.focal_tversky_loss(p, y, 0.3, 0.7)[0], {"p": p})["p"]
    assert relative_error(grad, num) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_bce_gradient(seed):
    p, y = _map(seed)
    _, grad = pidloss.bce_loss(p, y)
    num = numerical_grad(lambda: pidloss.bce_loss(p, y)[0], {"p": p})["p"]
    assert relative_error(grad, num) < 1e-4


def test_bce_values():
    y = np.eye(4, dtype=bool)
    assert pidloss.bce_loss(np.full((4, 4), 0.5), y)[0] == pytest.approx(math.log(2), abs=1e-15)
    assert pidloss.bce_loss(y.astype(float), y)[0] < 1e-6


def test_losses_finite_at_hard_extremes():
    y = np.eye(4, dtype=bool)
    for probs in (np.zeros((4, 4)), np.ones((4, 4)), y.astype(float)):
        for fn in (lambda p: pidloss.focal_tversky_loss(p, y, 0.25, 0.75), lambda p: pidloss.bce_loss(p, y)):
            loss, grad = fn(probs)
            assert math.isfinite(loss) and np.all(np.isfinite(grad))


def test_focal_loss_directional_monotonicity():
    p, y = _map(5)
    base, _ = pidloss.focal_tversky_loss(p, y, 0.3, 0.7)
    # raising a foreground probability converts FN mass into TP
    up = p.copy()
    up[y] = np.minimum(up[y] + 0.02, 0.99)
    assert pidloss.focal_tversky_loss(up, y, 0.3, 0.7)[0] < base
    down = p.copy()
    down[y] = np.maximum(down[y] - 0.02, 0.01)
    assert pidloss.focal_tversky_loss(down, y, 0.3, 0.7)[0] > base


def test_loss_range():
    for seed in range(10):
        p, y = _map(seed)
        loss, _ = pidloss.focal_tversky_loss(p, y, 0.25, 0.75)
        assert 0 <= loss < 1


def test_bad_loss_params():
    with pytest.raises(InputError):
        LossParams(gamma=0)


# ---------------------------------------------------------------- controller

def test_first_step_example():
    state, u = pidloss.pid_update(PidState(), 0.5)
    assert u == pytest.approx(0.0325, abs=1e-15)
    assert state.beta == pytest.approx(0.7825, abs=1e-15)
    assert state.alpha == pytest.approx(0.2175, abs=1e-15)
    assert state.epoch == 1 and state.prev_error == 0.5


def test_zero_error_is_noop():
    state, u = pidloss.pid_update(PidState(), 0.0)
    assert u == 0.0 and state.beta == 0.75


def test_persistent_positive_error_pins_upper_bound():
    state = PidState()
    betas = []
    for _ in range(100):
        state, _ = pidloss.pid_update(state, 1.0)
        betas.append(state.beta)
        assert state.beta <= 0.85
    assert betas[-1] == 0.85
    assert all(b2 >= b1 for b1, b2 in zip(betas, betas[1:]))
    assert abs(state.integral) <= 10


def test_non_finite_error():
    with pytest.raises(NumericError):
        pidloss.pid_update(PidState(), float("nan"))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=200))
def test_controller_clamp_property(stream):
    state = PidState()
    for e in stream:
        state, _ = pidloss.pid_update(state, e)
        assert 0.65 <= state.beta <= 0.85
        assert state.alpha == 1 - state.beta
        assert -10 <= state.integral <= 10

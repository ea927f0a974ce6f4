import numpy as np
import pytest
from hypothesis import given, strategies as st

from floodcoarse.loss import (LossSpec, NonDifferentiableLossError, coarsen_water, eval_loss, loss_grad,
                              per_pixel_loss, signed_difference)

HUBER, MSE, INUND = LossSpec("huber"), LossSpec("mse"), LossSpec("inundation", 0.5)
d_st = st.floats(-10, 10, allow_nan=False)


@pytest.mark.parametrize("spec", [HUBER, MSE, INUND])
def test_identical_depths_give_zero(spec):
    h = np.full((3, 3), 0.7)
    assert eval_loss(h, h, spec)[0] == 0.0


def test_single_pixel_values():
    hat, tgt = np.array([[2.0]]), np.array([[0.0]])
    assert eval_loss(hat, tgt, HUBER)[0] == 1.5
    assert eval_loss(hat, tgt, MSE)[0] == 4.0
    assert eval_loss(hat, tgt, INUND)[0] == 1.0
    assert eval_loss(np.array([[0.4]]), tgt, INUND)[0] == 0.0
    assert eval_loss(np.array([[0.5]]), tgt, INUND)[0] == 1.0
    assert eval_loss(np.array([[0.5]]), tgt, HUBER)[0] == 0.125
    assert eval_loss(np.array([[-1.0]]), tgt, HUBER)[0] == 0.5


def test_sum_reduction():
    hat = np.array([[0.0, 1.0], [2.0, -3.0]])
    total, pix = eval_loss(hat, np.zeros((2, 2)), HUBER)
    assert total == pytest.approx(0.0 + 0.5 + 1.5 + 2.5)
    assert pix.shape == (2, 2)


def test_gradients():
    z = np.zeros((1, 1))
    assert loss_grad(np.array([[3.0]]), z, HUBER)[0, 0] == 1.0
    assert loss_grad(np.array([[-3.0]]), z, HUBER)[0, 0] == -1.0
    assert loss_grad(np.array([[0.25]]), z, HUBER)[0, 0] == 0.25
    assert loss_grad(np.array([[0.25]]), z, MSE)[0, 0] == 0.5
    assert loss_grad(z, z, HUBER)[0, 0] == 0.0
    assert loss_grad(np.array([[1.0]]), z, HUBER)[0, 0] == 1.0
    with pytest.raises(NonDifferentiableLossError):
        loss_grad(z, z, INUND)


def test_inundation_default_threshold_and_parse():
    assert LossSpec("inundation").c == 0.5
    assert LossSpec.parse("inundation:0.25") == LossSpec("inundation", 0.25)
    assert LossSpec.parse("Huber") == HUBER
    with pytest.raises(ValueError):
        LossSpec("l1")
    with pytest.raises(ValueError):
        LossSpec("inundation", 0.0)


def test_coarsen_water():
    assert np.all(coarsen_water(np.full((4, 4), 0.2), 2) == 0.2)
    assert coarsen_water(np.array([[0, 0], [0, 0.4]]), 2)[0, 0] == pytest.approx(0.1)
    h = np.random.default_rng(0).uniform(0, 2, (32, 32))
    assert coarsen_water(h, 16).sum() * (16 * 2.0) ** 2 == pytest.approx(h.sum() * 2.0 ** 2, rel=1e-12)


@given(d_st, d_st)
def test_pixel_properties(a, b):
    hat, tgt = np.array([a]), np.array([b])
    hub, mse = per_pixel_loss(hat, tgt, HUBER)[0], per_pixel_loss(hat, tgt, MSE)[0]
    assert hub <= 0.5 * mse + 1e-12
    if abs(a - b) <= 1:
        assert hub == pytest.approx(0.5 * mse)
    for spec in (HUBER, MSE, INUND):
        assert per_pixel_loss(hat, tgt, spec)[0] == per_pixel_loss(tgt, hat, spec)[0]
    assert per_pixel_loss(hat, tgt, LossSpec("inundation", 1.0))[0] <= per_pixel_loss(hat, tgt, INUND)[0]


@given(st.floats(-5, 5, allow_nan=False).filter(lambda d: abs(abs(d) - 1) > 1e-3))
def test_grad_matches_finite_differences(d):
    eps = 1e-6
    for spec in (HUBER, MSE):
        f = lambda x: eval_loss(np.array([x]), np.array([0.0]), spec)[0]
        fd = (f(d + eps) - f(d - eps)) / (2 * eps)
        assert loss_grad(np.array([d]), np.array([0.0]), spec)[0] == pytest.approx(fd, abs=1e-6)


def test_signed_difference_orientation():
    assert signed_difference(np.array([1.0]), np.array([0.25]))[0] == 0.75

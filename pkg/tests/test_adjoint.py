import numpy as np
import pytest

from floodcoarse.adjoint import (CheckpointConsistencyError, CheckpointSchedule, checkpointed_backward,
                                 finite_difference_grad, forward_snapshots, gradcheck_instance,
                                 gradient_pass, grad_errors, loss_and_grad, record_dts, run_gradcheck)
from floodcoarse.grid import ElevationMap
from floodcoarse.loss import LossSpec, NonDifferentiableLossError
from floodcoarse.solver import BoundaryConditions, Segment, SolverParams, Stepper, simulate


def _inst(seed=0, size=12, steps=40):
    return gradcheck_instance(seed, size, steps)


def test_zero_loss_gives_zero_grad(small_valley):
    z, bc, params = small_valley
    st, _ = simulate(z, bc, params)
    for kind in ("huber", "mse"):
        value, grad = loss_and_grad(z, bc, params, st.h, LossSpec(kind))
        assert value == 0.0
        assert np.all(grad == 0.0)


def test_dry_run_zero_target_gives_zero_grad():
    i = np.arange(10)[:, None]
    z = ElevationMap(0.5 * i + 0.0 * np.arange(10)[None, :], 32.0)
    bc = BoundaryConditions(Segment("N", 2, 4), 0.0, Segment("S", 2, 4), 1e-3)
    value, grad = loss_and_grad(z, bc, SolverParams(horizon_T=600.0), np.zeros((10, 10)))
    assert value == 0.0 and np.all(grad == 0.0)


@pytest.mark.parametrize("kind", ["huber", "mse"])
def test_matches_central_differences_16x16_50_steps(kind):
    adj, fd = run_gradcheck(gradcheck_instance(3, 16, 50), LossSpec(kind))
    np.testing.assert_allclose(adj, fd, rtol=1e-5, atol=1e-8)
    assert grad_errors(adj, fd)[0] <= 1e-5


def test_checkpoint_interval_invariance():
    inst = _inst(1, 12, 100)
    ref = None
    for k in (1, 10, 7, None, 100, 1000):
        sched = CheckpointSchedule(k, list(inst.dts))
        res = gradient_pass(inst.z, inst.bc, inst.params, inst.target, LossSpec(), sched, h0=inst.h0)
        if ref is None:
            ref = res.grad
            continue
        assert np.abs(res.grad - ref).max() <= 1e-12 * np.abs(ref).max()
    assert CheckpointSchedule(None, [0.0] * 100).resolved_interval() == 10
    assert CheckpointSchedule(None, [0.0] * 101).resolved_interval() == 11


def test_peak_memory_scales_with_interval():
    inst = _inst(2, 8, 400)
    peaks = {}
    for k in (1, 20, 400):
        sched = CheckpointSchedule(k, list(inst.dts))
        peaks[k] = gradient_pass(inst.z, inst.bc, inst.params, inst.target, LossSpec(), sched, h0=inst.h0).peak_states
    assert peaks[1] >= 400 and peaks[400] >= 400
    assert peaks[20] <= 20 + 20


def test_sum_of_gradient_vanishes(small_valley):
    z, bc, params = small_valley
    st, _ = simulate(z, bc, params.with_(horizon_T=900.0))
    target = st.h + 0.05
    _, grad = loss_and_grad(z, bc, params.with_(horizon_T=900.0), target)
    assert np.abs(grad).sum() > 0
    assert abs(grad.sum()) <= 1e-10 * np.abs(grad).sum()


def test_inundation_loss_rejected(small_valley):
    z, bc, params = small_valley
    with pytest.raises(NonDifferentiableLossError):
        loss_and_grad(z, bc, params, np.zeros(z.shape), LossSpec("inundation"))


def test_target_shape_checked(small_valley):
    z, bc, params = small_valley
    with pytest.raises(ValueError):
        loss_and_grad(z, bc, params, np.zeros((4, 4)))


def test_snapshot_mismatch_detected():
    inst = _inst(0, 8, 30)
    stepper = Stepper(inst.z, inst.bc, inst.params)
    _, snaps = forward_snapshots(stepper, inst.h0, inst.dts, 10)
    h, qx, qy = snaps[10]
    snaps[10] = (h + 1e-9, qx, qy)
    with pytest.raises(CheckpointConsistencyError):
        checkpointed_backward(stepper, snaps, inst.dts, 10, np.ones(inst.z.shape))
    bad = dict(snaps)
    bad[5] = bad.pop(10)
    with pytest.raises(CheckpointConsistencyError):
        checkpointed_backward(stepper, bad, inst.dts, 10, np.ones(inst.z.shape))


def test_recorded_dts_reach_horizon(small_valley):
    z, bc, params = small_valley
    dts = record_dts(Stepper(z, bc, params), None, params.horizon_T)
    _, log = simulate(z, bc, params)
    assert dts == log.dts


def test_fd_oracle_selected_cells():
    inst = _inst(4, 8, 20)
    full = finite_difference_grad(inst.z, inst.bc, inst.params, inst.target, dts=inst.dts, h0=inst.h0)
    some = finite_difference_grad(inst.z, inst.bc, inst.params, inst.target, dts=inst.dts, h0=inst.h0,
                                  cells=[(0, 0), (3, 5)])
    assert some[0, 0] == full[0, 0] and some[3, 5] == full[3, 5]
    assert np.isnan(some[1, 1])


def test_grad_errors():
    n, e = grad_errors(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert n == 0.0 and e == 0.0
    n, e = grad_errors(np.array([1.1, 0.0]), np.array([1.0, 0.0]))
    assert n == pytest.approx(0.1) and e == pytest.approx(0.1 / (1 + 1e-8))

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cgid.errors import ContractError
from cgid.optim import ScheduleConfig, SgdState, lr_at, sgd_step


def sched(peak=0.01, total=100, warmup=0.1, momentum=0.9, wd=1.5e-4):
    return ScheduleConfig(peak_lr=peak, total_steps=total, warmup_ratio=warmup,
                          momentum=momentum, weight_decay=wd)


def flat(peak, momentum=0.0, wd=0.0, total=100):
    return ScheduleConfig(peak_lr=peak, total_steps=total, momentum=momentum,
                          weight_decay=wd, shape="constant")


def test_lr_zero_at_step_zero():
    assert lr_at(0, sched()) == 0.0


def test_lr_peak_at_warmup_end():
    s = sched(peak=0.5, total=100, warmup=0.1)
    assert lr_at(10, s) == pytest.approx(0.5, abs=1e-15)


def test_lr_half_peak_at_decay_midpoint():
    s = sched(peak=0.2, total=110, warmup=10 / 110)
    # decay spans steps 10..110; midpoint 60 -> peak * (1 + cos(pi/2)) / 2
    assert lr_at(60, s) == pytest.approx(0.1, abs=1e-12)


def test_lr_continuous_at_junction():
    s = sched(peak=0.3, total=1000, warmup=0.1)
    warm_end = 100
    ramp = s.peak_lr * warm_end / (s.warmup_ratio * s.total_steps)
    decay = lr_at(warm_end, s)
    assert abs(ramp - decay) < 1e-9


def test_lr_rejects_out_of_range_step():
    with pytest.raises(ContractError):
        lr_at(101, sched(total=100))


@given(st.integers(min_value=0, max_value=200))
def test_lr_nonnegative_and_bounded(step):
    s = sched(peak=0.7, total=200)
    lr = lr_at(step, s)
    assert 0.0 <= lr <= 0.7 + 1e-12


def test_zero_grad_leaves_params_unchanged():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.zeros(2)}
    state = SgdState(flat(peak=0.1))
    sgd_step(p, g, state)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert state.step == 1


def test_plain_sgd_reduction():
    # momentum 0: p decreases by lr * (g + wd * p)
    p = {"w": np.array([2.0])}
    g = {"w": np.array([0.5])}
    wd = 0.01
    state = SgdState(flat(peak=0.1, wd=wd))
    sgd_step(p, g, state)
    np.testing.assert_allclose(p["w"], [2.0 - 0.1 * (0.5 + wd * 2.0)], atol=1e-15)


def test_momentum_two_step_displacement():
    # constant gradient 1, lr 1, wd 0, momentum 0.9: moves 1 then 1.9
    p = {"w": np.array([0.0])}
    g = {"w": np.array([1.0])}
    state = SgdState(flat(peak=1.0, momentum=0.9))
    sgd_step(p, g, state)
    np.testing.assert_allclose(p["w"], [-1.0], atol=1e-15)
    sgd_step(p, g, state)
    np.testing.assert_allclose(p["w"], [-2.9], atol=1e-12)


def test_frozen_params_skipped():
    p = {"w": np.array([1.0]), "b": np.array([1.0])}
    g = {"w": np.array([1.0]), "b": np.array([1.0])}
    state = SgdState(flat(peak=1.0))
    sgd_step(p, g, state, frozen=("b",))
    assert p["w"][0] != 1.0
    assert p["b"][0] == 1.0
    assert "b" not in state.velocity


def test_momentum_buffers_shape_match():
    p = {"w": np.zeros((3, 2))}
    g = {"w": np.ones((3, 2))}
    state = SgdState(sched(total=5, warmup=0.0))
    sgd_step(p, g, state)
    assert state.velocity["w"].shape == (3, 2)

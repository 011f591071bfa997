import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivah.stepfun import StepFunction, cumulative_sum_step, running_max_piecewise_linear


def test_right_and_left_continuity():
    f = StepFunction([1.0, 2.0], [10.0, 20.0], initial=5.0)
    g = StepFunction([1.0, 2.0], [10.0, 20.0], initial=5.0, right_continuous=False)
    assert f(1.0) == 10.0 and g(1.0) == 5.0
    assert f(1.5) == g(1.5) == 10.0
    assert f(0.0) == g(0.0) == 5.0
    assert f.left_limit(2.0) == 10.0 and f.right_limit(2.0) == 20.0


def test_integral_exact():
    f = StepFunction([1.0, 2.0], [10.0, 20.0], initial=5.0)
    # 5 on [0,1], 10 on [1,2], 20 on [2,2.5]
    assert f.integral(0.0, 2.5) == pytest.approx(5 + 10 + 10, abs=1e-14)
    assert f.integral(1.5, 1.5) == 0.0


def test_from_segments_matches_segment_values():
    knots = np.array([0.5, 1.0, 3.0])
    f = StepFunction.from_segments(knots, [[1.0], [2.0], [3.0]])
    assert f(np.array([0.25, 0.5, 0.75, 1.0, 2.0, 3.0]))[:, 0].tolist() == [1, 1, 2, 2, 3, 3]
    assert f.integral(0.0, 3.0)[0] == pytest.approx(0.5 + 1.0 + 6.0)


def test_cumulative_sum_step_and_roundtrip():
    f = cumulative_sum_step([1.0, 2.0, 4.0], [0.5, 0.25, 1.0])
    assert f(np.array([0.0, 1.0, 3.0, 4.0])).tolist() == [0.0, 0.5, 0.75, 1.75]
    g = StepFunction.from_dict(f.to_dict())
    t = np.linspace(0, 5, 23)
    assert np.array_equal(f(t), g(t))
    assert np.array_equal(f.integral(0, t), g.integral(0, t))


def test_empty_breaks():
    f = StepFunction([], np.zeros((0, 2)), initial=[1.0, 2.0])
    assert f(3.0).tolist() == [1.0, 2.0]
    assert f.integral(0.0, 2.0).tolist() == [2.0, 4.0]


def test_rejects_unsorted():
    with pytest.raises(ValueError):
        StepFunction([2.0, 1.0], [0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8), st.floats(0.0, 1.0),
       st.floats(0.05, 6.0))
def test_integral_matches_fine_riemann_sum(vals, initial, upper):
    breaks = np.arange(1, len(vals) + 1) * 0.7
    f = StepFunction(breaks, vals, initial=initial)
    grid = np.linspace(0, upper, 200001)
    mid = 0.5 * (grid[1:] + grid[:-1])
    approx = np.sum(f(mid)) * (grid[1] - grid[0])
    assert f.integral(0.0, upper) == pytest.approx(approx, abs=1e-3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=6), st.floats(-3.0, 1.0))
def test_running_max_is_sup_of_jump_linear_curve(jumps, slope):
    knots = np.cumsum(np.full(len(jumps), 0.5))
    step = cumulative_sum_step(knots, jumps)

    def f(t):
        return step(t) + slope * np.asarray(t)

    t = np.linspace(0, knots[-1] + 0.5, 301)
    got = running_max_piecewise_linear(knots, f(knots), f, t)
    dense = np.linspace(0, knots[-1] + 0.5, 30001)
    vals = np.maximum.accumulate(np.maximum(f(dense), 0.0))
    ref = np.interp(t, dense, vals)
    assert np.all(got >= ref - 1e-12)
    assert np.all(np.diff(got) >= -1e-15)
    assert np.allclose(got, ref, atol=5e-4 * (1 + abs(slope)))

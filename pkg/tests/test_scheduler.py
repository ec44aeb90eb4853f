"""Switching-scheduler tests: the minimum dwell-time formula, loss-bound
certification, replacement-link selection, and the goal-relative estimate."""

import math

import numpy as np
import pytest

from orbinspect.scheduler import (
    ChainState,
    DwellRejected,
    TrackTimeline,
    certify_loss_bound,
    estimate_goal_relative,
    min_dwell,
    switch_feature,
)


def test_min_dwell_reference_value():
    # closed form: -ln((2 - 0.1)/4) / 0.001
    assert min_dwell(2.0, 4.0, 0.1, 0.001) == pytest.approx(744.44, abs=0.1)


def test_min_dwell_clamps_to_zero():
    # new bound already better than the required improvement: no dwell needed
    assert min_dwell(10.0, 4.0, 0.1, 0.001) == 0.0
    assert min_dwell(4.2, 4.0, 0.1, 0.001) == 0.0


def test_min_dwell_rejection_boundary():
    """Rejection triggers exactly when the previous bound is within delta."""
    with pytest.raises(DwellRejected):
        min_dwell(0.1, 4.0, 0.1, 0.001)
    with pytest.raises(DwellRejected):
        min_dwell(0.05, 4.0, 0.1, 0.001)
    # just above the margin: finite (large) dwell, no rejection
    assert math.isfinite(min_dwell(0.1 + 1e-9, 4.0, 0.1, 0.001))
    with pytest.raises(ValueError):
        min_dwell(2.0, 4.0, 0.1, 0.0)


def test_min_dwell_guarantees_improvement():
    """Tracking for the minimum dwell shrinks the bound past the margin."""
    prev, theta_a, delta, beta = 3.0, 7.0, 0.1, 0.001
    tau = min_dwell(prev, theta_a, delta, beta)
    assert theta_a * math.exp(-beta * tau) == pytest.approx(prev - delta, rel=1e-12)


def test_certify_loss_bound():
    tl = TrackTimeline(fid=3, t_a=0.0, theta_bar_a=100.0, active_duration=500.0)
    bound = certify_loss_bound(tl, 0.001)
    assert bound == pytest.approx(100.0 * math.exp(-0.5), rel=1e-12)
    assert tl.theta_bar_u == bound


def test_switch_feature_prefers_smallest_bound():
    chain = ChainState(delta=0.1)
    timelines = {
        1: TrackTimeline(fid=1, t_a=0.0, theta_bar_a=100.0, active_duration=100.0),
        2: TrackTimeline(fid=2, t_a=0.0, theta_bar_a=100.0, active_duration=900.0),
        3: TrackTimeline(fid=3, t_a=0.0, theta_bar_a=100.0, active_duration=500.0),
    }
    # no accepted bound yet: every candidate qualifies, best decay wins
    assert switch_feature(chain, [1, 2, 3], timelines, 0.001) == 2
    # with a demanding previous bound only sufficiently-dwelled links qualify
    chain.bounds.append(50.0)
    need = min_dwell(50.0, 100.0, chain.delta, 0.001)
    assert timelines[2].active_duration >= need > timelines[3].active_duration
    assert switch_feature(chain, [1, 3], timelines, 0.001) is None
    assert switch_feature(chain, [1, 2, 3], timelines, 0.001) == 2


def test_switch_feature_skips_unknown_and_rejected():
    chain = ChainState(delta=0.1)
    chain.bounds.append(0.05)  # within delta: every candidate is rejected
    timelines = {
        1: TrackTimeline(fid=1, t_a=0.0, theta_bar_a=100.0, active_duration=1e6),
    }
    assert switch_feature(chain, [1, 9], timelines, 0.001) is None


def test_estimate_goal_relative_error_equals_range_error():
    """With a feature-anchored goal offset, the goal-relative estimate error
    is exactly the distance-estimate error along the bearing."""
    rng = np.random.default_rng(8)
    for _ in range(50):
        p = rng.normal(size=3) * 40.0
        f = rng.normal(size=3) * 10.0
        p_gh = rng.normal(size=3) * 25.0
        r_bh = np.linalg.norm(p - f)
        u_bh = (p - f) / r_bh
        anchor = p_gh - f
        for err in (0.0, 0.5, -2.0):
            est = estimate_goal_relative(anchor, u_bh, r_bh + err)
            truth = p_gh - p
            assert np.linalg.norm(est - truth) == pytest.approx(abs(err), abs=1e-12)

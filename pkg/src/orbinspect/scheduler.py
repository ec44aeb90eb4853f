"""Sequential feature tracking: dwell-time admission, certified error bounds,
chain-link switching, and the goal-relative position estimate.

Each chain link is one interval during which a single feature anchors the
goal-relative estimate. A link is accepted only if its certified error bound
improves on the previous link's bound by at least the margin delta, which the
minimum dwell-time condition guarantees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DwellRejected",
    "TrackTimeline",
    "ChainState",
    "min_dwell",
    "certify_loss_bound",
    "switch_feature",
    "estimate_goal_relative",
]


class DwellRejected(RuntimeError):
    """The previous bound is within the margin; no dwell time can improve it."""


@dataclass
class TrackTimeline:
    fid: int
    t_a: float
    theta_bar_a: float
    t_d: float | None = None     # time the dwell requirement was met
    t_u: float | None = None     # loss time
    theta_bar_u: float | None = None
    active_duration: float = 0.0


@dataclass
class ChainState:
    active_fid: int | None = None
    p_gb_hat: np.ndarray | None = None
    delta: float = 0.1
    bounds: list = field(default_factory=list)  # certified bounds of accepted links
    # frozen quantities used while no feature is actively tracked
    frozen_r_bh: float | None = None
    frozen_u_bh: np.ndarray | None = None
    frozen_anchor: np.ndarray | None = None

    @property
    def last_bound(self):
        return self.bounds[-1] if self.bounds else None


def min_dwell(theta_bar_prev_u: float, theta_bar_a: float, delta: float, beta: float) -> float:
    """Minimum active-tracking duration after which the new certified bound
    improves on the previous one by at least delta; 0 when already satisfied."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    if theta_bar_prev_u - delta <= 0.0:
        raise DwellRejected(
            f"previous bound {theta_bar_prev_u} within margin {delta}; feature rejected"
        )
    arg = (theta_bar_prev_u - delta) / theta_bar_a
    if arg >= 1.0:
        return 0.0
    return -math.log(arg) / beta


def certify_loss_bound(timeline: TrackTimeline, beta: float) -> float:
    """Exponential-decay bound on the estimation error accumulated over the
    link's active-tracking duration; stored on the timeline."""
    timeline.theta_bar_u = timeline.theta_bar_a * math.exp(-beta * timeline.active_duration)
    return timeline.theta_bar_u


def switch_feature(chain: ChainState, candidate_fids, timelines: dict, beta: float):
    """Pick the replacement link when the active feature is lost: among
    candidates whose dwell requirement is met, take the one with the smallest
    certified bound (ties broken by smaller id). Returns the chosen feature id
    or None to hold the frozen estimate."""
    prev_bound = chain.last_bound
    best = None
    for fid in sorted(candidate_fids):
        tl = timelines.get(fid)
        if tl is None:
            continue
        if prev_bound is not None:
            try:
                need = min_dwell(prev_bound, tl.theta_bar_a, chain.delta, beta)
            except DwellRejected:
                continue
            if tl.active_duration < need:
                continue
        bound = tl.theta_bar_a * math.exp(-beta * tl.active_duration)
        if best is None or bound < best[1]:
            best = (fid, bound)
    return best[0] if best is not None else None


def estimate_goal_relative(goal_anchor: np.ndarray, u_bh: np.ndarray, r_bh_hat: float) -> np.ndarray:
    """Goal position relative to the deputy, anchored at the tracked feature:
    the goal-minus-feature offset minus the estimated feature-to-deputy leg."""
    return goal_anchor - u_bh * r_bh_hat

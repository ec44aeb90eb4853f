"""Relative orbital dynamics in the Hill frame and a fixed-step RK4 integrator.

The chief satellite sits at the origin of a rotating Hill frame; the deputy's
position/velocity relative to the chief follow the linearized
Clohessy-Wiltshire equations. The sun is a point source rotating in the x-y
plane at the chief's mean motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HillState",
    "SunState",
    "PlantMatrices",
    "wrap_angle",
    "cw_derivative",
    "step_rk4",
    "sun_step",
    "sun_unit_vector",
]


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    th = theta % (2.0 * math.pi)  # [0, 2*pi)
    if th > math.pi:
        th -= 2.0 * math.pi
    return th


@dataclass
class HillState:
    """Deputy position/velocity relative to the chief, Hill frame, meters."""

    p: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.p.shape != (3,) or self.v.shape != (3,):
            raise ValueError("HillState requires 3-vectors for p and v")
        if not (np.isfinite(self.p).all() and np.isfinite(self.v).all()):
            raise ValueError("HillState components must be finite")


@dataclass
class SunState:
    """Sun angle in the Hill x-y plane and the chief's mean motion."""

    theta_s: float
    n: float

    def __post_init__(self):
        self.theta_s = wrap_angle(float(self.theta_s))


@dataclass
class PlantMatrices:
    """CW plant (A, B) for the 6-state goal-relative model, deputy mass m."""

    m: float
    n: float
    A: np.ndarray = field(init=False)
    B: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.m <= 0.0:
            raise ValueError("deputy mass must be positive")
        n = self.n
        A = np.zeros((6, 6))
        A[0:3, 3:6] = np.eye(3)
        A[3, 0] = 3.0 * n * n
        A[3, 4] = 2.0 * n
        A[4, 3] = -2.0 * n
        A[5, 2] = -n * n
        B = np.zeros((6, 3))
        B[3:6, :] = np.eye(3) / self.m
        self.A = A
        self.B = B


def cw_derivative(state: HillState, force: np.ndarray, params: PlantMatrices):
    """CW time derivative of (p, v) under thruster force [N].

    Returns ``(v, a)``. Rejects non-finite input.
    """
    force = np.asarray(force, dtype=float)
    if force.shape != (3,):
        raise ValueError("force must be a 3-vector")
    if not (np.isfinite(state.p).all() and np.isfinite(state.v).all() and np.isfinite(force).all()):
        raise ValueError("cw_derivative: non-finite input")
    n, m = params.n, params.m
    p, v = state.p, state.v
    a = np.array(
        [
            2.0 * n * v[1] + 3.0 * n * n * p[0] + force[0] / m,
            -2.0 * n * v[0] + force[1] / m,
            -n * n * p[2] + force[2] / m,
        ]
    )
    return v.copy(), a


def _cw_rhs(p, v, force, n, m):
    ax = 2.0 * n * v[1] + 3.0 * n * n * p[0] + force[0] / m
    ay = -2.0 * n * v[0] + force[1] / m
    az = -n * n * p[2] + force[2] / m
    return v, np.array([ax, ay, az])


def step_rk4(state: HillState, force: np.ndarray, params: PlantMatrices, dt: float) -> HillState:
    """Advance the deputy state one classical RK4 step under constant force."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    force = np.asarray(force, dtype=float)
    if not np.isfinite(force).all():
        raise ValueError("step_rk4: non-finite force")
    n, m = params.n, params.m
    p0, v0 = state.p, state.v

    k1p, k1v = _cw_rhs(p0, v0, force, n, m)
    k2p, k2v = _cw_rhs(p0 + 0.5 * dt * k1p, v0 + 0.5 * dt * k1v, force, n, m)
    k3p, k3v = _cw_rhs(p0 + 0.5 * dt * k2p, v0 + 0.5 * dt * k2v, force, n, m)
    k4p, k4v = _cw_rhs(p0 + dt * k3p, v0 + dt * k3v, force, n, m)

    p1 = p0 + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    v1 = v0 + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return HillState(p=p1, v=v1, t=state.t + dt)


def sun_step(sun: SunState, dt: float) -> SunState:
    """Advance the sun angle by its exact linear solution, wrapped to (-pi, pi]."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return SunState(theta_s=wrap_angle(sun.theta_s - sun.n * dt), n=sun.n)


def sun_unit_vector(sun: SunState) -> np.ndarray:
    """Unit vector from the chief center toward the sun (z-component is 0)."""
    return np.array([math.cos(sun.theta_s), math.sin(sun.theta_s), 0.0])

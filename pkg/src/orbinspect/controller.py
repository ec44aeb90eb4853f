"""Barrier-robustified, finite-horizon LQR control.

The plant state is x = (p_gb, v_gb): goal position and velocity relative to
the deputy in the Hill frame. The nominal input comes from a backward Riccati
solve over the goal segment; a Lagrange-multiplier correction derived from a
robustified barrier keeps the deputy inside the annulus r_min < |p_bh| < r_max
despite observer error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SafetyEnvelope",
    "RiccatiSolution",
    "SafetyFault",
    "constraint_h",
    "constraint_h_grad",
    "robustified_h",
    "barrier_phi",
    "epsilon_r_bound",
    "solve_riccati",
    "lagrange_multiplier",
    "control",
]


class SafetyFault(RuntimeError):
    """The safety constraint (or its robustified form) is violated."""


@dataclass
class SafetyEnvelope:
    r_min: float
    r_max: float
    a_max: float
    gamma_phi: float
    L_h: float
    epsilon_r: float
    beta: float
    alpha_gain: float = 0.3

    def M(self, t: float) -> float:
        """Decaying bound on the state-estimate error at segment time t."""
        return self.epsilon_r * math.exp(-self.beta * t)


def _h_parts(p_gb, v_gb, p_gh, env: SafetyEnvelope):
    w = p_gh - p_gb          # deputy position relative to the chief
    v_bh = -v_gb
    rho = float(np.linalg.norm(w))
    d_koz = rho - env.r_min
    d_kiz = env.r_max - rho
    fault = d_koz < 0.0 or d_kiz < 0.0
    v_proj = float(np.dot(v_bh, w)) / rho if rho > 0.0 else 0.0
    hk = math.sqrt(2.0 * env.a_max * max(d_koz, 0.0)) + v_proj
    hi = math.sqrt(2.0 * env.a_max * max(d_kiz, 0.0)) + v_proj
    return w, v_bh, rho, v_proj, hk, hi, fault


def constraint_h(x: np.ndarray, p_gh: np.ndarray, env: SafetyEnvelope):
    """Harmonic combination of the keep-out and keep-in constraint margins.

    Returns (h, fault): fault is True when the deputy is already outside the
    safe annulus (square-root arguments clamped at zero).
    """
    _, _, _, _, hk, hi, fault = _h_parts(x[0:3], x[3:6], p_gh, env)
    s = hk + hi
    if s == 0.0:
        return 0.0, True
    return hk * hi / s, fault


def constraint_h_grad(x: np.ndarray, p_gh: np.ndarray, env: SafetyEnvelope):
    """h and its analytic gradient with respect to x = (p_gb, v_gb)."""
    p_gb, v_gb = x[0:3], x[3:6]
    w, v_bh, rho, v_proj, hk, hi, fault = _h_parts(p_gb, v_gb, p_gh, env)
    s = hk + hi
    if fault or s == 0.0:
        raise SafetyFault("constraint gradient undefined outside the safe annulus")
    u = w / rho
    # v_proj depends on both halves of the state
    dvproj_dpgb = -(v_bh - v_proj * u) / rho
    dvproj_dvgb = -u
    dhk_drho = env.a_max / math.sqrt(2.0 * env.a_max * (rho - env.r_min))
    dhi_drho = -env.a_max / math.sqrt(2.0 * env.a_max * (env.r_max - rho))
    drho_dpgb = -u
    dh_dhk = (hi / s) ** 2
    dh_dhi = (hk / s) ** 2
    grad = np.zeros(6)
    grad[0:3] = (
        dh_dhk * (dhk_drho * drho_dpgb + dvproj_dpgb)
        + dh_dhi * (dhi_drho * drho_dpgb + dvproj_dpgb)
    )
    grad[3:6] = (dh_dhk + dh_dhi) * dvproj_dvgb
    h = hk * hi / s
    return h, grad


def robustified_h(h: float, t: float, env: SafetyEnvelope) -> float:
    return h - env.L_h * env.M(t)


def epsilon_r_bound(u_kh: np.ndarray, p_gh: np.ndarray, p_gb_hat: np.ndarray,
                    r_min: float, r_max: float) -> float:
    """Worst-case initial state-estimate error over the admissible range
    interval; the objective is convex in the range, so the maximum is attained
    at an endpoint."""
    vals = [
        float(np.linalg.norm(r * u_kh - p_gh - p_gb_hat)) for r in (r_min, r_max)
    ]
    return max(vals)


def barrier_phi(x: np.ndarray, t: float, p_gh: np.ndarray, env: SafetyEnvelope,
                h0: float):
    """Barrier value and analytic gradients.

    Phi = (gamma/h_r(x,t) - gamma/h_r(0,t))^2, where h0 is the constraint
    value with the deputy at rest at the goal. Returns (Phi, grad_x, grad_t).
    Raises SafetyFault when either robustified constraint is non-positive.
    """
    h, grad_h = constraint_h_grad(x, p_gh, env)
    M = env.M(t)
    h_r = h - env.L_h * M
    h_r0 = h0 - env.L_h * M
    if h_r <= 0.0 or h_r0 <= 0.0:
        raise SafetyFault(f"robustified constraint non-positive (h_r={h_r:.4g})")
    g = env.gamma_phi
    b = g / h_r
    b0 = g / h_r0
    diff = b - b0
    phi = diff * diff
    grad_x = 2.0 * diff * (-g / (h_r * h_r)) * grad_h
    # time enters only through M(t); dM/dt = -beta*M
    dMdt = -env.beta * M
    db_dt = g / (h_r * h_r) * env.L_h * dMdt
    db0_dt = g / (h_r0 * h_r0) * env.L_h * dMdt
    grad_t = 2.0 * diff * (db_dt - db0_dt)
    return phi, grad_x, grad_t


@dataclass
class RiccatiSolution:
    grid: np.ndarray            # ascending times on [t0, t_f]
    P: np.ndarray               # (len(grid), 6, 6)
    Q_bar: np.ndarray
    Q_f: np.ndarray
    R: np.ndarray
    gamma_c: float
    bounds: tuple = field(init=False)

    def __post_init__(self):
        eigs = np.linalg.eigvalsh(self.P)
        self.bounds = (float(eigs.min()), float(eigs.max()))

    def at(self, t: float) -> np.ndarray:
        g = self.grid
        if t <= g[0]:
            P = self.P[0]
        elif t >= g[-1]:
            P = self.P[-1]
        else:
            j = int(np.searchsorted(g, t) - 1)
            frac = (t - g[j]) / (g[j + 1] - g[j])
            P = (1.0 - frac) * self.P[j] + frac * self.P[j + 1]
        return 0.5 * (P + P.T)


def _riccati_rhs(P, A, BRB, Q_bar):
    return -A.T @ P - P @ A + P @ BRB @ P - Q_bar


def solve_riccati(Q, R, Q_f, gamma_c, n_c, A, B, horizon, dt) -> RiccatiSolution:
    """Backward RK4 integration of the Riccati differential equation from
    P(t_f) = Q_f; grid times are relative to the segment start."""
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    C = np.zeros((3, 6))
    C[:, 3:6] = np.eye(3)
    Q_bar = Q + gamma_c * C.T @ np.outer(n_c, n_c) @ C
    Q_bar = 0.5 * (Q_bar + Q_bar.T)
    n_steps = max(1, int(round(horizon / dt)))
    grid = np.linspace(0.0, horizon, n_steps + 1)
    BRB = B @ np.linalg.solve(R, B.T)
    P = np.zeros((n_steps + 1, 6, 6))
    P[-1] = Q_f
    hstep = -(horizon / n_steps)
    for j in range(n_steps, 0, -1):
        Pj = P[j]
        k1 = _riccati_rhs(Pj, A, BRB, Q_bar)
        k2 = _riccati_rhs(Pj + 0.5 * hstep * k1, A, BRB, Q_bar)
        k3 = _riccati_rhs(Pj + 0.5 * hstep * k2, A, BRB, Q_bar)
        k4 = _riccati_rhs(Pj + hstep * k3, A, BRB, Q_bar)
        nxt = Pj + (hstep / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P[j - 1] = 0.5 * (nxt + nxt.T)
    if np.linalg.eigvalsh(P[0]).min() <= 0.0:
        raise RuntimeError("Riccati solution lost positive definiteness")
    return RiccatiSolution(grid=grid, P=P, Q_bar=Q_bar, Q_f=np.array(Q_f), R=np.array(R),
                           gamma_c=gamma_c)


def lagrange_multiplier(x_hat, P, A, B, R, env: SafetyEnvelope,
                        grad_x, grad_t, h_r):
    """Barrier Lagrange multiplier: zero when the nominal input already
    satisfies the safety constraint, otherwise the exact positive value that
    drives the constraint to zero. Returns (lambda_hat, c_nominal)."""
    RinvBt = np.linalg.solve(R, B.T)
    u_lqr = -RinvBt @ (P @ x_hat)
    c = float(grad_x @ (A @ x_hat + B @ u_lqr)) + grad_t - env.alpha_gain * h_r
    if c <= 0.0:
        return 0.0, c
    denom = float(grad_x @ B @ RinvBt @ grad_x)
    if denom <= 1e-30:
        raise SafetyFault("barrier gradient orthogonal to control directions")
    return 2.0 * c / denom, c


def control(x_hat, P, lam_hat, grad_x_phi, R, B):
    """u = -R^{-1}B^T P x - (1/2) R^{-1} B^T lambda grad(Phi)^T."""
    RinvBt = np.linalg.solve(R, B.T)
    u = -RinvBt @ (P @ x_hat)
    if lam_hat != 0.0:
        u = u - 0.5 * lam_hat * (RinvBt @ grad_x_phi)
    return u

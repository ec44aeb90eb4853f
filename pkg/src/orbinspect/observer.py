"""Memory-regression distance observer.

Per tracked feature, estimates theta = (r_bh, r_bk, r_kh): deputy-to-feature,
deputy-to-key-frame, and key-frame-to-feature distances, from unit-vector
measurements and the relative velocity. Regression samples are accumulated in
a fixed-capacity history stack; the update law is projection-guarded so the
estimates stay inside their physical bounds.

Bearing convention in this module: u_bh = unit(deputy - feature),
u_bk = unit(deputy - key), u_kh = unit(key - feature), so that
u_bh*r_bh - u_bk*r_bk = u_kh*r_kh.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ObserverParams",
    "KeyFrame",
    "HistoryStack",
    "FeatureTrack",
    "RankDeficientError",
    "InsufficientExcitationError",
    "regressor_Y",
    "psi",
    "solve_r_kh",
    "stack_insert",
    "smooth_project_rate",
    "eigmin_2x2",
]


class RankDeficientError(RuntimeError):
    """Instantaneous regressor Y is (near) rank deficient; psi is undefined."""


class InsufficientExcitationError(RuntimeError):
    """History-stack excitation below the activation threshold."""


@dataclass
class ObserverParams:
    k_theta: float = 1.0
    lam: float = 1.0           # forgetting factor of the exponential filter
    lambda_a: float = 1e-3     # rank threshold on Y^T Y
    # rank threshold for admitting samples into the history stack
    lambda_insert: float = 1e-3
    # the bearing to the key frame rotates arbitrarily fast right after the
    # key is stamped, so the integral samples from the first windows carry
    # large quadrature error; withhold them from the stack for a short burn-in
    key_burn_in: float = 1.0
    sigma_lb: float = 1e-6     # excitation threshold on sigma_Y
    stack_trust: float = 1e-9  # lambda_min(Sigma_Y) before the memory term engages
    capacity: int = 100
    varsigma: float = 0.05     # integration window length, s
    rank_start: float = 0.25   # time after acquisition before rank checks, s
    r_min: float = 15.0
    r_max: float = 800.0
    r_lower: float = 0.01
    regressor: str = "windowed"  # or "filtered"
    proj_layer: float = 0.1      # boundary-layer width, m

    def box(self):
        lo = np.array([self.r_min, self.r_lower, self.r_min])
        hi = np.array([self.r_max, self.r_max, self.r_max])
        return lo, hi


@dataclass
class KeyFrame:
    t_key: float
    u_kh: np.ndarray   # fixed unit vector from feature toward key origin
    p_key: np.ndarray  # deputy position at key time (ground truth, reporting only)


def regressor_Y(u_bh: np.ndarray, u_bk: np.ndarray) -> np.ndarray:
    """Stack the two bearing vectors as columns [u_bh, -u_bk]."""
    return np.column_stack([u_bh, -u_bk])


def eigmin_2x2(a: float, b: float, c: float) -> float:
    """Smallest eigenvalue of the symmetric matrix [[a, b], [b, c]]."""
    half_tr = 0.5 * (a + c)
    disc = math.sqrt(0.25 * (a - c) ** 2 + b * b)
    return half_tr - disc


def ytY_eigmin(u_bh: np.ndarray, u_bk: np.ndarray) -> float:
    # Y^T Y = [[1, -c], [-c, 1]] for unit columns, c = <u_bh, u_bk>
    c = float(np.dot(u_bh, u_bk))
    return 1.0 - abs(c)


def psi(Y: np.ndarray, u_kh: np.ndarray, lambda_a: float = 0.0):
    """Least-squares coefficients psi = (Y^T Y)^{-1} Y^T u_kh.

    Returns (psi, residual_norm). Raises when Y^T Y is not safely invertible.
    """
    G = Y.T @ Y
    lmin = eigmin_2x2(G[0, 0], G[0, 1], G[1, 1])
    if lmin <= lambda_a:
        raise RankDeficientError(f"lambda_min(Y^T Y) = {lmin:.3e} <= {lambda_a:.3e}")
    rhs = Y.T @ u_kh
    det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    ps = np.array(
        [
            (G[1, 1] * rhs[0] - G[0, 1] * rhs[1]) / det,
            (G[0, 0] * rhs[1] - G[1, 0] * rhs[0]) / det,
        ]
    )
    residual = float(np.linalg.norm(Y @ ps - u_kh))
    return ps, residual


class HistoryStack:
    """Fixed-capacity store of (Y, U) regression samples with normalized sums.

    Keeps both the scalar accumulators used for solving r_kh and the 2x2
    outer-product matrix used for conditioning metrics and for the
    minimum-eigenvalue-maximizing replacement policy.
    """

    RECHECK_EVERY = 1024

    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        self.Ys = np.zeros((self.capacity, 2))
        self.Us = np.zeros((self.capacity, 2))
        self.ts = np.zeros(self.capacity)
        self.size = 0
        self.sigma_Y = 0.0
        self.sigma_U = 0.0
        self.S = np.zeros((2, 2))
        self._inserts = 0

    def __len__(self):
        return self.size

    @property
    def full(self):
        return self.size >= self.capacity

    def _weight(self, Y):
        return 1.0 / (1.0 + float(np.dot(Y, Y)))

    def _add(self, idx, Y, U, t, sign=1.0):
        w = sign * self._weight(Y)
        self.sigma_Y += w * float(np.dot(Y, Y))
        self.sigma_U += w * float(np.dot(Y, U))
        self.S += w * np.outer(Y, Y)
        if sign > 0:
            self.Ys[idx] = Y
            self.Us[idx] = U
            self.ts[idx] = t

    def recompute(self):
        """Rebuild the accumulators from the raw samples."""
        Ys = self.Ys[: self.size]
        Us = self.Us[: self.size]
        w = 1.0 / (1.0 + np.einsum("ij,ij->i", Ys, Ys))
        self.sigma_Y = float(np.sum(w * np.einsum("ij,ij->i", Ys, Ys)))
        self.sigma_U = float(np.sum(w * np.einsum("ij,ij->i", Ys, Us)))
        self.S = np.einsum("i,ij,ik->jk", w, Ys, Ys)

    def eigmin(self) -> float:
        return eigmin_2x2(self.S[0, 0], self.S[0, 1], self.S[1, 1])

    def cond(self) -> float:
        half_tr = 0.5 * (self.S[0, 0] + self.S[1, 1])
        disc = math.sqrt(
            0.25 * (self.S[0, 0] - self.S[1, 1]) ** 2 + self.S[0, 1] ** 2
        )
        lmin = half_tr - disc
        lmax = half_tr + disc
        if lmin <= 0.0:
            return math.inf
        return lmax / lmin

    def clear(self):
        self.size = 0
        self.sigma_Y = 0.0
        self.sigma_U = 0.0
        self.S = np.zeros((2, 2))
        self._inserts = 0


def stack_insert(stack: HistoryStack, Y: np.ndarray, U: np.ndarray, t: float) -> bool:
    """Insert a sample; on a full stack, replace the sample whose substitution
    maximizes the minimum eigenvalue of the 2x2 normalized sum, rejecting the
    sample if no substitution improves it."""
    stack._inserts += 1
    if stack._inserts % HistoryStack.RECHECK_EVERY == 0:
        stack.recompute()
    if not stack.full:
        stack._add(stack.size, Y, U, t)
        stack.size += 1
        return True

    Ys = stack.Ys
    w_old = 1.0 / (1.0 + np.einsum("ij,ij->i", Ys, Ys))
    w_new = stack._weight(Y)
    base = stack.S + w_new * np.outer(Y, Y)
    # candidate S matrices, one per removed slot
    a = base[0, 0] - w_old * Ys[:, 0] * Ys[:, 0]
    b = base[0, 1] - w_old * Ys[:, 0] * Ys[:, 1]
    c = base[1, 1] - w_old * Ys[:, 1] * Ys[:, 1]
    half_tr = 0.5 * (a + c)
    lmins = half_tr - np.sqrt(0.25 * (a - c) ** 2 + b * b)
    idx = int(np.argmax(lmins))
    current = stack.eigmin()
    if lmins[idx] <= current + 1e-15:
        return False
    stack._add(idx, stack.Ys[idx].copy(), stack.Us[idx].copy(), stack.ts[idx], sign=-1.0)
    stack._add(idx, Y, U, t)
    return True


def solve_r_kh(stack: HistoryStack, sigma_lb: float) -> float:
    """Least-squares key-to-feature distance from the normalized stack sums."""
    if stack.sigma_Y <= sigma_lb:
        raise InsufficientExcitationError(
            f"sigma_Y = {stack.sigma_Y:.3e} <= {sigma_lb:.3e}"
        )
    return stack.sigma_U / stack.sigma_Y


def _smoothstep(s: float) -> float:
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    return s * s * (3.0 - 2.0 * s)


def smooth_project_rate(theta, rate, lo, hi, layer=0.1):
    """C1 projection of the update rate onto the admissible box: outward
    components fade smoothly to zero across a boundary layer of fixed width."""
    out = np.array(rate, dtype=float)
    for j in range(len(out)):
        w = layer
        if out[j] > 0.0 and theta[j] > hi[j] - w:
            out[j] *= _smoothstep((hi[j] - theta[j]) / w)
        elif out[j] < 0.0 and theta[j] < lo[j] + w:
            out[j] *= _smoothstep((theta[j] - lo[j]) / w)
    return out


@dataclass
class FeatureTrack:
    """Full per-feature observer state: key frame, estimate, stack, switching."""

    fid: int
    params: ObserverParams
    key: KeyFrame | None = None
    theta_hat: np.ndarray = field(default_factory=lambda: np.array([40.0, 0.01, 40.0]))
    stack: HistoryStack = None
    sigma: str = "u"
    t_a: float | None = None          # acquisition time of the current window
    active_duration: float = 0.0      # accumulated time with sigma = a
    last_lambda_min: float = 0.0
    last_residual: float = 0.0
    last_u_bh: np.ndarray | None = None
    # windowed construction state: (t, psi, Xi) samples covering one window
    _hist: deque = field(default_factory=deque)
    # filtered construction state
    _psi_e: np.ndarray | None = None
    _xi_f: np.ndarray | None = None

    def __post_init__(self):
        if self.stack is None:
            self.stack = HistoryStack(self.params.capacity)

    # -- lifecycle ---------------------------------------------------------

    def stamp_key(self, t: float, u_bh: np.ndarray, p: np.ndarray):
        """Start (or restart) the key frame at the current camera pose. The
        key coincides with the camera, so u_kh equals the current bearing and
        r_kh equals the current deputy-to-feature distance."""
        self.key = KeyFrame(t_key=t, u_kh=np.array(u_bh, dtype=float), p_key=np.array(p))
        self.theta_hat[1] = self.params.r_lower
        self.theta_hat[2] = float(np.clip(self.theta_hat[0], self.params.r_min, self.params.r_max))
        self.reset_window(t)

    def reset_window(self, t: float):
        """Purge the history stack and restart the sample machinery."""
        self.stack.clear()
        self.t_a = t
        self.active_duration = 0.0
        self.sigma = "u"
        self._hist.clear()
        self._psi_e = None
        self._xi_f = None

    # -- sample constructions ------------------------------------------------

    def _windowed_sample(self):
        hist = self._hist
        if len(hist) < 2:
            return None
        t_now, psi_now, _ = hist[-1]
        t_left = t_now - self.params.varsigma
        # ramp-in branch: window extends back to acquisition
        if hist[0][0] >= t_left - 1e-12:
            left = 0
        else:
            left = 0
            for j in range(len(hist) - 1):
                if hist[j][0] <= t_left + 1e-12:
                    left = j
                else:
                    break
        Yv = psi_now - hist[left][1]
        U = np.zeros(2)
        for j in range(left, len(hist) - 1):
            dt_j = hist[j + 1][0] - hist[j][0]
            U += 0.5 * dt_j * (hist[j][2] + hist[j + 1][2])
        # drop entries no longer needed for the next window
        while len(hist) > 2 and hist[1][0] <= t_now + 1e-12 - self.params.varsigma:
            hist.popleft()
        return Yv, U

    def _filtered_sample(self, psi_now, xi_now, dt):
        lam = self.params.lam
        if self._psi_e is None:
            self._psi_e = np.array(psi_now)
            self._xi_f = np.zeros(2)
            return None
        decay = math.exp(-lam * dt)
        self._psi_e = decay * self._psi_e + (1.0 - decay) * psi_now
        self._xi_f = decay * self._xi_f + (1.0 - decay) * xi_now
        Yv = lam * (psi_now - self._psi_e)
        U = self._xi_f.copy()
        return Yv, U

    # -- per-step update -----------------------------------------------------

    def step(self, u_bh, u_bk, v, t, dt, in_scene):
        """Advance the track one step. ``u_bk`` may be None while the camera
        is too close to the key frame for the bearing to be defined."""
        p = self.params
        self.last_u_bh = u_bh

        measurable = in_scene and u_bk is not None
        lmin = ytY_eigmin(u_bh, u_bk) if measurable else 0.0
        self.last_lambda_min = lmin

        if measurable and lmin > p.lambda_a:
            Y = regressor_Y(u_bh, u_bk)
            ps, self.last_residual = psi(Y, self.key.u_kh)
            xi = np.array([float(np.dot(u_bh, v)), float(np.dot(u_bk, v))])
            if p.regressor == "windowed":
                self._hist.append((t, ps, xi))
                sample = self._windowed_sample()
            else:
                sample = self._filtered_sample(ps, xi, dt)
            settled = (t - self.key.t_key) >= p.key_burn_in
            if sample is not None and settled and lmin > p.lambda_insert:
                stack_insert(self.stack, sample[0], sample[1], t)
            rank_ok = (t - self.t_a) >= p.rank_start
            excited = self.stack.sigma_Y > p.sigma_lb
            active = rank_ok and excited
        else:
            Y = None
            active = False
            # a gap in measurability invalidates any partially built window:
            # pairing psi across the gap would integrate the regressor over
            # an interval far longer than the nominal window
            self._hist.clear()
            self._psi_e = None
            self._xi_f = None

        self.sigma = "a" if active else "u"
        if not active:
            return

        mu = np.array([float(np.dot(u_bh, v)), float(np.dot(u_bk, v)), 0.0])
        if self.stack.eigmin() > p.stack_trust:
            r_kh_bar = solve_r_kh(self.stack, p.sigma_lb)
            # stacked regression system in all three distances
            sY = np.zeros((4, 3))
            sY[0:3, 0:2] = Y
            sY[3, 2] = 1.0
            sU = np.concatenate([self.key.u_kh * r_kh_bar, [r_kh_bar]])
            rate = mu + p.k_theta * (sY.T @ (sU - sY @ self.theta_hat))
        else:
            # before the stack is well conditioned the recalled distance is
            # unreliable; track with the kinematic feedforward alone
            rate = mu
        lo, hi = p.box()
        rate = smooth_project_rate(self.theta_hat, rate, lo, hi, p.proj_layer)
        self.theta_hat = np.clip(self.theta_hat + dt * rate, lo, hi)
        self.active_duration += dt

    # -- reporting -----------------------------------------------------------

    @property
    def r_bh_hat(self):
        return float(self.theta_hat[0])

    @property
    def r_bk_hat(self):
        return float(self.theta_hat[1])

    @property
    def r_kh_hat(self):
        return float(self.theta_hat[2])

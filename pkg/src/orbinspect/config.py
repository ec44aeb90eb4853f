"""Scenario configuration: physical constants, observer and controller knobs,
planner settings, and run controls, with defaults matching the reference
inspection scenario. Config files are flat ``key = value`` tables; CLI flags
override file values."""

from __future__ import annotations

import ast
import hashlib
import json
import math
from dataclasses import dataclass, field, fields, asdict

import numpy as np

__all__ = ["ScenarioConfig", "load_config"]


@dataclass
class ScenarioConfig:
    # physical constants
    m: float = 12.0
    n: float = 0.001027
    r_d: float = 5.0
    r_c: float = 10.0
    r_max: float = 800.0
    a_max: float = 0.1
    v_init: float = 0.3
    d: float = 50.0
    theta_a: float = math.pi
    theta_e: float = 0.0
    theta_s0: float = 0.0
    n_features: int = 99
    n_track: int = 5
    alpha_fov: float = math.pi / 3.0

    # observer knobs
    k_theta: float = 1.0
    capacity: int = 100
    varsigma: float = 0.05
    lam: float = 1.0
    lambda_a: float = 1e-3
    lambda_insert: float = 1e-3
    key_burn_in: float = 1.0
    sigma_lb: float = 1e-6
    stack_trust: float = 1e-9
    rank_start: float = 0.25
    r_lower: float = 0.01
    r_bh_hat0: float = 40.0
    r_bk_hat0: float = 0.01
    r_kh_hat0: float = 40.0
    regressor: str = "windowed"

    # controller penalties
    Q_diag: tuple = (0.1, 0.1, 0.1, 10.0, 10.0, 10.0)
    R_diag: tuple = (0.1, 0.1, 0.1)
    Qf_diag: tuple = (0.1, 0.1, 0.1, 10.0, 10.0, 10.0)
    gamma_c: float = 1.0
    gamma_phi: float = 0.1
    L_h: float = 0.01
    alpha_gain: float = 0.3
    # "auto" evaluates the worst-case endpoint bound each segment; a number
    # pins the initial-error bound directly
    epsilon_r: float | str = 50.0

    # planner knobs
    k_clusters: int = 1
    r_gh: float = 25.0
    segment_len: float = 50.0
    delta: float = 0.1

    # run controls
    dt: float = 0.05
    duration: float = 1000.0
    seed: int = 0
    barrier: bool = True
    stop_on_full_coverage: bool = False

    @property
    def r_min(self) -> float:
        return self.r_d + self.r_c

    def Q(self):
        return np.diag(self.Q_diag)

    def R(self):
        return np.diag(self.R_diag)

    def Qf(self):
        return np.diag(self.Qf_diag)

    def initial_state(self):
        """Initial relative position/velocity from the spherical placement
        (d, theta_a, theta_e); velocity along the same direction."""
        p = np.array(
            [
                self.d * math.cos(self.theta_a) * math.cos(self.theta_e),
                self.d * math.sin(self.theta_a) * math.cos(self.theta_e),
                self.d * math.sin(self.theta_e),
            ]
        )
        v = self.v_init * p / np.linalg.norm(p)
        return p, v

    def validate(self):
        if self.m <= 0 or self.dt <= 0 or self.duration < 0:
            raise ValueError("m, dt must be positive; duration non-negative")
        if not (self.r_min < self.r_gh < self.r_max):
            raise ValueError("goal standoff must lie inside the safe annulus")
        if self.regressor not in ("windowed", "filtered"):
            raise ValueError("regressor must be 'windowed' or 'filtered'")
        if isinstance(self.epsilon_r, str) and self.epsilon_r != "auto":
            raise ValueError("epsilon_r must be a number or 'auto'")
        return self

    def to_dict(self):
        return asdict(self)

    def content_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()


def _parse_value(raw: str):
    raw = raw.strip()
    lowered = raw.lower()
    if lowered in ("true", "on", "yes"):
        return True
    if lowered in ("false", "off", "no"):
        return False
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def load_config(path: str | None = None, overrides: dict | None = None) -> ScenarioConfig:
    """Build a config from an optional key-value file plus overrides."""
    values = {}
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = line.split("=", 1)
                values[key.strip()] = _parse_value(raw)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key in ("Q_diag", "R_diag", "Qf_diag"):
        if key in values:
            values[key] = tuple(float(v) for v in values[key])
    return ScenarioConfig(**values).validate()

"""Closed-loop scenario engine.

Step order: sense (visibility, inspection, tracked set) -> observe (per-track
distance estimation) -> schedule (chain-link switching) -> plan (goal and
Riccati refresh at segment boundaries) -> control (barrier-corrected LQR) ->
integrate (relative dynamics and sun angle).

Physics is seed-independent; the seed only drives the k-means initialization.
All artifacts are written with stable float formatting so identical
(config, seed) pairs produce byte-identical CSVs.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .controller import (
    SafetyEnvelope,
    SafetyFault,
    barrier_phi,
    constraint_h,
    epsilon_r_bound,
    lagrange_multiplier,
    control,
    solve_riccati,
)
from .dynamics import HillState, PlantMatrices, SunState, step_rk4, sun_step, sun_unit_vector
from .observer import FeatureTrack, ObserverParams
from .planner import next_goal
from .scene import (
    CameraModel,
    FeatureField,
    fov_mask,
    illuminated_mask,
    select_tracked,
    update_inspection,
)
from .scheduler import (
    ChainState,
    DwellRejected,
    TrackTimeline,
    certify_loss_bound,
    estimate_goal_relative,
    min_dwell,
    switch_feature,
)

__all__ = ["run_scenario", "RunResult", "OBSERVER_COLUMNS", "STEP_COLUMNS"]

OBSERVER_COLUMNS = (
    "t", "feature_id", "sigma", "r_bh", "r_bh_hat", "r_bk", "r_bk_hat",
    "r_kh", "r_kh_hat", "lambda_min_sigma_Y", "cond_sigma_Y",
)

STEP_COLUMNS = (
    "t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "p_bh_norm",
    "u_x", "u_y", "u_z", "lambda_hat", "phi", "h", "h_r", "xPx",
    "p_gb_err", "inspected_count", "active_feature", "cond_active",
    "sigma_Y_active",
)


class _Trace:
    """Append-only float table accumulated in fixed-size chunks."""

    def __init__(self, ncols, chunk=65536):
        self.ncols = ncols
        self.chunk = chunk
        self._chunks = []
        self._buf = np.empty((chunk, ncols))
        self._i = 0

    def append(self, row):
        if self._i == self.chunk:
            self._chunks.append(self._buf)
            self._buf = np.empty((self.chunk, self.ncols))
            self._i = 0
        self._buf[self._i] = row
        self._i += 1

    def array(self):
        parts = self._chunks + [self._buf[: self._i]]
        return np.concatenate(parts, axis=0) if parts else np.empty((0, self.ncols))


@dataclass
class RunResult:
    config: ScenarioConfig
    steps: np.ndarray           # columns STEP_COLUMNS
    observer: np.ndarray        # columns OBSERVER_COLUMNS
    switches: list
    goals: list
    fault: str | None
    koz_violation: bool
    kiz_violation: bool
    inspected_final: int
    full_coverage_time: float | None
    wall_time: float
    out_dir: str | None = None

    def column(self, name):
        return self.steps[:, STEP_COLUMNS.index(name)]

    def observer_column(self, name):
        return self.observer[:, OBSERVER_COLUMNS.index(name)]


def _unit(v):
    return v / np.linalg.norm(v)


def run_scenario(cfg: ScenarioConfig, out_dir: str | None = None) -> RunResult:
    cfg.validate()
    t_start_wall = time.perf_counter()

    plant = PlantMatrices(m=cfg.m, n=cfg.n)
    p0, v0 = cfg.initial_state()
    state = HillState(p=p0, v=v0, t=0.0)
    sun = SunState(theta_s=cfg.theta_s0, n=cfg.n)
    ffield = FeatureField.on_sphere(cfg.n_features, cfg.r_c)
    cam = CameraModel(intrinsic=np.eye(3), alpha_fov=cfg.alpha_fov, r_max=cfg.r_max)

    obs_params = ObserverParams(
        k_theta=cfg.k_theta,
        lam=cfg.lam,
        lambda_a=cfg.lambda_a,
        lambda_insert=cfg.lambda_insert,
        key_burn_in=cfg.key_burn_in,
        sigma_lb=cfg.sigma_lb,
        stack_trust=cfg.stack_trust,
        capacity=cfg.capacity,
        varsigma=cfg.varsigma,
        rank_start=cfg.rank_start,
        r_min=cfg.r_min,
        r_max=cfg.r_max,
        r_lower=cfg.r_lower,
        regressor=cfg.regressor,
    )
    lo, hi = obs_params.box()
    theta_bar_box = float(np.linalg.norm(hi - lo))
    beta = cfg.k_theta * cfg.lambda_a

    Q, R, Qf = cfg.Q(), cfg.R(), cfg.Qf()
    A, B = plant.A, plant.B

    tracks: dict[int, FeatureTrack] = {}
    timelines: dict[int, TrackTimeline] = {}
    chain = ChainState(delta=cfg.delta)
    tracked: list[int] = []

    goal = None
    riccati = None
    env = None
    h0 = 0.0
    n_c = None
    seg_index = 0

    step_trace = _Trace(len(STEP_COLUMNS))
    obs_trace = _Trace(len(OBSERVER_COLUMNS))
    switches = []
    goals = []
    fault = None
    koz_violation = False
    kiz_violation = False
    full_coverage_time = None

    dt = cfg.dt
    n_steps = int(round(cfg.duration / dt))
    rekey_grace = 100 * dt

    def certify_active_link(t, reason):
        """Close the active chain link; accept its bound only when it improves
        on the last accepted bound by the margin."""
        fid = chain.active_fid
        if fid is None or fid not in timelines:
            return
        tl = timelines[fid]
        bound = certify_loss_bound(tl, beta)
        prev = chain.last_bound
        accepted = prev is None or bound <= prev - chain.delta
        if accepted:
            chain.bounds.append(bound)
        try:
            need = 0.0 if prev is None else min_dwell(prev, tl.theta_bar_a, chain.delta, beta)
        except DwellRejected:
            need = math.inf
        switches.append(
            {
                "t": t,
                "old_id": fid,
                "new_id": None,
                "bound": bound,
                "required_dwell": need,
                "actual_dwell": tl.active_duration,
                "accepted": accepted,
                "reason": reason,
            }
        )

    def active_dwell_met():
        fid = chain.active_fid
        if fid is None or chain.last_bound is None:
            return True
        tl = timelines.get(fid)
        if tl is None:
            return True
        try:
            need = min_dwell(chain.last_bound, tl.theta_bar_a, chain.delta, beta)
        except DwellRejected:
            return False
        return tl.active_duration >= need

    for step in range(n_steps):
        t = step * dt
        p, v = state.p, state.v
        rho_true = float(np.linalg.norm(p))

        # ---- sense -------------------------------------------------------
        sun_u = sun_unit_vector(sun)
        boresight = -p / rho_true
        lit = illuminated_mask(ffield.normals, sun_u)
        fov = fov_mask(ffield.positions, p, boresight, cam, cfg.r_min)
        # the planner targets points that still needed inspection as of this
        # step's start; capture before the inspection flags update
        uninspected_before = ~ffield.inspected
        update_inspection(ffield, lit, fov, t)
        inspected_count = int(ffield.inspected.sum())
        if full_coverage_time is None and inspected_count == cfg.n_features:
            full_coverage_time = t
            if cfg.stop_on_full_coverage:
                pass  # finish this step so the final row is recorded
        visible = lit & fov
        candidate_ids = ffield.ids[visible]
        rel = ffield.positions[visible] - p
        ang = np.arccos(
            np.clip((rel @ boresight) / np.linalg.norm(rel, axis=1), -1.0, 1.0)
        )
        axis_angles = dict(zip(candidate_ids.tolist(), ang.tolist()))
        tracked = select_tracked(candidate_ids, axis_angles, tracked, cfg.n_track)

        # ---- observe -----------------------------------------------------
        lost = [
            fid for fid, tl in timelines.items()
            if tl.t_u is None and fid not in tracked
        ]
        for fid in lost:
            timelines[fid].t_u = t
            certify_loss_bound(timelines[fid], beta)

        for fid in tracked:
            f_pos = ffield.positions[fid - 1]
            u_bh = _unit(p - f_pos)
            if fid not in tracks:
                tr = FeatureTrack(fid=fid, params=obs_params)
                inherit = (
                    tracks[chain.active_fid].r_bh_hat
                    if chain.active_fid in tracks
                    else cfg.r_bh_hat0
                )
                tr.theta_hat = np.array([inherit, cfg.r_bk_hat0, cfg.r_kh_hat0])
                tr.stamp_key(t, u_bh, p)
                tracks[fid] = tr
                timelines[fid] = TrackTimeline(fid=fid, t_a=t, theta_bar_a=theta_bar_box)
            tr = tracks[fid]
            if timelines[fid].t_u is not None:
                # re-acquisition starts a fresh timeline
                timelines[fid] = TrackTimeline(fid=fid, t_a=t, theta_bar_a=theta_bar_box)
                tr.reset_window(t)
            d_key = p - tr.key.p_key
            r_bk_true = float(np.linalg.norm(d_key))
            if r_bk_true >= cfg.r_lower:
                u_bk = d_key / r_bk_true
            else:
                u_bk = None
                if t - tr.key.t_key > rekey_grace:
                    tr.stamp_key(t, u_bh, p)
                    timelines[fid] = TrackTimeline(fid=fid, t_a=t, theta_bar_a=theta_bar_box)
                    r_bk_true = 0.0
            tr.step(u_bh, u_bk, v, t, dt, in_scene=True)
            timelines[fid].active_duration = tr.active_duration

            r_bh_true = float(np.linalg.norm(p - f_pos))
            r_kh_true = float(np.linalg.norm(tr.key.p_key - f_pos))
            obs_trace.append(
                (
                    t, fid, 1.0 if tr.sigma == "a" else 0.0,
                    r_bh_true, tr.r_bh_hat, r_bk_true, tr.r_bk_hat,
                    r_kh_true, tr.r_kh_hat, tr.stack.eigmin(),
                    tr.stack.cond() if len(tr.stack) else math.inf,
                )
            )

        # ---- schedule ----------------------------------------------------
        # hand off when the anchor leaves the tracked set or stops estimating
        # (e.g. head-on motion collapses its triangulation geometry)
        active_ok = (
            chain.active_fid is not None
            and chain.active_fid in tracked
            and tracks[chain.active_fid].sigma == "a"
        )
        if not active_ok:
            candidates = [fid for fid in tracked if tracks[fid].sigma == "a"]
            if not candidates and chain.active_fid is None:
                candidates = list(tracked)
            new_fid = switch_feature(chain, candidates, timelines, beta)
            if new_fid is None:
                # no dwell-qualified candidate: a live estimate still beats a
                # stale frozen one, so hand off uncertified to the feature
                # with the longest active duration (its link will only enter
                # the certified chain if it ends up improving the bound)
                live = [
                    fid for fid in candidates
                    if fid != chain.active_fid and fid in timelines
                ]
                if live:
                    new_fid = max(
                        live, key=lambda f: (timelines[f].active_duration, -f)
                    )
            if new_fid is not None and new_fid != chain.active_fid:
                old = chain.active_fid
                if old is not None:
                    certify_active_link(t, "feature_lost")
                chain.active_fid = new_fid
                switches.append(
                    {
                        "t": t, "old_id": old, "new_id": new_fid,
                        "bound": None, "required_dwell": None,
                        "actual_dwell": None, "accepted": None,
                        "reason": "switch",
                    }
                )

        # ---- plan --------------------------------------------------------
        # Segment boundaries fire on the segment clock. A boundary that would
        # move the goal (uninspected illuminated points exist) additionally
        # requires the active chain link to have met its dwell time; until
        # then the segment is extended. A boundary with nothing new to
        # inspect holds the goal and merely restarts the horizon, leaving the
        # history stacks (and hence the dwell bookkeeping) intact.
        at_clock = goal is None or t >= goal.t_f - 0.5 * dt
        if at_clock:
            mask = lit & uninspected_before
            replan = goal is None or (mask.any() and active_dwell_met())
            hold = not mask.any() and goal is not None
            if replan or hold:
                if replan and goal is not None:
                    certify_active_link(t, "segment_end")
                seed_seg = cfg.seed * 100003 + seg_index
                goal = next_goal(
                    ffield.positions, mask, p, t, cfg.k_clusters, cfg.r_gh,
                    cfg.segment_len, seed_seg, prev_goal=goal,
                )
                goals.append(
                    {
                        "t": t,
                        "u_gh": tuple(goal.u_gh),
                        "status": goal.status,
                        "cluster_sizes": goal.cluster_sizes,
                        "inspected": inspected_count,
                    }
                )
                # outward surface normal at the centroid of the tracked
                # feature patch, frozen per segment
                if tracked:
                    centroid = np.mean(
                        [ffield.positions[fid - 1] for fid in tracked], axis=0
                    )
                    n_c = _unit(centroid)
                elif n_c is None:
                    n_c = boresight.copy()
                riccati = solve_riccati(
                    Q, R, Qf, cfg.gamma_c, n_c, A, B, cfg.segment_len, dt
                )
                if replan:
                    # a new goal purges every stack; estimates and key frames
                    # persist
                    for fid, tr in tracks.items():
                        tr.reset_window(t)
                        if timelines.get(fid) is not None and timelines[fid].t_u is None:
                            timelines[fid] = TrackTimeline(
                                fid=fid, t_a=t, theta_bar_a=theta_bar_box
                            )
                if isinstance(cfg.epsilon_r, str):  # "auto"
                    active_tr = tracks.get(chain.active_fid)
                    if active_tr is not None and chain.p_gb_hat is not None:
                        eps = epsilon_r_bound(
                            active_tr.key.u_kh, goal.p_gh, chain.p_gb_hat,
                            cfg.r_min, cfg.r_max,
                        )
                    else:
                        eps = theta_bar_box
                else:
                    eps = float(cfg.epsilon_r)
                env = SafetyEnvelope(
                    r_min=cfg.r_min, r_max=cfg.r_max, a_max=cfg.a_max,
                    gamma_phi=cfg.gamma_phi, L_h=cfg.L_h, epsilon_r=eps,
                    beta=beta, alpha_gain=cfg.alpha_gain,
                )
                h0, _ = constraint_h(np.zeros(6), goal.p_gh, env)
                # the error-bound decay clock restarts only when the goal
                # actually moves; a held goal keeps shrinking the margin
                if replan:
                    margin_t0 = t
                seg_index += 1

        # ---- goal-relative estimate ---------------------------------------
        active = chain.active_fid
        if active is not None and active in tracked:
            tr = tracks[active]
            anchor = goal.p_gh - ffield.positions[active - 1]
            u_bh_act = _unit(p - ffield.positions[active - 1])
            chain.p_gb_hat = estimate_goal_relative(anchor, u_bh_act, tr.r_bh_hat)
            chain.frozen_r_bh = tr.r_bh_hat
            chain.frozen_u_bh = u_bh_act
            chain.frozen_anchor = anchor
        elif chain.frozen_r_bh is not None:
            fid = active
            if fid is not None and visible[fid - 1]:
                # feature still observable: frozen distance, live bearing
                anchor = goal.p_gh - ffield.positions[fid - 1]
                u_bh_act = _unit(p - ffield.positions[fid - 1])
                chain.p_gb_hat = estimate_goal_relative(
                    anchor, u_bh_act, chain.frozen_r_bh
                )
            # else: hold the last estimate outright
        if chain.p_gb_hat is None:
            fault = "no feature available for goal-relative estimation"
            break

        # ---- control -------------------------------------------------------
        x_hat = np.concatenate([chain.p_gb_hat, -v])
        t_seg = t - goal.t_seg_start
        tau_m = t - margin_t0
        Pmat = riccati.at(t_seg)
        lam_hat = 0.0
        phi_val = 0.0
        h_r_val = math.nan
        try:
            if cfg.barrier:
                phi_val, grad_x, grad_t = barrier_phi(x_hat, tau_m, goal.p_gh, env, h0)
                h_hat, _ = constraint_h(x_hat, goal.p_gh, env)
                h_r_val = h_hat - env.L_h * env.M(tau_m)
                lam_hat, _ = lagrange_multiplier(
                    x_hat, Pmat, A, B, R, env, grad_x, grad_t, h_r_val
                )
                u = control(x_hat, Pmat, lam_hat, grad_x, R, B)
            else:
                u = control(x_hat, Pmat, 0.0, None, R, B)
        except SafetyFault as exc:
            fault = f"safety fault at t={t:.2f}: {exc}"
            break

        # true-state safety bookkeeping
        x_true = np.concatenate([goal.p_gh - p, -v])
        h_true, outside = constraint_h(x_true, goal.p_gh, env)
        if rho_true < cfg.r_min:
            koz_violation = True
        if rho_true > cfg.r_max:
            kiz_violation = True
        if outside and cfg.barrier:
            fault = f"safe annulus violated at t={t:.2f} (|p_bh|={rho_true:.3f})"
        if not np.isfinite(u).all():
            fault = f"non-finite control at t={t:.2f}"

        p_gb_err = float(np.linalg.norm((goal.p_gh - p) - chain.p_gb_hat))
        active_tr = tracks.get(chain.active_fid)
        cond_active = (
            active_tr.stack.cond()
            if active_tr is not None and len(active_tr.stack)
            else math.inf
        )
        sigma_y_active = active_tr.stack.sigma_Y if active_tr is not None else 0.0
        step_trace.append(
            (
                t, p[0], p[1], p[2], v[0], v[1], v[2], rho_true,
                u[0], u[1], u[2], lam_hat, phi_val, h_true, h_r_val,
                float(x_hat @ Pmat @ x_hat), p_gb_err, inspected_count,
                float(chain.active_fid or -1), cond_active, sigma_y_active,
            )
        )

        if fault is not None:
            break
        if cfg.stop_on_full_coverage and full_coverage_time is not None:
            break

        # ---- integrate -----------------------------------------------------
        # the plant input acts on the goal-relative state; the physical thrust
        # is its negation in the deputy-relative frame
        state = step_rk4(state, -u, plant, dt)
        sun = sun_step(sun, dt)
        if not np.isfinite(state.p).all():
            fault = f"non-finite state at t={t + dt:.2f}"
            break

    result = RunResult(
        config=cfg,
        steps=step_trace.array(),
        observer=obs_trace.array(),
        switches=switches,
        goals=goals,
        fault=fault,
        koz_violation=koz_violation,
        kiz_violation=kiz_violation,
        inspected_final=int(ffield.inspected.sum()),
        full_coverage_time=full_coverage_time,
        wall_time=time.perf_counter() - t_start_wall,
    )
    if out_dir is not None:
        write_artifacts(result, ffield, out_dir)
        result.out_dir = out_dir
    return result


# ---------------------------------------------------------------------------
# artifact emission


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.12g}"
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write("# schema v1\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_artifacts(result: RunResult, ffield: FeatureField, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, header, rows):
        path = os.path.join(out_dir, name)
        _write_csv(path, header, rows)
        written.append(name)

    emit("controller.csv", STEP_COLUMNS, (tuple(r) for r in result.steps))
    emit("observer.csv", OBSERVER_COLUMNS, (tuple(r) for r in result.observer))
    emit(
        "switches.csv",
        ("t", "old_id", "new_id", "bound", "required_dwell", "actual_dwell",
         "accepted", "reason"),
        (
            (
                s["t"], s["old_id"] if s["old_id"] is not None else -1,
                s["new_id"] if s["new_id"] is not None else -1,
                s["bound"] if s["bound"] is not None else math.nan,
                s["required_dwell"] if s["required_dwell"] is not None else math.nan,
                s["actual_dwell"] if s["actual_dwell"] is not None else math.nan,
                int(bool(s["accepted"])), s["reason"],
            )
            for s in result.switches
        ),
    )
    emit(
        "goals.csv",
        ("t", "u_gh_x", "u_gh_y", "u_gh_z", "status", "inspected"),
        (
            (g["t"], g["u_gh"][0], g["u_gh"][1], g["u_gh"][2], g["status"],
             g["inspected"])
            for g in result.goals
        ),
    )
    emit(
        "features.csv",
        ("id", "x", "y", "z", "inspected", "first_inspected_time"),
        (
            (
                int(ffield.ids[i]), ffield.positions[i, 0], ffield.positions[i, 1],
                ffield.positions[i, 2], int(ffield.inspected[i]),
                float(ffield.first_inspected[i]),
            )
            for i in range(len(ffield.positions))
        ),
    )

    manifest = {
        "config_hash": result.config.content_hash(),
        "config": result.config.to_dict(),
        "fault": result.fault,
        "koz_violation": result.koz_violation,
        "kiz_violation": result.kiz_violation,
        "inspected_final": result.inspected_final,
        "files": {},
    }
    for name in written:
        with open(os.path.join(out_dir, name), "rb") as fh:
            manifest["files"][name] = hashlib.sha256(fh.read()).hexdigest()
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")

"""End-to-end acceptance suite: one test per criterion, each printing a
single summary line with the measured values and its pinned tolerances.

The closed-loop runs are shared session fixtures (see conftest.py); the
default scenario is the stock ScenarioConfig."""

import math

import numpy as np
import pytest

from orbinspect.config import ScenarioConfig
from orbinspect.controller import (
    SafetyFault,
    barrier_phi,
    constraint_h,
    robustified_h,
    solve_riccati,
)
from orbinspect.dynamics import PlantMatrices
from orbinspect.observer import HistoryStack, solve_r_kh, stack_insert
from orbinspect.scheduler import DwellRejected, min_dwell
from orbinspect.simulate import run_scenario

BETA = 1e-3          # observer decay rate: k_theta * lambda_a
SIGMA_FLOOR = 1e-6   # excitation gate used when classifying active windows


def report(name, ok, detail):
    print(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


# ---------------------------------------------------------------------------


def test_criterion_01_safety(default_run, long_run, unsafe_run):
    """Barrier keeps the deputy outside 15 m; the unfiltered law does not."""
    m1 = default_run.column("p_bh_norm").min()
    m3 = long_run.column("p_bh_norm").min()
    m0 = unsafe_run.column("p_bh_norm").min()
    ok = (
        default_run.fault is None and long_run.fault is None
        and m1 > 15.0 and m3 > 15.0 and m0 < 15.0
        and default_run.wall_time < 60.0
    )
    report(
        "criterion 1 (safety)", ok,
        f"min|p_bh|: barrier-on 1000s={m1:.3f} m, 3000s={m3:.3f} m (> 15 m); "
        f"barrier-off={m0:.3f} m (< 15 m); wall={default_run.wall_time:.1f}s (< 60 s)",
    )


def _active_stretches(t, sigma):
    idx = np.where(sigma > 0.5)[0]
    if len(idx) == 0:
        return []
    breaks = np.where(np.diff(t[idx]) > 0.075)[0]
    return np.split(idx, breaks + 1)


def test_criterion_02_observer_convergence(default_run):
    """Every gated feature's three distance errors end each active window
    below 1%, and each window respects the exponential decay bound."""
    res = default_run
    t = res.observer_column("t")
    fid = res.observer_column("feature_id").astype(int)
    sigma = res.observer_column("sigma")
    lmin = res.observer_column("lambda_min_sigma_Y")
    true = {k: res.observer_column(k) for k in ("r_bh", "r_bk", "r_kh")}
    hat = {k: res.observer_column(k + "_hat") for k in ("r_bh", "r_bk", "r_kh")}
    theta_err = np.sqrt(sum((hat[k] - true[k]) ** 2 for k in true))

    gated, conv_fail, decay_fail, n_windows = 0, [], 0, 0
    for f in np.unique(fid):
        m = fid == f
        if not ((sigma[m] > 0.5) & (lmin[m] > SIGMA_FLOOR)).any():
            continue  # never reached the excitation gate
        gated += 1
        worst = 0.0
        for st in _active_stretches(t[m], sigma[m]):
            if not (lmin[m][st] > SIGMA_FLOOR).any():
                continue
            j = st[-1]
            for k in true:
                denom = max(true[k][m][j], 1e-9)
                worst = max(worst, abs(hat[k][m][j] - true[k][m][j]) / denom)
            # per-interval decay bound with 5% discretization slack
            n_windows += 1
            e0, e1 = theta_err[m][st[0]], theta_err[m][st[-1]]
            dtau = t[m][st[-1]] - t[m][st[0]]
            if e1 > e0 * math.exp(-BETA * dtau) * 1.05:
                decay_fail += 1
        if worst >= 0.01:
            conv_fail.append((int(f), worst))
    ok = gated > 0 and not conv_fail and decay_fail == 0
    report(
        "criterion 2 (observer convergence)", ok,
        f"{gated} gated features all < 1% at window ends (violations: {conv_fail}); "
        f"decay bound holds on {n_windows - decay_fail}/{n_windows} active windows",
    )


def test_criterion_03_goal_error_decay(default_run):
    """Certified bounds shrink by delta per accepted link; the goal-relative
    estimate error is below 0.5 m by each segment end."""
    res = default_run
    bounds = [s["bound"] for s in res.switches if s.get("accepted")]
    chain_ok = len(bounds) >= 2 and all(
        bounds[i + 1] <= bounds[i] - 0.1 for i in range(len(bounds) - 1)
    )
    t = res.column("t")
    err = res.column("p_gb_err")
    seg_ends = [g["t"] for g in res.goals][1:] + [res.config.duration]
    end_errs = []
    for te in seg_ends:
        idx = min(np.searchsorted(t, te), len(t) - 1)
        end_errs.append(err[idx])
    worst = max(end_errs)
    ok = chain_ok and worst < 0.5
    report(
        "criterion 3 (goal-error decay)", ok,
        f"{len(bounds)} accepted links, bounds {['%.1f' % b for b in bounds]} "
        f"each improving by >= 0.1 m; worst segment-end error {worst:.4f} m (< 0.5 m)",
    )


def test_criterion_04_condition_number_trend(gamma_sweep):
    """Median regressor condition number is non-increasing in the
    orthogonality gain, within a 10% slack band."""
    meds = [s["median_cond"] for s in gamma_sweep]
    faults = [s["fault"] for s in gamma_sweep]
    ok = all(f is None for f in faults) and all(
        meds[i + 1] <= meds[i] * 1.10 for i in range(len(meds) - 1)
    )
    report(
        "criterion 4 (condition-number trend)", ok,
        "medians over gamma_c {0,5,10,15,20}: "
        + ", ".join(f"{m:.2f}" for m in meds)
        + " (each <= 1.10 x previous)",
    )


def test_criterion_05_dwell_formula():
    val = min_dwell(2.0, 4.0, 0.1, 0.001)
    ok_val = abs(val - 744.4) < 0.1
    # rejection exactly when the previous bound is within the margin
    rej_at, rej_above = False, False
    try:
        min_dwell(0.1, 4.0, 0.1, 0.001)
    except DwellRejected:
        rej_at = True
    try:
        min_dwell(0.1 + 1e-9, 4.0, 0.1, 0.001)
    except DwellRejected:
        rej_above = True
    ok = ok_val and rej_at and not rej_above
    report(
        "criterion 5 (dwell formula)", ok,
        f"min_dwell(2, 4, 0.1, 0.001) = {val:.4f} s (744.4 +/- 0.1); "
        f"rejects at bound<=delta: {rej_at}, accepts just above: {not rej_above}",
    )


def test_criterion_06_riccati():
    plant = PlantMatrices(m=12.0, n=0.001027)
    Q = np.diag([0.1, 0.1, 0.1, 10.0, 10.0, 10.0])
    R = np.diag([0.1, 0.1, 0.1])
    n_c = np.array([1.0, 0.0, 0.0])
    sol = solve_riccati(Q, R, Q, 1.0, n_c, plant.A, plant.B, 50.0, 0.002)
    terminal_exact = np.array_equal(sol.P[-1], Q)
    sym = np.abs(sol.P - np.swapaxes(sol.P, 1, 2)).max()
    BRB = plant.B @ np.linalg.solve(R, plant.B.T)
    dt = sol.grid[1] - sol.grid[0]
    rhs = lambda P: -plant.A.T @ P - P @ plant.A + P @ BRB @ P - sol.Q_bar
    resid = max(
        np.abs((sol.P[j + 1] - sol.P[j - 1]) / (2.0 * dt) - rhs(sol.P[j])).max()
        for j in range(1, len(sol.grid) - 1)
    )
    budget = 1e-6 * np.linalg.norm(sol.Q_bar)
    # decoupled analytic case
    sol0 = solve_riccati(Q, R, Q, 2.0, n_c, np.zeros((6, 6)), np.zeros((6, 3)),
                         10.0, 0.05)
    analytic = max(
        np.abs(sol0.P[j] - (Q + sol0.Q_bar * (10.0 - tt))).max()
        for j, tt in enumerate(sol0.grid)
    )
    ok = terminal_exact and sym < 1e-10 and resid < budget and analytic < 1e-12
    report(
        "criterion 6 (Riccati)", ok,
        f"terminal bit-exact: {terminal_exact}; symmetry {sym:.1e} (< 1e-10); "
        f"FD residual {resid:.2e} (< {budget:.2e}); analytic case {analytic:.1e} (< 1e-12)",
    )


def test_criterion_07_oracle_equivalence():
    rng = np.random.default_rng(42)
    # noiseless recall of the key-to-feature distance
    worst_rel = 0.0
    for r_true in (5.0, 59.3, 400.0):
        stack = HistoryStack(capacity=100)
        for i in range(150):
            Y = rng.normal(size=2) * 1e-3
            stack_insert(stack, Y, r_true * Y, float(i))
        worst_rel = max(worst_rel, abs(solve_r_kh(stack, 1e-12) - r_true) / r_true)
    # replacement policy against exhaustive search (small capacities)
    from test_observer import brute_force_insert

    mismatches = 0
    for capacity in (4, 10):
        stack = HistoryStack(capacity=capacity)
        ref = []
        for i in range(50):
            Y = rng.normal(size=2)
            U = rng.normal(size=2)
            if stack_insert(stack, Y, U, float(i)) != brute_force_insert(
                ref, Y, U, float(i), capacity
            ):
                mismatches += 1
    ok = worst_rel < 1e-9 and mismatches == 0
    report(
        "criterion 7 (oracle equivalence)", ok,
        f"noiseless recall relative error {worst_rel:.1e} (< 1e-9); "
        f"replacement decisions vs exhaustive search: {mismatches} mismatches",
    )


def test_criterion_08_barrier_gradients():
    from orbinspect.controller import SafetyEnvelope

    env = SafetyEnvelope(r_min=15.0, r_max=800.0, a_max=0.1, gamma_phi=0.1,
                         L_h=0.01, epsilon_r=25.0, beta=0.001)
    p_gh = np.array([25.0, 0.0, 0.0])
    h0, _ = constraint_h(np.zeros(6), p_gh, env)
    rng = np.random.default_rng(99)
    checked, worst = 0, 0.0
    while checked < 100:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        p_bh = d * rng.uniform(18.0, 700.0)
        v_bh = rng.normal(size=3) * 0.3
        x = np.concatenate([p_gh - p_bh, -v_bh])
        h, fault = constraint_h(x, p_gh, env)
        if fault or robustified_h(h, 0.0, env) <= 0.05:
            continue
        t = rng.uniform(0.0, 100.0)
        phi, grad_x, grad_t = barrier_phi(x, t, p_gh, env, h0)
        for j in range(6):
            step = 1e-5 * max(abs(x[j]), 1.0)
            xp, xm = x.copy(), x.copy()
            xp[j] += step
            xm[j] -= step
            fd = (barrier_phi(xp, t, p_gh, env, h0)[0]
                  - barrier_phi(xm, t, p_gh, env, h0)[0]) / (2.0 * step)
            worst = max(worst, abs(grad_x[j] - fd) / max(abs(grad_x[j]), abs(phi), 1e-8))
        fd_t = (barrier_phi(x, t + 1e-4, p_gh, env, h0)[0]
                - barrier_phi(x, t - 1e-4, p_gh, env, h0)[0]) / 2e-4
        worst = max(worst, abs(grad_t - fd_t) / max(abs(grad_t), abs(phi), 1e-8))
        checked += 1
    ok = worst < 1e-6
    report(
        "criterion 8 (barrier gradients)", ok,
        f"100 random safe states, worst relative deviation {worst:.2e} (< 1e-6)",
    )


def test_criterion_09_coverage(default_run, long_run, coverage_run):
    cov, cap = coverage_run
    n1000 = default_run.inspected_final
    n3000 = long_run.inspected_final
    ok = (
        0 < n1000 < 99
        and n3000 > n1000
        and cov.inspected_final == 99
        and cov.full_coverage_time is not None
        and cov.full_coverage_time <= cap
    )
    report(
        "criterion 9 (coverage)", ok,
        f"inspected {n1000}/99 at 1000 s, {n3000}/99 at 3000 s, "
        f"99/99 at {cov.full_coverage_time:.1f} s (cap {cap:.0f} s)",
    )


def test_criterion_10_determinism(tmp_path):
    cfg = ScenarioConfig(duration=300.0)
    run_scenario(cfg, out_dir=str(tmp_path / "a"))
    run_scenario(cfg, out_dir=str(tmp_path / "b"))
    names = ("controller.csv", "observer.csv", "switches.csv", "goals.csv",
             "features.csv")
    same = [
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        for n in names
    ]
    ok = all(same)
    report(
        "criterion 10 (determinism)", ok,
        f"{sum(same)}/{len(names)} CSV artifacts byte-identical across two runs",
    )

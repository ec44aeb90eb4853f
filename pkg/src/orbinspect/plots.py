"""Diagnostic plots rendered from the CSV artifacts of a run directory.

All figures are written as vector graphics (PDF)."""

from __future__ import annotations

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["load_run_csv", "render_all"]


def load_run_csv(path):
    """Read one artifact CSV into (header, float ndarray); non-numeric cells
    become nan."""
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = rows[0]
    data = np.full((len(rows) - 1, len(header)), np.nan)
    for i, row in enumerate(rows[1:]):
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                pass
    return header, data


def _col(header, data, name):
    return data[:, header.index(name)]


def render_all(run_dir: str, out_dir: str | None = None) -> list[str]:
    """Render the full diagnostic set; returns the list of files written."""
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    ch, cdat = load_run_csv(os.path.join(run_dir, "controller.csv"))
    oh, odat = load_run_csv(os.path.join(run_dir, "observer.csv"))
    written = []

    def save(fig, name):
        path = os.path.join(out_dir, name)
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    t = _col(ch, cdat, "t")

    # 1. x-y trajectory with the keep-out boundary
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(_col(ch, cdat, "p_x"), _col(ch, cdat, "p_y"), lw=0.8)
    ang = np.linspace(0.0, 2.0 * math.pi, 256)
    ax.plot(15.0 * np.cos(ang), 15.0 * np.sin(ang), "r--", label="keep-out (15 m)")
    ax.plot(0, 0, "k*", ms=10, label="chief")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend()
    ax.set_title("deputy trajectory (x-y)")
    save(fig, "trajectory_xy.pdf")

    # 2. range to chief vs time
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, _col(ch, cdat, "p_bh_norm"), lw=0.8)
    ax.axhline(15.0, color="r", ls="--", label="keep-out")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|p_bh| [m]")
    ax.legend()
    save(fig, "range.pdf")

    # 3. distance-estimate errors per tracked feature
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ot = _col(oh, odat, "t")
    err = np.abs(_col(oh, odat, "r_bh_hat") - _col(oh, odat, "r_bh"))
    fids = _col(oh, odat, "feature_id")
    for fid in np.unique(fids):
        m = fids == fid
        ax.plot(ot[m], err[m], lw=0.5)
    ax.set_yscale("log")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|r_bh error| [m]")
    save(fig, "observer_error.pdf")

    # 4. control effort and barrier multiplier
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    u = np.linalg.norm(
        np.stack([_col(ch, cdat, c) for c in ("u_x", "u_y", "u_z")], axis=1), axis=1
    )
    ax1.plot(t, u, lw=0.6)
    ax1.set_ylabel("|u| [N]")
    ax2.plot(t, _col(ch, cdat, "lambda_hat"), lw=0.6)
    ax2.set_ylabel("lambda")
    ax2.set_xlabel("t [s]")
    save(fig, "control.pdf")

    # 5. constraint margins
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, _col(ch, cdat, "h"), lw=0.6, label="h (true state)")
    ax.plot(t, _col(ch, cdat, "h_r"), lw=0.6, label="h_r (estimate)")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("t [s]")
    ax.legend()
    save(fig, "constraint.pdf")

    # 6. goal-relative estimate error
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, _col(ch, cdat, "p_gb_err"), lw=0.6)
    ax.set_yscale("log")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|p_gb error| [m]")
    save(fig, "goal_error.pdf")

    # 7. inspection progress
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, _col(ch, cdat, "inspected_count"), lw=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("inspected features")
    save(fig, "coverage.pdf")

    return written

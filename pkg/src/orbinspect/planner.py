"""Intermittent goal planner: cluster the uninspected illuminated features
with k-means and steer toward the cluster nearest the deputy at a fixed
standoff distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GoalSpec", "kmeans_cluster", "next_goal"]


@dataclass
class GoalSpec:
    u_gh: np.ndarray      # unit vector from chief toward the goal
    r_gh: float
    p_gh: np.ndarray
    t_seg_start: float
    t_f: float
    status: str = "ok"    # "ok" or "awaiting_illumination"
    cluster_sizes: tuple = ()


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    idx = int(rng.integers(n))
    centroids[0] = points[idx]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j:] = centroids[0]
            break
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans_cluster(points, k: int, seed: int, max_iter: int = 100):
    """Seeded k-means++ initialization followed by Lloyd's iteration until the
    assignment reaches a fixpoint (or max_iter). Deterministic given the seed.
    k is reduced to the number of points when necessary."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, len(pts))
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(pts, k, rng)
    assign = np.full(len(pts), -1)
    for _ in range(max_iter):
        d2 = np.sum((pts[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            mask = assign == j
            if mask.any():
                centroids[j] = pts[mask].mean(axis=0)
    return centroids, assign


def next_goal(feature_positions, uninspected_lit_mask, deputy_p, t, cfg_k, r_gh,
              segment_len, seed, prev_goal: GoalSpec | None = None) -> GoalSpec:
    """Cluster the uninspected illuminated feature positions and emit the goal
    derived from the centroid nearest the deputy. When no such features exist,
    the previous goal is held with an awaiting-illumination status."""
    mask = np.asarray(uninspected_lit_mask, dtype=bool)
    if not mask.any():
        if prev_goal is None:
            raise ValueError("no uninspected illuminated features and no prior goal")
        return GoalSpec(
            u_gh=prev_goal.u_gh,
            r_gh=prev_goal.r_gh,
            p_gh=prev_goal.p_gh,
            t_seg_start=t,
            t_f=t + segment_len,
            status="awaiting_illumination",
            cluster_sizes=(),
        )
    pts = np.asarray(feature_positions, dtype=float)[mask]
    centroids, assign = kmeans_cluster(pts, cfg_k, seed)
    dists = np.linalg.norm(centroids - np.asarray(deputy_p, dtype=float), axis=1)
    j = int(np.argmin(dists))
    centroid = centroids[j]
    norm = np.linalg.norm(centroid)
    if norm <= 0.0:
        u_gh = np.array([1.0, 0.0, 0.0])
    else:
        u_gh = centroid / norm
    sizes = tuple(int((assign == i).sum()) for i in range(len(centroids)))
    return GoalSpec(
        u_gh=u_gh,
        r_gh=r_gh,
        p_gh=u_gh * r_gh,
        t_seg_start=t,
        t_f=t + segment_len,
        status="ok",
        cluster_sizes=sizes,
    )

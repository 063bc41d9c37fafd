"""Minimal-volume Gaussian envelopes and their zone-tiered update rules.

An envelope is (mu, sigma): points p with (p - mu)^T sigma^{-1} (p - mu) <= 1
lie inside. Fitting uses the Khachiyan iteration for the minimum-volume
enclosing ellipsoid; a trace-of-sigma objective is available behind a config
flag for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import IllConditionedError
from .partition import Zone

_SINGULAR_FLOOR = 1e-15


@dataclass(frozen=True)
class GaussianEnvelope:
    mu: np.ndarray
    sigma: np.ndarray
    spatial_index: int = 0
    stale_frames: int = 0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(3)
        sigma = np.asarray(self.sigma, dtype=float).reshape(3, 3)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", 0.5 * (sigma + sigma.T))

    @staticmethod
    def unit(mu: np.ndarray, spatial_index: int = 0) -> "GaussianEnvelope":
        return GaussianEnvelope(mu, np.eye(3), spatial_index)


@dataclass(frozen=True)
class EnvelopeUpdateConfig:
    alpha: float = 0.7           # temporal smoothing weight on the previous mean
    gamma: float = 9.0           # squared-Mahalanobis admission gate (3-sigma)
    delta_mid: float = 0.005     # mid-zone mean convergence tolerance, meters
    eps_mid: float = 1e-3        # mid-zone covariance tolerance, Frobenius
    eps_max: float = 1e-5        # near-zone covariance tolerance, Frobenius
    eps_reg: float = 1e-6        # covariance eigenvalue floor
    voxel_size: float = 0.001
    use_trace_objective: bool = False
    max_refit_iters: int = 50
    stale_limit: int = 10

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        for name in ("gamma", "delta_mid", "eps_mid", "eps_max", "eps_reg", "voxel_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ComponentVoxels:
    component_id: int
    voxels: frozenset  # integer (ix, iy, iz) cells at voxel_size


def mahalanobis_gate(
    points: Sequence[np.ndarray], env: GaussianEnvelope, gamma: float
) -> np.ndarray:
    """Keep points with squared Mahalanobis distance <= gamma, order kept."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts
    eigvals = np.linalg.eigvalsh(env.sigma)
    if eigvals[0] < _SINGULAR_FLOOR:
        raise IllConditionedError("envelope covariance is singular")
    diff = pts - env.mu
    d2 = np.einsum("ij,ij->i", diff @ np.linalg.inv(env.sigma), diff)
    return pts[d2 <= gamma]


def update_mean(env: GaussianEnvelope, new_points: np.ndarray, alpha: float) -> np.ndarray:
    """Temporally smoothed mean: alpha * old + (1 - alpha) * centroid."""
    pts = np.asarray(new_points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("new_points must be non-empty")
    return alpha * env.mu + (1.0 - alpha) * pts.mean(axis=0)


def _khachiyan_weights(q: np.ndarray, tol: float, max_iters: int) -> np.ndarray:
    """Khachiyan ascent on the dual weights; q is (dim, n)."""
    dim, n = q.shape
    u = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        v = (q * u) @ q.T
        m = np.einsum("ij,ji->i", q.T, np.linalg.solve(v, q))
        j = int(np.argmax(m))
        mx = m[j]
        step = (mx - dim) / (dim * (mx - 1.0))
        if step <= 0:
            break
        new_u = (1.0 - step) * u
        new_u[j] += step
        if np.linalg.norm(new_u - u) < tol:
            u = new_u
            break
        u = new_u
    return u


def _mvee_full_rank(pts: np.ndarray, tol: float, max_iters: int):
    """Free-center MVEE via the lifted Khachiyan iteration; pts is (n, d)."""
    n, d = pts.shape
    q = np.vstack([pts.T, np.ones(n)])
    u = _khachiyan_weights(q, tol, max_iters)
    center = pts.T @ u
    cov = pts.T @ np.diag(u) @ pts - np.outer(center, center)
    sigma = d * cov
    return center, 0.5 * (sigma + sigma.T)


def _mvee_centered(q: np.ndarray, tol: float, max_iters: int) -> np.ndarray:
    """Fixed-center MVEE shape matrix for offsets q (n, d) about the origin."""
    n, d = q.shape
    u = _khachiyan_weights(q.T, tol, max_iters)
    sigma = d * (q.T * u) @ q
    return 0.5 * (sigma + sigma.T)


def _ensure_containment(mu, sigma, pts, eps_reg):
    """Scale sigma so every point sits at Mahalanobis distance <= 1."""
    eigvals, eigvecs = np.linalg.eigh(sigma)
    eigvals = np.maximum(eigvals, eps_reg)
    sigma = eigvecs @ np.diag(eigvals) @ eigvecs.T
    diff = pts - mu
    d2 = np.einsum("ij,ij->i", diff @ np.linalg.inv(sigma), diff)
    worst = float(d2.max()) if d2.size else 0.0
    if worst > 1.0:
        sigma = sigma * worst
    return 0.5 * (sigma + sigma.T)


def fit_min_envelope(
    points: Sequence[np.ndarray],
    eps_reg: float = 1e-6,
    tol: float = 1e-7,
    max_iters: int = 1000,
    spatial_index: int = 0,
) -> GaussianEnvelope:
    """Minimum-volume enclosing ellipsoid of a point set.

    Rank-deficient inputs are fitted inside their affine span; directions
    orthogonal to the span get extent eps_reg.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("points must be non-empty")
    mean = pts.mean(axis=0)
    centered = pts - mean
    svals = np.linalg.svd(centered, compute_uv=False) if pts.shape[0] > 1 else np.zeros(3)
    scale = max(1.0, float(np.abs(pts).max()))
    rank = int(np.sum(svals > 1e-9 * scale))
    if rank == 0:
        return GaussianEnvelope(mean, eps_reg * np.eye(3), spatial_index)
    if rank == 3:
        mu, sigma = _mvee_full_rank(pts, tol, max_iters)
    else:
        _, _, vt = np.linalg.svd(centered, full_matrices=True)
        basis = vt[:rank]  # (rank, 3)
        proj = centered @ basis.T
        if rank == 1:
            lo, hi = float(proj.min()), float(proj.max())
            mu_r = np.array([(lo + hi) / 2.0])
            sigma_r = np.array([[((hi - lo) / 2.0) ** 2]])
        else:
            mu_r, sigma_r = _mvee_full_rank(proj, tol, max_iters)
        mu = mean + basis.T @ mu_r
        sigma = basis.T @ sigma_r @ basis
    sigma = _ensure_containment(mu, sigma, pts, eps_reg)
    return GaussianEnvelope(mu, sigma, spatial_index)


def _fit_covariance_about(
    mu: np.ndarray, pts: np.ndarray, eps_reg: float, tol: float, cfg: EnvelopeUpdateConfig
) -> np.ndarray:
    """Min-volume (or min-trace) shape matrix about a fixed center."""
    q = pts - mu
    norms = np.linalg.norm(q, axis=1)
    if float(norms.max()) < 1e-12:
        return eps_reg * np.eye(3)
    if cfg.use_trace_objective:
        return _fit_trace_objective(mu, pts, eps_reg)
    svals = np.linalg.svd(q, compute_uv=False)
    scale = max(1.0, float(np.abs(q).max()))
    rank = int(np.sum(svals > 1e-9 * scale))
    if rank == 3:
        sigma = _mvee_centered(q, tol, max_iters=1000)
    else:
        _, _, vt = np.linalg.svd(q, full_matrices=True)
        basis = vt[:rank]
        proj = q @ basis.T
        if rank == 1:
            sigma_r = np.array([[float((proj[:, 0] ** 2).max())]])
        else:
            sigma_r = _mvee_centered(proj, tol, max_iters=1000)
        sigma = basis.T @ sigma_r @ basis
    return _ensure_containment(mu, sigma, pts, eps_reg)


def _fit_trace_objective(mu: np.ndarray, pts: np.ndarray, eps_reg: float) -> np.ndarray:
    """Trace-minimizing enclosing ellipsoid about a fixed center (convex)."""
    import cvxpy as cp

    q = pts - mu
    a = cp.Variable((3, 3), PSD=True)
    constraints = [cp.quad_form(qi, a) <= 1.0 for qi in q]
    constraints.append(a >> 0)
    prob = cp.Problem(cp.Minimize(cp.matrix_frac(np.eye(3), a)), constraints)
    prob.solve()
    if a.value is None:
        raise IllConditionedError("trace-objective fit failed to solve")
    sigma = np.linalg.inv(a.value)
    return _ensure_containment(mu, sigma, pts, eps_reg)


def update_envelope_zoned(
    env: GaussianEnvelope,
    points: Sequence[np.ndarray],
    zone: Zone,
    centroid_hint: np.ndarray,
    cfg: EnvelopeUpdateConfig,
) -> GaussianEnvelope:
    """Per-zone envelope refresh.

    Far: unit envelope re-centered on the centroid hint. Mid/Near: gated
    smoothed-mean plus covariance refit, iterated until the mean and
    covariance deltas fall under the zone's tolerances (looser for Mid).
    Empty gate result leaves the envelope unchanged and bumps staleness.
    """
    if zone is Zone.FAR:
        return GaussianEnvelope(np.asarray(centroid_hint, dtype=float), np.eye(3), env.spatial_index)
    gated = mahalanobis_gate(points, env, cfg.gamma)
    if gated.shape[0] == 0:
        return replace(env, stale_frames=env.stale_frames + 1)
    sigma_tol = cfg.eps_mid if zone is Zone.MID else cfg.eps_max
    fit_tol = 1e-4 if zone is Zone.MID else 1e-7
    mu_prev, sigma_prev = env.mu, env.sigma
    mu_new, sigma_new = mu_prev, sigma_prev
    for _ in range(cfg.max_refit_iters):
        mu_new = cfg.alpha * mu_prev + (1.0 - cfg.alpha) * gated.mean(axis=0)
        sigma_new = _fit_covariance_about(mu_new, gated, cfg.eps_reg, fit_tol, cfg)
        mu_delta = float(np.linalg.norm(mu_new - mu_prev))
        sigma_delta = float(np.linalg.norm(sigma_new - sigma_prev, ord="fro"))
        mu_prev, sigma_prev = mu_new, sigma_new
        if mu_delta <= cfg.delta_mid and sigma_delta <= sigma_tol:
            break
    return GaussianEnvelope(mu_new, sigma_new, env.spatial_index)


def voxelize_components(
    labeled_points: Sequence[tuple[np.ndarray, int]], voxel_size: float = 0.001
) -> list[ComponentVoxels]:
    """Group points by sub-label into unique voxel cells at voxel_size."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    groups: dict[int, set] = {}
    for point, label in labeled_points:
        cell = tuple(int(c) for c in np.floor(np.asarray(point, dtype=float) / voxel_size))
        groups.setdefault(int(label), set()).add(cell)
    return [
        ComponentVoxels(label, frozenset(cells))
        for label, cells in sorted(groups.items())
    ]

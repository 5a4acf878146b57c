"""Dense bundle adjustment over keyframe poses and per-pixel inverse depths.

Residuals are ``target - p`` where ``p`` is the reprojection of a source
pixel into the destination keyframe, weighted per axis by the flow
confidence. The depth block of the Hessian is diagonal, so depths are
eliminated with the Schur complement and the reduced 6K x 6K camera system is
solved by Cholesky. Depth marginal covariances come from the same factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
import scipy.linalg

from .config import TrackingConfig
from .errors import EmptyGraph, InsufficientKeyframes, NotPositiveDefinite, SingularSystem
from .flow.base import FlowProvider, FlowRevision
from .frame_graph import Edge, FrameGraph, window_ids
from .geometry import InverseDepthMap, PinholeCamera, SE3Pose, pixel_grid, se3_exp

log = logging.getLogger(__name__)

# information given to depth pixels that no edge observes
INFO_FLOOR = 1e-8
_MIN_Z = 1e-6
_MAX_DAMPING_TRIES = 12
_RCOND_MIN = 1e-14


@dataclass
class NormalEquations:
    """``[[C, E], [E^T, diag(P)]] [dxi, dd] = [v, w]`` with the gauge block pinned."""

    C: np.ndarray
    E: np.ndarray
    P: np.ndarray
    v: np.ndarray
    w: np.ndarray
    ids: Tuple[int, ...] = ()
    grid_shape: Tuple[int, int] = (0, 0)
    cost: float = 0.0
    gauge: int = 0

    @property
    def num_poses(self) -> int:
        return self.C.shape[0] // 6

    @property
    def num_depths(self) -> int:
        return self.P.shape[0]

    def dense(self) -> Tuple[np.ndarray, np.ndarray]:
        """Full ``(H, b)``; for checks against dense linear algebra."""
        n = self.C.shape[0]
        H = np.zeros((n + self.num_depths, n + self.num_depths))
        H[:n, :n] = self.C
        H[:n, n:] = self.E
        H[n:, :n] = self.E.T
        H[n:, n:] = np.diag(self.P)
        return H, np.concatenate([self.v, self.w])


@dataclass
class BAReport:
    iterations: int = 0
    final_cost: float = 0.0
    pose_updates_norm: List[float] = field(default_factory=list)
    converged: bool = False
    costs: List[float] = field(default_factory=list)
    rejected_steps: int = 0


def _skew_batch(X: np.ndarray) -> np.ndarray:
    S = np.zeros(X.shape[:-1] + (3, 3))
    S[..., 0, 1] = -X[..., 2]
    S[..., 0, 2] = X[..., 1]
    S[..., 1, 0] = X[..., 2]
    S[..., 1, 2] = -X[..., 0]
    S[..., 2, 0] = -X[..., 1]
    S[..., 2, 1] = X[..., 0]
    return S


def _rays(camera: PinholeCamera) -> np.ndarray:
    g = pixel_grid(camera.width, camera.height).reshape(-1, 2)
    return np.stack([(g[:, 0] - camera.cx) / camera.fx, (g[:, 1] - camera.cy) / camera.fy, np.ones(len(g))], axis=-1)


def edge_jacobians(
    camera: PinholeCamera, G_i: SE3Pose, G_j: SE3Pose, inv_depth: np.ndarray, jacobians: bool = True
) -> Dict[str, np.ndarray]:
    """Reprojection of every pixel of keyframe i into keyframe j and its derivatives.

    Keys: ``p`` (N, 2), ``valid`` (N,), and with ``jacobians`` ``J_pose_i``
    (N, 2, 6), ``J_pose_j`` (N, 2, 6), ``J_depth`` (N, 2). Pose derivatives are
    for left perturbations ``G <- exp(xi) G``.
    """
    d = np.asarray(inv_depth, dtype=float).reshape(-1)
    X_i = _rays(camera) / d[:, None]
    X_w = X_i @ G_i.R.T + G_i.t
    X_j = (X_w - G_j.t) @ G_j.R
    x, y, z = X_j[:, 0], X_j[:, 1], X_j[:, 2]
    valid = z > _MIN_Z
    zs = np.where(valid, z, 1.0)
    p = np.stack([camera.fx * x / zs + camera.cx, camera.fy * y / zs + camera.cy], axis=-1)
    out = {"p": p, "valid": valid}
    if not jacobians:
        return out
    n = len(d)
    Jproj = np.zeros((n, 2, 3))
    Jproj[:, 0, 0] = camera.fx / zs
    Jproj[:, 0, 2] = -camera.fx * x / zs**2
    Jproj[:, 1, 1] = camera.fy / zs
    Jproj[:, 1, 2] = -camera.fy * y / zs**2
    Rjt = G_j.R.T
    A = np.zeros((n, 3, 6))
    A[:, :, :3] = Rjt
    A[:, :, 3:] = -np.einsum("ab,nbc->nac", Rjt, _skew_batch(X_w))
    J_i = np.einsum("nab,nbc->nac", Jproj, A)
    dX_dd = (-X_i / d[:, None]) @ (Rjt @ G_i.R).T
    out["J_pose_i"] = J_i
    out["J_pose_j"] = -J_i
    out["J_depth"] = np.einsum("nab,nb->na", Jproj, dX_dd)
    return out


def _edge_weights(conf: np.ndarray, valid: np.ndarray) -> np.ndarray:
    return np.asarray(conf, dtype=float).reshape(-1, 2) * valid[:, None]


def _linearize(
    edges: Sequence[Edge],
    poses: Mapping[int, SE3Pose],
    depths: Mapping[int, np.ndarray],
    camera: PinholeCamera,
    targets: Mapping[Edge, np.ndarray],
    weights: Mapping[Edge, np.ndarray],
    anchor: np.ndarray | None = None,
    anchor_weight: float = 0.0,
) -> NormalEquations:
    ids = window_ids(edges)
    index = {kf: k for k, kf in enumerate(ids)}
    n_pix = camera.width * camera.height
    K, M = len(ids), len(ids) * n_pix
    C = np.zeros((6 * K, 6 * K))
    E = np.zeros((6 * K, M))
    P = np.zeros(M)
    v = np.zeros(6 * K)
    w = np.zeros(M)
    cost = 0.0
    for i, j in edges:
        t = edge_jacobians(camera, poses[i], poses[j], depths[i])
        wts = _edge_weights(weights[(i, j)], t["valid"])
        r = np.where(wts > 0, np.asarray(targets[(i, j)], dtype=float).reshape(-1, 2) - t["p"], 0.0)
        Ji, Jd = t["J_pose_i"], t["J_depth"]
        WJi = wts[:, :, None] * Ji
        Hii = np.einsum("nai,naj->ij", Ji, WJi)
        gi = np.einsum("nai,na->i", WJi, r)
        Ei = np.einsum("nai,na->ni", WJi, Jd)
        a, b = 6 * index[i], 6 * index[j]
        cols = slice(index[i] * n_pix, (index[i] + 1) * n_pix)
        C[a:a + 6, a:a + 6] += Hii
        C[b:b + 6, b:b + 6] += Hii
        C[a:a + 6, b:b + 6] -= Hii
        C[b:b + 6, a:a + 6] -= Hii
        v[a:a + 6] += gi
        v[b:b + 6] -= gi
        E[a:a + 6, cols] += Ei.T
        E[b:b + 6, cols] -= Ei.T
        P[cols] += np.sum(wts * Jd * Jd, axis=1)
        w[cols] += np.sum(wts * Jd * r, axis=1)
        cost += float(np.sum(wts * r * r))
    if anchor is not None and anchor_weight > 0.0:
        d0 = np.asarray(depths[ids[0]], dtype=float).reshape(-1)
        delta = anchor.reshape(-1) - d0
        P[:n_pix] += anchor_weight
        w[:n_pix] += anchor_weight * delta
        cost += float(anchor_weight * np.sum(delta * delta))
    P[P == 0.0] = INFO_FLOOR
    C[:6, :] = 0.0
    C[:, :6] = 0.0
    C[:6, :6] = np.eye(6)
    E[:6, :] = 0.0
    v[:6] = 0.0
    return NormalEquations(C, E, P, v, w, tuple(ids), camera.shape, cost)


def residuals_and_jacobians(
    edges: Iterable[Edge],
    poses: Mapping[int, SE3Pose],
    depths: Mapping[int, InverseDepthMap | np.ndarray],
    flows: Mapping[Edge, FlowRevision],
    camera: PinholeCamera,
    anchor: np.ndarray | None = None,
    anchor_weight: float = 0.0,
) -> NormalEquations:
    """Weighted Gauss-Newton system at the current estimate.

    Each flow revision is relative to the reprojection at ``poses``/``depths``.
    The first keyframe (lowest id) carries the gauge.
    """
    edges = sorted(set(edges))
    if not edges:
        raise EmptyGraph("no edges to linearise")
    vals = {k: (d.values if isinstance(d, InverseDepthMap) else np.asarray(d, dtype=float)) for k, d in depths.items()}
    targets: Dict[Edge, np.ndarray] = {}
    weights: Dict[Edge, np.ndarray] = {}
    for e in edges:
        p = edge_jacobians(camera, poses[e[0]], poses[e[1]], vals[e[0]], jacobians=False)["p"]
        targets[e] = p + flows[e].revision.reshape(-1, 2)
        weights[e] = flows[e].confidence
    return _linearize(edges, poses, vals, camera, targets, weights, anchor, anchor_weight)


def _cholesky(S: np.ndarray, err: type[Exception]) -> Tuple[np.ndarray, bool]:  # cho_factor pair
    try:
        factor = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise err(str(exc)) from exc
    diag = np.abs(np.diag(factor[0]))
    if diag.min() ** 2 < _RCOND_MIN * diag.max() ** 2:
        raise err("reduced camera system is rank deficient")
    return factor


def schur_solve(ne: NormalEquations, damping: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Solve ``(H + damping * diag(H)) x = b``; returns ``(dxi (K, 6), dd (M,))``."""
    if damping < 0:
        raise ValueError("damping must be >= 0")
    C = ne.C + damping * np.diag(np.diag(ne.C))
    P = ne.P * (1.0 + damping)
    if np.any(P <= 0):
        raise SingularSystem("depth block has non-positive entries")
    EPinv = ne.E / P
    S = C - EPinv @ ne.E.T
    S = 0.5 * (S + S.T)
    rhs = ne.v - EPinv @ ne.w
    factor = _cholesky(S, SingularSystem)
    dxi = scipy.linalg.cho_solve(factor, rhs)
    dd = (ne.w - ne.E.T @ dxi) / P
    return dxi.reshape(-1, 6), dd


def depth_covariance(ne: NormalEquations) -> Tuple[np.ndarray, np.ndarray]:
    """Marginal inverse-depth variances and the pose covariance.

    Returns ``(sigma_d (K, H, W), sigma_G (6K, 6K))``; the gauge block of
    ``sigma_G`` is zero.
    """
    EPinv = ne.E / ne.P
    S = ne.C - EPinv @ ne.E.T
    S = 0.5 * (S + S.T)
    factor = _cholesky(S, NotPositiveDefinite)
    sigma_G = scipy.linalg.cho_solve(factor, np.eye(S.shape[0]))
    sigma_G = 0.5 * (sigma_G + sigma_G.T)
    g = 6 * ne.gauge
    sigma_G[g:g + 6, :] = 0.0
    sigma_G[:, g:g + 6] = 0.0
    sigma_d = 1.0 / ne.P + np.sum(ne.E * (sigma_G @ ne.E), axis=0) / ne.P**2
    sigma_d = np.maximum(sigma_d, 0.0)
    h, w = ne.grid_shape
    if h * w and sigma_d.size == len(ne.ids) * h * w:
        sigma_d = sigma_d.reshape(len(ne.ids), h, w)
    return sigma_d, sigma_G


def _trial_cost(
    edges: Sequence[Edge],
    poses: Mapping[int, SE3Pose],
    depths: Mapping[int, np.ndarray],
    camera: PinholeCamera,
    targets: Mapping[Edge, np.ndarray],
    weights: Mapping[Edge, np.ndarray],
    anchor: np.ndarray | None,
    anchor_weight: float,
    gauge_id: int,
) -> float:
    cost = 0.0
    for e in edges:
        t = edge_jacobians(camera, poses[e[0]], poses[e[1]], depths[e[0]], jacobians=False)
        wts = np.asarray(weights[e], dtype=float).reshape(-1, 2)
        used = np.any(wts > 0, axis=1)
        if np.any(used & ~t["valid"]):
            return float("inf")
        r = np.where(wts > 0, targets[e] - t["p"], 0.0)
        cost += float(np.sum(wts * r * r))
    if anchor is not None and anchor_weight > 0.0:
        delta = anchor - depths[gauge_id]
        cost += float(anchor_weight * np.sum(delta * delta))
    return cost


def _query_flow(
    provider: FlowProvider,
    frames: Mapping[int, Any],
    edges: Sequence[Edge],
    poses: Mapping[int, SE3Pose],
    depths: Mapping[int, np.ndarray],
    camera: PinholeCamera,
) -> Tuple[Dict[Edge, np.ndarray], Dict[Edge, np.ndarray]]:
    targets: Dict[Edge, np.ndarray] = {}
    weights: Dict[Edge, np.ndarray] = {}
    h, w = camera.shape
    for i, j in edges:
        p = edge_jacobians(camera, poses[i], poses[j], depths[i], jacobians=False)["p"]
        rev = provider.flow_revision(frames[i], frames[j], p.reshape(h, w, 2))
        targets[(i, j)] = rev.targets(p.reshape(h, w, 2)).reshape(-1, 2)
        weights[(i, j)] = rev.confidence.reshape(-1, 2)
    return targets, weights


def ba_iterate(
    graph: FrameGraph,
    edges: Iterable[Edge],
    provider: FlowProvider,
    camera: PinholeCamera,
    iterations: int,
    config: TrackingConfig | None = None,
    compute_covariance: bool = True,
) -> BAReport:
    """Levenberg-Marquardt refinement of the keyframes touched by ``edges``.

    Poses and inverse depths are written back to ``graph``; with
    ``compute_covariance`` the depth maps also receive fresh marginal
    variances. The lowest keyframe id is the gauge and is never moved.
    """
    cfg = config or TrackingConfig()
    edges = sorted(set(edges))
    if not edges:
        raise EmptyGraph("no edges")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    ids = window_ids(edges)
    if len(ids) < 2:
        raise InsufficientKeyframes(f"need >= 2 keyframes, have {len(ids)}")
    frames = {i: graph.get(i) for i in ids}
    poses = {i: frames[i].pose for i in ids}
    depths = {i: frames[i].depth.values.reshape(-1).copy() for i in ids}
    gauge_id = ids[0]
    anchor = depths[gauge_id].copy() if cfg.scale_anchor_weight > 0 else None
    lam = cfg.damping_init
    report = BAReport()
    n_pix = camera.width * camera.height

    for it in range(iterations):
        targets, weights = _query_flow(provider, frames, edges, poses, depths, camera)
        ne = _linearize(edges, poses, depths, camera, targets, weights, anchor, cfg.scale_anchor_weight)
        report.iterations = it + 1
        report.costs.append(ne.cost)
        report.final_cost = ne.cost
        if ne.cost < cfg.cost_tolerance:
            report.converged = True
            break
        accepted = False
        for _ in range(_MAX_DAMPING_TRIES):
            try:
                dxi, dd = schur_solve(ne, lam)
            except SingularSystem:
                lam *= 10.0
                report.rejected_steps += 1
                continue
            new_poses = {k: poses[k] if k == gauge_id else poses[k].retract(dxi[idx]) for idx, k in enumerate(ids)}
            new_depths = {
                k: np.maximum(depths[k] + dd[idx * n_pix:(idx + 1) * n_pix], cfg.min_inv_depth)
                for idx, k in enumerate(ids)
            }
            trial = _trial_cost(edges, new_poses, new_depths, camera, targets, weights,
                                anchor, cfg.scale_anchor_weight, gauge_id)
            if trial <= ne.cost:
                poses, depths = new_poses, new_depths
                report.pose_updates_norm.append(float(np.linalg.norm(dxi)))
                report.costs.append(trial)
                report.final_cost = trial
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
            report.rejected_steps += 1
        if not accepted:
            log.debug("BA step rejected at every damping level; cost %.3e", ne.cost)
            break
        if report.final_cost < cfg.cost_tolerance:
            report.converged = True
            break

    sigma = None
    if compute_covariance:
        targets, weights = _query_flow(provider, frames, edges, poses, depths, camera)
        ne = _linearize(edges, poses, depths, camera, targets, weights, anchor, cfg.scale_anchor_weight)
        sigma, _ = depth_covariance(ne)
    h, w = camera.shape
    for idx, k in enumerate(ids):
        cov = sigma[idx] if sigma is not None else frames[k].depth.covariance
        graph.update_state(k, pose=poses[k], depth=InverseDepthMap(depths[k].reshape(h, w), cov))
    log.debug("BA on %d keyframes: %d iterations, cost %.3e, converged=%s",
              len(ids), report.iterations, report.final_cost, report.converged)
    return report


def refine_pose(
    camera: PinholeCamera,
    G_ref: SE3Pose,
    inv_depth_ref: np.ndarray,
    G_init: SE3Pose,
    targets: np.ndarray,
    weights: np.ndarray,
    iterations: int = 6,
    damping_init: float = 1e-4,
) -> Tuple[SE3Pose, float]:
    """Motion-only refinement of a frame pose against a fixed keyframe."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    G = G_init
    lam = damping_init
    t = edge_jacobians(camera, G_ref, G, inv_depth_ref, jacobians=False)
    wts = _edge_weights(weights, t["valid"])
    cost = float(np.sum(wts * np.where(wts > 0, targets - t["p"], 0.0) ** 2))
    for _ in range(iterations):
        t = edge_jacobians(camera, G_ref, G, inv_depth_ref)
        wts = _edge_weights(weights, t["valid"])
        r = np.where(wts > 0, targets - t["p"], 0.0)
        Jj = t["J_pose_j"]
        WJ = wts[:, :, None] * Jj
        H = np.einsum("nai,naj->ij", Jj, WJ)
        b = np.einsum("nai,na->i", WJ, r)
        if not np.any(H):
            break
        accepted = False
        for _ in range(_MAX_DAMPING_TRIES):
            try:
                step = scipy.linalg.solve(H + lam * np.diag(np.diag(H)), b, assume_a="pos")
            except (np.linalg.LinAlgError, ValueError):
                lam *= 10.0
                continue
            G_new = se3_exp(step).compose(G)
            tn = edge_jacobians(camera, G_ref, G_new, inv_depth_ref, jacobians=False)
            if np.any(np.any(wts > 0, axis=1) & ~tn["valid"]):
                lam *= 10.0
                continue
            trial = float(np.sum(wts * np.where(wts > 0, targets - tn["p"], 0.0) ** 2))
            if trial <= cost:
                G, cost, accepted = G_new, trial, True
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            break
    return G, cost

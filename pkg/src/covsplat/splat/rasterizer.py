"""Tile-bucketed software rasterizer with an analytic backward pass.

Samples are depth-sorted with ties broken by Gaussian id, composited front
to back with ``alpha = min(0.99, opacity * G)``. Samples with
``alpha < 1e-10`` are skipped everywhere, which makes the per-tile bucketing
radius exact. A sample is composited only while the transmittance after it
stays at or above ``1e-4``. The background is black.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from ..geometry import PinholeCamera, SE3Pose
from .gaussians import GaussianSet
from .projection import NEAR, ProjectedBatch, project_gaussians

log = logging.getLogger(__name__)

TILE = 16
ALPHA_MAX = 0.99
ALPHA_MIN = 1e-10
T_MIN = 1e-4


@dataclass
class RenderedFrame:
    color: np.ndarray       # (H, W, 3)
    depth: np.ndarray       # (H, W)
    alpha_acc: np.ndarray   # (H, W)
    visibility: np.ndarray  # (N,) max blend weight of each Gaussian over the image


@dataclass
class _Tile:
    y0: int
    y1: int
    x0: int
    x1: int
    members: np.ndarray  # batch rows in composite order


def _sort_order(batch: ProjectedBatch) -> np.ndarray:
    return np.lexsort((batch.ids, batch.depth))


def _bucket(batch: ProjectedBatch, camera: PinholeCamera, order: np.ndarray) -> List[_Tile]:
    """Tiles in row-major order with the batch rows that can reach them."""
    H, W = camera.height, camera.width
    o = batch.opacity[order]
    reach = o > ALPHA_MIN
    radius = np.zeros(len(order))
    radius[reach] = np.sqrt(2.0 * np.log(o[reach] / ALPHA_MIN) * batch.max_eigenvalue()[order][reach])
    mu = batch.mean2d[order]
    lo = mu - radius[:, None]
    hi = mu + radius[:, None]
    tiles = []
    for y0 in range(0, H, TILE):
        y1 = min(y0 + TILE, H)
        for x0 in range(0, W, TILE):
            x1 = min(x0 + TILE, W)
            hit = reach & (hi[:, 0] >= x0) & (lo[:, 0] <= x1 - 1) & (hi[:, 1] >= y0) & (lo[:, 1] <= y1 - 1)
            tiles.append(_Tile(y0, y1, x0, x1, order[hit]))
    return tiles


def _tile_alpha(batch: ProjectedBatch, tile: _Tile) -> Dict[str, np.ndarray]:
    m = tile.members
    vs, us = np.meshgrid(np.arange(tile.y0, tile.y1, dtype=float), np.arange(tile.x0, tile.x1, dtype=float),
                         indexing="ij")
    u, v = us.ravel(), vs.ravel()
    dx = u[None, :] - batch.mean2d[m, 0][:, None]
    dy = v[None, :] - batch.mean2d[m, 1][:, None]
    qa = batch.conic[m, 0, 0][:, None]
    qb = batch.conic[m, 0, 1][:, None]
    qc = batch.conic[m, 1, 1][:, None]
    G = np.exp(-0.5 * (qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy))
    raw = batch.opacity[m][:, None] * G
    alpha = np.minimum(raw, ALPHA_MAX)
    alpha[alpha < ALPHA_MIN] = 0.0
    one_minus = 1.0 - alpha
    T_after = np.cumprod(one_minus, axis=0)
    T_before = np.vstack([np.ones((1, dx.shape[1])), T_after[:-1]]) if len(m) else T_after
    active = T_after >= T_MIN
    weight = alpha * T_before * active
    return {"dx": dx, "dy": dy, "G": G, "raw": raw, "alpha": alpha, "T": T_before, "active": active, "W": weight}


def _map_tiles(fn: Callable[[_Tile], object], tiles: Sequence[_Tile], workers: int) -> list:
    if workers <= 1 or len(tiles) < 2:
        return [fn(t) for t in tiles]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tiles))


def rasterize(
    gaussians: GaussianSet,
    T_cw: SE3Pose,
    camera: PinholeCamera,
    workers: int = 1,
    near: float = NEAR,
) -> RenderedFrame:
    """Render color, depth and accumulated opacity from world-to-camera ``T_cw``."""
    H, W = camera.height, camera.width
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    alpha_acc = np.zeros((H, W))
    visibility = np.zeros(len(gaussians))
    batch = project_gaussians(gaussians, T_cw, camera, near=near)
    if len(batch) == 0:
        return RenderedFrame(color, depth, alpha_acc, visibility)
    tiles = _bucket(batch, camera, _sort_order(batch))

    def render_tile(tile: _Tile):
        if len(tile.members) == 0:
            return None
        a = _tile_alpha(batch, tile)
        Wt = a["W"]
        return (Wt.T @ batch.color[tile.members], Wt.T @ batch.depth[tile.members], Wt.sum(axis=0), Wt.max(axis=1))

    results = _map_tiles(render_tile, tiles, workers)
    vis_batch = np.zeros(len(batch))
    for tile, res in zip(tiles, results):
        if res is None:
            continue
        c, d, acc, vis = res
        h, w = tile.y1 - tile.y0, tile.x1 - tile.x0
        color[tile.y0:tile.y1, tile.x0:tile.x1] = c.reshape(h, w, 3)
        depth[tile.y0:tile.y1, tile.x0:tile.x1] = d.reshape(h, w)
        alpha_acc[tile.y0:tile.y1, tile.x0:tile.x1] = acc.reshape(h, w)
        np.maximum.at(vis_batch, tile.members, vis)
    visibility[batch.index] = vis_batch
    np.clip(alpha_acc, 0.0, 1.0, out=alpha_acc)
    return RenderedFrame(color, depth, alpha_acc, visibility)


@dataclass
class GaussianGradients:
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    mean2d: np.ndarray  # (N, 2) screen-space position gradient, for densification

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {
            "positions": self.positions,
            "rotations": self.rotations,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "colors": self.colors,
        }


def _zero_grads(n: int) -> GaussianGradients:
    return GaussianGradients(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)),
                             np.zeros((n, 2)))


def _quat_grad(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Chain ``dL/dR`` through the normalised-quaternion rotation matrix."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    dy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    dz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    dqn = np.stack([dw, dx, dy, dz], axis=1)
    return (dqn - qn * np.sum(qn * dqn, axis=1, keepdims=True)) / norm


def rasterize_backward(
    gaussians: GaussianSet,
    T_cw: SE3Pose,
    camera: PinholeCamera,
    grad_color: np.ndarray,
    grad_depth: np.ndarray,
    workers: int = 1,
    near: float = NEAR,
) -> GaussianGradients:
    """Gradients of ``sum(grad_color * C) + sum(grad_depth * D)`` w.r.t. every Gaussian parameter."""
    n_all = len(gaussians)
    out = _zero_grads(n_all)
    grad_color = np.asarray(grad_color, dtype=float)
    grad_depth = np.asarray(grad_depth, dtype=float)
    if n_all == 0 or (not np.any(grad_color) and not np.any(grad_depth)):
        return out
    batch = project_gaussians(gaussians, T_cw, camera, near=near)
    n = len(batch)
    if n == 0:
        return out
    tiles = _bucket(batch, camera, _sort_order(batch))

    def tile_grads(tile: _Tile):
        m = tile.members
        if len(m) == 0:
            return None
        gC = grad_color[tile.y0:tile.y1, tile.x0:tile.x1].reshape(-1, 3)
        gD = grad_depth[tile.y0:tile.y1, tile.x0:tile.x1].reshape(-1)
        if not np.any(gC) and not np.any(gD):
            return None
        a = _tile_alpha(batch, tile)
        Wt, T, alpha = a["W"], a["T"], a["alpha"]
        cg = batch.color[m] @ gC.T                 # (n, p)
        dg = batch.depth[m][:, None] * gD[None, :]  # (n, p)
        own = Wt * (cg + dg)
        behind = np.cumsum(own[::-1], axis=0)[::-1] - own
        dL_dalpha = a["active"] * (T * (cg + dg) - behind / (1.0 - alpha))
        dL_draw = dL_dalpha * ((a["raw"] < ALPHA_MAX) & (alpha > 0.0))
        G = a["G"]
        d_opacity = np.sum(dL_draw * G, axis=1)
        tG = dL_draw * batch.opacity[m][:, None] * G
        dx, dy = a["dx"], a["dy"]
        qa = batch.conic[m, 0, 0][:, None]
        qb = batch.conic[m, 0, 1][:, None]
        qc = batch.conic[m, 1, 1][:, None]
        d_mean = np.stack([np.sum(tG * (qa * dx + qb * dy), axis=1), np.sum(tG * (qb * dx + qc * dy), axis=1)], axis=1)
        d_conic = -0.5 * np.stack([np.sum(tG * dx * dx, axis=1), np.sum(tG * dx * dy, axis=1),
                                   np.sum(tG * dy * dy, axis=1)], axis=1)
        return m, Wt @ gC, Wt @ gD, d_opacity, d_mean, d_conic

    d_color = np.zeros((n, 3))
    d_depth = np.zeros(n)
    d_opacity = np.zeros(n)
    d_mean = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    for res in _map_tiles(tile_grads, tiles, workers):
        if res is None:
            continue
        m, dc, dd, do, dm, dq = res
        np.add.at(d_color, m, dc)
        np.add.at(d_depth, m, dd)
        np.add.at(d_opacity, m, do)
        np.add.at(d_mean, m, dm)
        np.add.at(d_conic, m, dq)

    Q = batch.conic
    GQ = np.empty((n, 2, 2))
    GQ[:, 0, 0] = d_conic[:, 0]
    GQ[:, 0, 1] = GQ[:, 1, 0] = d_conic[:, 1]
    GQ[:, 1, 1] = d_conic[:, 2]
    G2 = -Q @ GQ @ Q
    M = batch.M
    G3 = np.transpose(M, (0, 2, 1)) @ G2 @ M
    dM = (G2 + np.transpose(G2, (0, 2, 1))) @ M @ batch.cov3d
    dJ = dM @ batch.R_cw.T

    t = batch.t_cam
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = camera.fx, camera.fy
    d_t = np.einsum("nab,na->nb", batch.J, d_mean)
    d_t[:, 2] += d_depth
    d_t[:, 0] += dJ[:, 0, 2] * (-fx / z**2)
    d_t[:, 1] += dJ[:, 1, 2] * (-fy / z**2)
    d_t[:, 2] += (dJ[:, 0, 0] * (-fx / z**2) + dJ[:, 0, 2] * (2 * fx * x / z**3)
                  + dJ[:, 1, 1] * (-fy / z**2) + dJ[:, 1, 2] * (2 * fy * y / z**3))
    d_pos = d_t @ batch.R_cw

    R, s = batch.R, batch.scales
    s2 = s * s
    G3s = G3 + np.transpose(G3, (0, 2, 1))
    d_R = G3s @ R * s2[:, None, :]
    d_ls = 2.0 * s2 * np.einsum("nik,nij,njk->nk", R, G3, R)
    d_quat = _quat_grad(gaussians.rotations[batch.index], d_R)
    o = batch.opacity

    idx = batch.index
    out.positions[idx] = d_pos
    out.rotations[idx] = d_quat
    out.log_scales[idx] = d_ls
    out.opacity_logits[idx] = d_opacity * o * (1.0 - o)
    out.colors[idx] = d_color
    out.mean2d[idx] = d_mean
    return out

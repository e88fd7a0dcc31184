"""Tile-based splatting of color / segmentation-probability / alpha / depth,
with an analytic backward pass and a brute-force per-pixel reference.

Per pixel p the compositing is

    C(p) = sum_i c_i a'_i prod_{j<i} (1 - a'_j),
    a'_i = opacity_i * exp(-0.5 * d_i(p)),

with contributors sorted front-to-back by camera-frame depth of their
centers and d_i the Mahalanobis distance under the EWA-projected 2x2
covariance. The prob channel reuses the identical weights with the color
replaced by sigmoid(seg_logit); alpha accumulates the weights themselves;
depth accumulates camera-frame z. A contribution is zeroed when it falls
below ``alpha_cutoff`` or beyond ``sigma_cutoff`` standard deviations; the
zeroing is part of the weight definition, so the tiled and brute-force paths
agree to float precision rather than "up to culling".

The backward pass is analytic end to end, including the projection Jacobian
dependence on position; finite differences appear only in tests.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraView, project_scene
from .scene import PARAM_GROUPS, Scene, scene_hash, sigmoid

__all__ = [
    "RenderOptions",
    "RenderOutput",
    "RenderTape",
    "ParamGradients",
    "TapeMismatchError",
    "render",
    "backward",
    "render_silhouette",
    "render_brute_force",
]


class TapeMismatchError(ValueError):
    """The render output's tape does not belong to the given scene/view."""


@dataclass(frozen=True)
class RenderOptions:
    tile_size: int = 16
    alpha_cutoff: float | None = 1.0 / 255.0
    sigma_cutoff: float | None = 3.0
    workers: int = 1


@dataclass
class RenderTape:
    scene_digest: str
    view: CameraView
    options: RenderOptions
    order: np.ndarray  # visible kernel indices, front to back
    tiles: list[tuple[int, int, int, int, np.ndarray]]  # (y0, y1, x0, x1, rows into order)


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    prob: np.ndarray  # (H, W)
    alpha: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W)
    tape: RenderTape


@dataclass
class ParamGradients:
    position: np.ndarray  # (N, 3)
    log_scale: np.ndarray  # (N, 3)
    rotation: np.ndarray  # (N, 4)
    color: np.ndarray  # (N, 3)
    opacity_logit: np.ndarray  # (N,)
    seg_logit: np.ndarray  # (N,)

    @classmethod
    def zeros(cls, n: int) -> "ParamGradients":
        return cls(
            position=np.zeros((n, 3)),
            log_scale=np.zeros((n, 3)),
            rotation=np.zeros((n, 4)),
            color=np.zeros((n, 3)),
            opacity_logit=np.zeros(n),
            seg_logit=np.zeros(n),
        )

    def __add__(self, other: "ParamGradients") -> "ParamGradients":
        return ParamGradients(
            position=self.position + other.position,
            log_scale=self.log_scale + other.log_scale,
            rotation=self.rotation + other.rotation,
            color=self.color + other.color,
            opacity_logit=self.opacity_logit + other.opacity_logit,
            seg_logit=self.seg_logit + other.seg_logit,
        )

    def scaled(self, factor: float) -> "ParamGradients":
        return ParamGradients(
            position=self.position * factor,
            log_scale=self.log_scale * factor,
            rotation=self.rotation * factor,
            color=self.color * factor,
            opacity_logit=self.opacity_logit * factor,
            seg_logit=self.seg_logit * factor,
        )

    def max_abs(self) -> float:
        return max(
            float(np.abs(a).max()) if a.size else 0.0
            for a in (self.position, self.log_scale, self.rotation, self.color, self.opacity_logit, self.seg_logit)
        )


def _conic(cov2d: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    return c / det, -b / det, a / det, det


def _footprint_radius(cov2d: np.ndarray, sigma_cutoff: float | None) -> np.ndarray:
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    if sigma_cutoff is None:
        return np.full(len(cov2d), np.inf)
    return sigma_cutoff * np.sqrt(lam_max)


def _prepare(scene: Scene, view: CameraView, options: RenderOptions):
    proj = project_scene(scene, view)
    visible = np.nonzero(proj["in_front"])[0]
    order = visible[np.argsort(proj["depths"][visible], kind="stable")]

    centers = proj["centers"][order]
    radius = _footprint_radius(proj["cov2d"][order], options.sigma_cutoff)

    ts = options.tile_size
    tiles: list[tuple[int, int, int, int, np.ndarray]] = []
    for y0 in range(0, view.height, ts):
        y1 = min(y0 + ts, view.height)
        row_hit = (centers[:, 1] - radius < y1) & (centers[:, 1] + radius > y0)
        row_rows = np.nonzero(row_hit)[0]
        cx = centers[row_rows, 0]
        r = radius[row_rows]
        for x0 in range(0, view.width, ts):
            x1 = min(x0 + ts, view.width)
            hit = (cx - r < x1) & (cx + r > x0)
            tiles.append((y0, y1, x0, x1, row_rows[hit]))
    return proj, order, tiles


def _pixel_grid(y0, y1, x0, x1):
    ys = np.arange(y0, y1, dtype=np.float64) + 0.5
    xs = np.arange(x0, x1, dtype=np.float64) + 0.5
    px, py = np.meshgrid(xs, ys)
    return px.ravel(), py.ravel()


def _tile_weights(px, py, centers, qa, qb, qc, alphas, options: RenderOptions):
    """Per-pixel contributor weights for one tile.

    Returns (alpha_prime, transmittance, weight), each (P, M), with the
    cutoff already folded into alpha_prime.
    """
    dx = px[:, None] - centers[None, :, 0]
    dy = py[:, None] - centers[None, :, 1]
    d2 = qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy
    gaussians = np.exp(-0.5 * d2)
    alpha_prime = alphas * gaussians
    keep = np.ones(alpha_prime.shape, dtype=bool)
    if options.sigma_cutoff is not None:
        keep &= d2 <= options.sigma_cutoff**2
    if options.alpha_cutoff is not None:
        keep &= alpha_prime >= options.alpha_cutoff
    alpha_prime = np.where(keep, alpha_prime, 0.0)
    trans = np.cumprod(1.0 - alpha_prime, axis=1)
    trans = np.concatenate([np.ones((len(px), 1)), trans[:, :-1]], axis=1)
    return dx, dy, d2, gaussians, alpha_prime, keep, trans, alpha_prime * trans


def render(scene: Scene, view: CameraView, options: RenderOptions = RenderOptions()) -> RenderOutput:
    H, W = view.height, view.width
    color = np.zeros((H, W, 3))
    prob = np.zeros((H, W))
    alpha = np.zeros((H, W))
    depth = np.zeros((H, W))

    proj, order, tiles = _prepare(scene, view, options)
    tape = RenderTape(scene_digest=scene_hash(scene), view=view, options=options, order=order, tiles=tiles)
    if len(order) == 0:
        return RenderOutput(color=color, prob=prob, alpha=alpha, depth=depth, tape=tape)

    centers = proj["centers"][order]
    qa, qb, qc, _ = _conic(proj["cov2d"][order])
    depths = proj["depths"][order]
    alphas = sigmoid(scene.opacity_logits)[order]
    colors = scene.colors.astype(np.float64)[order]
    segs = sigmoid(scene.seg_logits)[order]

    def run_tile(tile):
        y0, y1, x0, x1, rows = tile
        if len(rows) == 0:
            return tile, None
        px, py = _pixel_grid(y0, y1, x0, x1)
        *_, w = _tile_weights(px, py, centers[rows], qa[rows], qb[rows], qc[rows], alphas[rows], options)
        shape = (y1 - y0, x1 - x0)
        return tile, (
            (w @ colors[rows]).reshape(shape + (3,)),
            (w @ segs[rows]).reshape(shape),
            w.sum(axis=1).reshape(shape),
            (w @ depths[rows]).reshape(shape),
        )

    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            results = list(pool.map(run_tile, tiles))
    else:
        results = [run_tile(t) for t in tiles]

    for (y0, y1, x0, x1, _), imgs in results:
        if imgs is None:
            continue
        color[y0:y1, x0:x1] = imgs[0]
        prob[y0:y1, x0:x1] = imgs[1]
        alpha[y0:y1, x0:x1] = imgs[2]
        depth[y0:y1, x0:x1] = imgs[3]

    return RenderOutput(color=color, prob=prob, alpha=alpha, depth=depth, tape=tape)


_DR_DQ_SIGNS = None  # built lazily below


def _rotation_jacobian(qhat: np.ndarray) -> np.ndarray:
    """dR/dq for normalized quaternions: (N, 4, 3, 3)."""
    w, x, y, z = qhat[:, 0], qhat[:, 1], qhat[:, 2], qhat[:, 3]
    zero = np.zeros_like(w)
    dw = np.stack(
        [zero, -z, y, z, zero, -x, -y, x, zero], axis=-1
    ).reshape(-1, 3, 3)
    dx = np.stack(
        [zero, y, z, y, -2 * x, -w, z, w, -2 * x], axis=-1
    ).reshape(-1, 3, 3)
    dy = np.stack(
        [-2 * y, x, w, x, zero, z, -w, z, -2 * y], axis=-1
    ).reshape(-1, 3, 3)
    dz = np.stack(
        [-2 * z, -w, x, w, -2 * z, y, x, y, zero], axis=-1
    ).reshape(-1, 3, 3)
    return 2.0 * np.stack([dw, dx, dy, dz], axis=1)


def backward(
    scene: Scene,
    view: CameraView,
    output: RenderOutput,
    color_grad: np.ndarray | None = None,
    prob_grad: np.ndarray | None = None,
    alpha_grad: np.ndarray | None = None,
) -> ParamGradients:
    """Gradients of sum(channel * upstream_grad) over all trainable params.

    ``output`` must have been rendered from this exact scene and view; the
    tape's content digest enforces that. Frozen rows come back exactly zero.
    """
    tape = output.tape
    if tape.scene_digest != scene_hash(scene):
        raise TapeMismatchError("tape was recorded for a different scene state")
    if tape.view != view:
        raise TapeMismatchError("tape was recorded for a different view")
    options = tape.options

    n = len(scene)
    grads = ParamGradients.zeros(n)
    order = tape.order
    if len(order) == 0 or (color_grad is None and prob_grad is None and alpha_grad is None):
        return grads

    H, W = view.height, view.width
    gC = np.zeros((H, W, 3)) if color_grad is None else np.asarray(color_grad, dtype=np.float64)
    gP = np.zeros((H, W)) if prob_grad is None else np.asarray(prob_grad, dtype=np.float64)
    gA = np.zeros((H, W)) if alpha_grad is None else np.asarray(alpha_grad, dtype=np.float64)
    if gC.shape != (H, W, 3) or gP.shape != (H, W) or gA.shape != (H, W):
        raise ValueError("upstream gradient image shape does not match the view")

    proj = project_scene(scene, view)
    centers = proj["centers"][order]
    cov2d = proj["cov2d"][order]
    qa, qb, qc, _ = _conic(cov2d)
    alphas = sigmoid(scene.opacity_logits)[order]
    colors = scene.colors.astype(np.float64)[order]
    segs = sigmoid(scene.seg_logits)[order]

    m = len(order)
    g_center = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))  # d/d(qa, qb, qc) with qb the tied off-diagonal
    g_alpha = np.zeros(m)
    g_color = np.zeros((m, 3))
    g_seg = np.zeros(m)

    def run_tile(tile):
        y0, y1, x0, x1, rows = tile
        if len(rows) == 0:
            return rows, None
        px, py = _pixel_grid(y0, y1, x0, x1)
        dx, dy, _, gaussians, alpha_prime, keep, trans, w = _tile_weights(
            px, py, centers[rows], qa[rows], qb[rows], qc[rows], alphas[rows], options
        )
        gC_t = gC[y0:y1, x0:x1].reshape(-1, 3)
        gP_t = gP[y0:y1, x0:x1].reshape(-1)
        gA_t = gA[y0:y1, x0:x1].reshape(-1)

        u = gC_t @ colors[rows].T + gP_t[:, None] * segs[rows][None, :] + gA_t[:, None]
        uw = u * w
        suffix = uw[:, ::-1].cumsum(axis=1)[:, ::-1] - uw
        d_alpha_prime = np.where(keep, u * trans - suffix / (1.0 - alpha_prime), 0.0)

        gd2 = -0.5 * alpha_prime * d_alpha_prime
        qa_r, qb_r, qc_r = qa[rows], qb[rows], qc[rows]
        return rows, (
            (gaussians * np.where(keep, d_alpha_prime, 0.0)).sum(axis=0),
            w.T @ gC_t,
            w.T @ gP_t,
            np.stack(
                [
                    (gd2 * -(2.0 * qa_r * dx + 2.0 * qb_r * dy)).sum(axis=0),
                    (gd2 * -(2.0 * qb_r * dx + 2.0 * qc_r * dy)).sum(axis=0),
                ],
                axis=1,
            ),
            np.stack(
                [(gd2 * dx * dx).sum(axis=0), (gd2 * 2.0 * dx * dy).sum(axis=0), (gd2 * dy * dy).sum(axis=0)],
                axis=1,
            ),
        )

    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            results = list(pool.map(run_tile, tape.tiles))
    else:
        results = [run_tile(t) for t in tape.tiles]

    # fixed tile order keeps the reduction bitwise deterministic
    for rows, partial in results:
        if partial is None:
            continue
        ga, gc_p, gs_p, gmu, gcn = partial
        g_alpha[rows] += ga
        g_color[rows] += gc_p
        g_seg[rows] += gs_p
        g_center[rows] += gmu
        g_conic[rows] += gcn

    # ---- chain from screen-space quantities to kernel parameters ----------
    W_rot = proj["W"]
    t = proj["t"][order]
    J = proj["J"][order]
    A = proj["A"][order]
    sigma3 = proj["sigma"][order]
    B = proj["B"][order]
    R = proj["R"][order]
    s = proj["s"][order]
    f = view.focal

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    Q = np.empty_like(cov2d)
    Q[:, 0, 0] = cov2d[:, 1, 1] / det
    Q[:, 1, 1] = cov2d[:, 0, 0] / det
    Q[:, 0, 1] = Q[:, 1, 0] = -cov2d[:, 0, 1] / det

    GQ = np.empty_like(cov2d)
    GQ[:, 0, 0] = g_conic[:, 0]
    GQ[:, 0, 1] = GQ[:, 1, 0] = 0.5 * g_conic[:, 1]
    GQ[:, 1, 1] = g_conic[:, 2]
    gM = -Q @ GQ @ Q

    gSigma = np.swapaxes(A, 1, 2) @ gM @ A
    gA_mat = 2.0 * gM @ A @ sigma3
    gJ = gA_mat @ W_rot.T

    tz = t[:, 2]
    gt = np.einsum("nij,nj->ni", np.swapaxes(J, 1, 2), g_center)
    gt[:, 0] += gJ[:, 0, 2] * (-f / tz**2)
    gt[:, 1] += gJ[:, 1, 2] * (-f / tz**2)
    gt[:, 2] += (
        (gJ[:, 0, 0] + gJ[:, 1, 1]) * (-f / tz**2)
        + gJ[:, 0, 2] * (2.0 * f * t[:, 0] / tz**3)
        + gJ[:, 1, 2] * (2.0 * f * t[:, 1] / tz**3)
    )
    g_position = gt @ W_rot

    gB = 2.0 * gSigma @ B
    g_scale = np.einsum("nij,nij->nj", R, gB)
    g_log_scale = g_scale * s

    gR = gB * s[:, None, :]
    qhat = scene.rotations.astype(np.float64)[order]
    norms = np.linalg.norm(qhat, axis=1, keepdims=True)
    qhat = qhat / norms
    dRdq = _rotation_jacobian(qhat)
    g_qhat = np.einsum("nij,naij->na", gR, dRdq)
    g_rot = (g_qhat - qhat * (g_qhat * qhat).sum(axis=1, keepdims=True)) / norms

    grads.position[order] = g_position
    grads.log_scale[order] = g_log_scale
    grads.rotation[order] = g_rot
    grads.color[order] = g_color
    grads.opacity_logit[order] = g_alpha * alphas * (1.0 - alphas)
    grads.seg_logit[order] = g_seg * segs * (1.0 - segs)

    _zero_frozen(scene, grads)
    return grads


def _zero_frozen(scene: Scene, grads: ParamGradients) -> None:
    geom = scene.trainable_in("geometry")
    grads.position[~geom] = 0.0
    grads.log_scale[~geom] = 0.0
    grads.rotation[~geom] = 0.0
    grads.color[~scene.trainable_in("color")] = 0.0
    grads.opacity_logit[~scene.trainable_in("opacity")] = 0.0
    grads.seg_logit[~scene.trainable_in("seg")] = 0.0


def render_silhouette(scene: Scene, which, view: CameraView, options: RenderOptions = RenderOptions()) -> np.ndarray:
    """Binary mask of the selected kernels' footprint: the sub-scene alpha
    channel thresholded at 0.5. ``which`` is a mask, index array, or
    predicate as in ``freeze``."""
    if callable(which):
        mask = np.asarray(which(scene), dtype=bool)
    else:
        mask = np.asarray(which)
        if mask.dtype != bool:
            idx = mask.astype(np.int64)
            mask = np.zeros(len(scene), dtype=bool)
            mask[idx] = True
    sub = scene.subset(mask)
    if len(sub) == 0:
        return np.zeros((view.height, view.width), dtype=bool)
    return render(sub, view, options).alpha >= 0.5


def render_brute_force(scene: Scene, view: CameraView, options: RenderOptions = RenderOptions()) -> dict:
    """Reference renderer: every kernel composited at every pixel, sorted
    front-to-back, no tiling. Projection is rebuilt here from scratch
    (scipy rotations, homogeneous matrices, generic matrix inverse) so it
    shares no code with the fast path beyond the camera conventions."""
    from scipy.spatial.transform import Rotation

    H, W = view.height, view.width
    color = np.zeros((H, W, 3))
    prob = np.zeros((H, W))
    alpha = np.zeros((H, W))
    depth = np.zeros((H, W))
    if len(scene) == 0:
        return {"color": color, "prob": prob, "alpha": alpha, "depth": depth}

    az = np.radians(view.azimuth)
    el = np.radians(view.elevation)
    look_at = np.asarray(view.look_at, dtype=np.float64)
    cam_pos = look_at + view.radius * np.array(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
    )
    forward = look_at - cam_pos
    forward /= np.linalg.norm(forward)
    up = np.asarray(view.up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = -np.cross(right, forward)
    world_to_cam = np.eye(4)
    world_to_cam[:3, :3] = np.stack([right, down, forward])
    world_to_cam[:3, 3] = -world_to_cam[:3, :3] @ cam_pos

    focal = 0.5 * view.height / np.tan(np.radians(view.fov_y) / 2)
    K = np.array([[focal, 0.0, view.width / 2.0], [0.0, focal, view.height / 2.0], [0.0, 0.0, 1.0]])

    # wxyz -> scipy's xyzw
    quats = scene.rotations.astype(np.float64)
    rot = Rotation.from_quat(np.concatenate([quats[:, 1:], quats[:, :1]], axis=1)).as_matrix()
    scales = scene.scales()
    opac = sigmoid(scene.opacity_logits)
    segs = sigmoid(scene.seg_logits)
    cols = scene.colors.astype(np.float64)

    homo = np.concatenate([scene.positions.astype(np.float64), np.ones((len(scene), 1))], axis=1)
    t = (world_to_cam @ homo.T).T[:, :3]
    entries = []
    for i in range(len(scene)):
        if t[i, 2] <= 0.01:
            continue
        uvw = K @ t[i]
        center = uvw[:2] / uvw[2]
        Jp = np.array(
            [
                [focal / t[i, 2], 0.0, -focal * t[i, 0] / t[i, 2] ** 2],
                [0.0, focal / t[i, 2], -focal * t[i, 1] / t[i, 2] ** 2],
            ]
        )
        cov3 = rot[i] @ np.diag(scales[i] ** 2) @ rot[i].T
        cov2 = Jp @ world_to_cam[:3, :3] @ cov3 @ world_to_cam[:3, :3].T @ Jp.T + 1e-8 * np.eye(2)
        entries.append((t[i, 2], center, np.linalg.inv(cov2), i))
    entries.sort(key=lambda e: e[0])

    ys, xs = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    trans = np.ones((H, W))
    for z, center, cov_inv, i in entries:
        dx = xs - center[0]
        dy = ys - center[1]
        d2 = cov_inv[0, 0] * dx * dx + 2 * cov_inv[0, 1] * dx * dy + cov_inv[1, 1] * dy * dy
        a_prime = opac[i] * np.exp(-0.5 * d2)
        keep = np.ones((H, W), dtype=bool)
        if options.sigma_cutoff is not None:
            keep &= d2 <= options.sigma_cutoff**2
        if options.alpha_cutoff is not None:
            keep &= a_prime >= options.alpha_cutoff
        a_prime = np.where(keep, a_prime, 0.0)
        w = a_prime * trans
        color += w[:, :, None] * cols[i]
        prob += w * segs[i]
        alpha += w
        depth += w * z
        trans *= 1.0 - a_prime

    return {"color": color, "prob": prob, "alpha": alpha, "depth": depth}

"""Minimal differentiable 3D Gaussian splatting.

Gaussians are projected with the local affine approximation of the pinhole
projection, depth sorted per camera and alpha composited front to back.
Each Gaussian only touches the pixels in a square window large enough that
its weight outside is below ``WINDOW_WEIGHT``. All per-pixel work is done on
a flat (pixel, depth) ordered list of Gaussian-pixel pairs, so the result
does not depend on the order of the Gaussian list.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .geometry import CameraPose, axes_convergence_point

logger = logging.getLogger(__name__)

# splatting constants, kept in one place
T_MIN = 1e-4            # per-pixel compositing stops once transmittance drops below this
COV_EPS = 0.3           # px^2 added to degenerate projected covariances
COND_MAX = 1e8          # projected covariance condition number considered degenerate
ALPHA_MAX = 0.99        # per-splat alpha ceiling, keeps log(1 - alpha) finite
WINDOW_WEIGHT = 1e-7    # Gaussian weight at the border of a splat's pixel window
FAST_WINDOW_WEIGHT = 1.0 / 255.0  # coarser kernel used while fitting scenes
NEAR = 1e-2             # camera-space depth below which a Gaussian is dropped

PARAM_NAMES = ("means", "log_scales", "rotations", "opacity_logits", "colors")


@dataclass
class Gaussian3D:
    mean: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color: np.ndarray

    @property
    def opacity(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.opacity_logit))


@dataclass
class GaussianScene:
    """Struct-of-arrays Gaussian set. ``rotations`` are (w, x, y, z) quaternions."""

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    bounds: np.ndarray = field(default_factory=lambda: np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]))
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        n = len(self.means)
        self.means = np.asarray(self.means, dtype=float).reshape(n, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=float).reshape(n)
        self.colors = np.asarray(self.colors, dtype=float).reshape(n, 3)
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(2, 3)
        self.background = np.asarray(self.background, dtype=float).reshape(3)

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.means[i], self.log_scales[i], self.rotations[i], float(self.opacity_logits[i]), self.colors[i])

    @classmethod
    def empty(cls, bounds=None, background=(0.0, 0.0, 0.0)) -> "GaussianScene":
        kw = {} if bounds is None else {"bounds": bounds}
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)),
                   background=background, **kw)

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian3D], **kw) -> "GaussianScene":
        if not gaussians:
            return cls.empty(**kw)
        return cls(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.color for g in gaussians]),
            **kw,
        )

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, params: dict) -> "GaussianScene":
        vals = {k: np.asarray(v.detach().cpu().numpy() if torch.is_tensor(v) else v, dtype=float) for k, v in params.items()}
        return GaussianScene(**vals, bounds=self.bounds.copy(), background=self.background.copy())

    def subset(self, idx) -> "GaussianScene":
        return GaussianScene(**{k: v[idx] for k, v in self.params().items()}, bounds=self.bounds, background=self.background)

    def concat(self, other: "GaussianScene") -> "GaussianScene":
        merged = {k: np.concatenate([getattr(self, k), getattr(other, k)]) for k in PARAM_NAMES}
        lo = np.minimum(self.bounds[0], other.bounds[0])
        hi = np.maximum(self.bounds[1], other.bounds[1])
        return GaussianScene(**merged, bounds=np.stack([lo, hi]), background=self.background)


# -- scene text format ----------------------------------------------------------

SCENE_HEADER = "# bevloc gaussian scene v1"


def save_scene(path, scene: GaussianScene) -> None:
    lines = [SCENE_HEADER,
             "bounds " + " ".join(repr(float(v)) for v in scene.bounds.ravel()),
             "background " + " ".join(repr(float(v)) for v in scene.background),
             f"count {len(scene)}",
             "# mean(3) log_scale(3) rotation_wxyz(4) opacity_logit color(3)"]
    for i in range(len(scene)):
        g = scene[i]
        vals = [*g.mean, *g.log_scale, *g.rotation, g.opacity_logit, *g.color]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene(path) -> GaussianScene:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != SCENE_HEADER:
        raise ValueError(f"{path}: not a v1 gaussian scene file")
    header = {}
    rows = []
    for line in lines[1:]:
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key in ("bounds", "background", "count"):
            header[key] = [float(v) for v in rest.split()]
        else:
            rows.append([float(v) for v in line.split()])
    a = np.array(rows, dtype=float).reshape(-1, 14)
    if len(a) != int(header["count"][0]):
        raise ValueError(f"{path}: expected {int(header['count'][0])} gaussians, found {len(a)}")
    return GaussianScene(a[:, 0:3], a[:, 3:6], a[:, 6:10], a[:, 10], a[:, 11:14],
                         bounds=np.array(header["bounds"]).reshape(2, 3), background=header["background"])


# -- rasterizer -------------------------------------------------------------------

def _quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    return torch.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], dim=-1).reshape(*q.shape[:-1], 3, 3)


def _matvec3(M: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    # explicit sums keep every element's rounding independent of batch layout
    return torch.stack([M[..., r, 0] * v[..., 0] + M[..., r, 1] * v[..., 1] + M[..., r, 2] * v[..., 2] for r in range(3)], dim=-1)


def _matmul3(A: torch.Tensor, B: torch.Tensor) -> torch.Tensor:
    rows = []
    for r in range(3):
        rows.append(torch.stack([A[..., r, 0] * B[..., 0, c] + A[..., r, 1] * B[..., 1, c] + A[..., r, 2] * B[..., 2, c]
                                 for c in range(B.shape[-1])], dim=-1))
    return torch.stack(rows, dim=-2)


@dataclass
class RenderOutput:
    image: torch.Tensor          # (C, H, W, 3)
    accumulated: torch.Tensor    # (C, H, W) total alpha weight composited per pixel
    transmittance: torch.Tensor  # (C, H, W) residual transmittance multiplying the background
    n_pairs: int = 0


def _as_tensors(params: dict, dtype) -> dict[str, torch.Tensor]:
    return {k: (v if torch.is_tensor(v) else torch.as_tensor(np.asarray(v), dtype=dtype)) for k, v in params.items()}


def rasterize(params: dict, poses: Sequence[CameraPose], background, dtype=torch.float64,
              window_weight: float = WINDOW_WEIGHT) -> RenderOutput:
    """Differentiable front-to-back splatting of Gaussians into every pose.

    ``params`` maps the names in ``PARAM_NAMES`` to arrays or tensors; tensors
    with ``requires_grad`` receive gradients. All poses must share one image size.
    A larger ``window_weight`` trades kernel tails for speed.
    """
    win_k = math.sqrt(2.0 * math.log(1.0 / window_weight))
    p = _as_tensors(params, dtype)
    dtype = p["means"].dtype
    k0 = poses[0].intrinsics
    H, W = k0.height, k0.width
    if any(q.intrinsics.width != W or q.intrinsics.height != H for q in poses):
        raise ValueError("all poses in one rasterize call must share the image size")
    n_cam = len(poses)
    bg = torch.as_tensor(np.asarray(background, dtype=float), dtype=dtype)
    n_pix = n_cam * H * W
    N = p["means"].shape[0]

    if N == 0:
        ones = torch.ones(n_cam, H, W, dtype=dtype)
        return RenderOutput(bg.expand(n_cam, H, W, 3).clone(), torch.zeros(n_cam, H, W, dtype=dtype), ones, 0)

    Rw = torch.as_tensor(np.stack([q.rotation for q in poses]), dtype=dtype)              # (C,3,3)
    cam_pos = torch.as_tensor(np.stack([q.position for q in poses]), dtype=dtype)         # (C,3)
    intr = torch.as_tensor(np.array([[q.intrinsics.focal_px, q.intrinsics.cx, q.intrinsics.cy] for q in poses]), dtype=dtype)

    # world covariance R S S^T R^T
    Rg = _quat_to_rotmat(p["rotations"])
    s2 = torch.exp(2.0 * p["log_scales"])
    cov3 = _matmul3(Rg * s2[:, None, :], Rg.transpose(-1, -2))                            # (N,3,3)

    # camera-space means for every (camera, gaussian)
    rel = p["means"][None, :, :] - cam_pos[:, None, :]                                    # (C,N,3)
    pc = _matvec3(Rw[:, None], rel)                                                       # (C,N,3)
    z_all = pc[..., 2].detach()
    vis = z_all > NEAR
    cam_idx, g_idx = torch.nonzero(vis, as_tuple=True)
    if cam_idx.numel() == 0:
        ones = torch.ones(n_cam, H, W, dtype=dtype)
        return RenderOutput(bg.expand(n_cam, H, W, 3).clone(), torch.zeros(n_cam, H, W, dtype=dtype), ones, 0)

    t = pc[cam_idx, g_idx]
    f, cx, cy = intr[cam_idx].unbind(-1)
    tx, ty, tz = t.unbind(-1)
    u = f * tx / tz + cx
    v = f * ty / tz + cy

    # projected covariance J W Sigma W^T J^T
    Rc = Rw[cam_idx]
    cov_cam = _matmul3(_matmul3(Rc, cov3[g_idx]), Rc.transpose(-1, -2))
    zero = torch.zeros_like(tz)
    J = torch.stack([torch.stack([f / tz, zero, -f * tx / (tz * tz)], -1),
                     torch.stack([zero, f / tz, -f * ty / (tz * tz)], -1)], -2)              # (M,2,3)
    JS = torch.stack([torch.stack([J[:, i, 0] * cov_cam[:, 0, c] + J[:, i, 1] * cov_cam[:, 1, c] + J[:, i, 2] * cov_cam[:, 2, c]
                                   for c in range(3)], -1) for i in range(2)], -2)
    a = (JS[:, 0, :] * J[:, 0, :]).sum(-1)
    b = (JS[:, 0, :] * J[:, 1, :]).sum(-1)
    d = (JS[:, 1, :] * J[:, 1, :]).sum(-1)
    with torch.no_grad():
        half_tr = 0.5 * (a + d)
        disc = torch.sqrt(torch.clamp(0.25 * (a - d) ** 2 + b * b, min=0.0))
        lmax, lmin = half_tr + disc, half_tr - disc
        degenerate = (lmin <= 0) | (lmax > COND_MAX * lmin)
    eps = degenerate.to(dtype) * COV_EPS
    a = a + eps
    d = d + eps
    det = a * d - b * b
    conic_a, conic_b, conic_d = d / det, -b / det, a / det

    with torch.no_grad():
        lmax = 0.5 * (a + d) + torch.sqrt(torch.clamp(0.25 * (a - d) ** 2 + b * b, min=0.0))
        radius = win_k * torch.sqrt(lmax)
        radius = torch.clamp(radius, max=float(2 * max(H, W)))
        ud, vd = u.detach(), v.detach()
        x0 = torch.clamp(torch.ceil(ud - radius - 0.5), min=0).long()
        x1 = torch.clamp(torch.floor(ud + radius - 0.5), max=W - 1).long()
        y0 = torch.clamp(torch.ceil(vd - radius - 0.5), min=0).long()
        y1 = torch.clamp(torch.floor(vd + radius - 0.5), max=H - 1).long()
        wx = torch.clamp(x1 - x0 + 1, min=0)
        wy = torch.clamp(y1 - y0 + 1, min=0)
        keep = (wx > 0) & (wy > 0)
        # canonical order: camera, then depth, then gaussian index (pairs are already index ordered)
        order = torch.argsort(z_all[cam_idx, g_idx], stable=True)
        order = order[torch.argsort(cam_idx[order], stable=True)]
        order = order[keep[order]]

    if order.numel() == 0:
        ones = torch.ones(n_cam, H, W, dtype=dtype)
        return RenderOutput(bg.expand(n_cam, H, W, 3).clone(), torch.zeros(n_cam, H, W, dtype=dtype), ones, 0)

    with torch.no_grad():
        counts = (wx * wy)[order]
        splat = torch.repeat_interleave(order, counts)                                   # splat id per pair
        starts = torch.cumsum(counts, 0) - counts
        local = torch.arange(splat.numel()) - torch.repeat_interleave(starts, counts)
        px = x0[splat] + local % wx[splat]
        py = y0[splat] + local // wx[splat]
        dxd = px.to(dtype) + 0.5 - ud[splat]
        dyd = py.to(dtype) + 0.5 - vd[splat]
        pw = conic_a.detach()[splat] * dxd * dxd + 2 * conic_b.detach()[splat] * dxd * dyd + conic_d.detach()[splat] * dyd * dyd
        inside = pw <= win_k ** 2
        splat, px, py = splat[inside], px[inside], py[inside]
        pix = cam_idx[splat] * (H * W) + py * W + px
        by_pix = torch.argsort(pix, stable=True)
        splat, px, py, pix = splat[by_pix], px[by_pix], py[by_pix], pix[by_pix]

    dx = px.to(dtype) + 0.5 - u[splat]
    dy = py.to(dtype) + 0.5 - v[splat]
    power = -0.5 * (conic_a[splat] * dx * dx + 2 * conic_b[splat] * dx * dy + conic_d[splat] * dy * dy)
    opacity = torch.sigmoid(p["opacity_logits"])[g_idx[splat]]
    # subtracting the border weight makes each splat fall continuously to zero at its window edge
    alpha = torch.clamp(opacity * torch.clamp(torch.exp(power) - window_weight, min=0.0), max=ALPHA_MAX)
    log_t = torch.log1p(-alpha)

    # exclusive per-pixel cumulative log transmittance from one global cumsum
    log_t64 = log_t.double()
    excl = torch.cumsum(log_t64, 0) - log_t64
    with torch.no_grad():
        first = torch.ones_like(pix, dtype=torch.bool)
        first[1:] = pix[1:] != pix[:-1]
        seg_start = torch.cummax(torch.where(first, torch.arange(pix.numel()), torch.zeros_like(pix)), 0).values
    excl = excl - excl[seg_start]
    T = torch.exp(excl).to(dtype)
    live = (T.detach() >= T_MIN).to(dtype)
    weight = alpha * T * live

    color = torch.clamp(p["colors"], 0.0, 1.0)[g_idx[splat]]
    img = torch.zeros(n_pix, 3, dtype=dtype).index_add(0, pix, weight[:, None] * color)
    acc = torch.zeros(n_pix, dtype=dtype).index_add(0, pix, weight)
    trans = torch.exp(torch.zeros(n_pix, dtype=dtype).index_add(0, pix, log_t * live))
    img = img + trans[:, None] * bg
    return RenderOutput(img.reshape(n_cam, H, W, 3), acc.reshape(n_cam, H, W), trans.reshape(n_cam, H, W), int(pix.numel()))


def render(scene: GaussianScene, pose: CameraPose) -> np.ndarray:
    """HxWx3 image of the scene in [0, 1]."""
    return render_many(scene, [pose])[0]


def render_many(scene: GaussianScene, poses: Sequence[CameraPose], chunk: int = 8,
                window_weight: float = WINDOW_WEIGHT) -> np.ndarray:
    out = []
    with torch.no_grad():
        for i in range(0, len(poses), chunk):
            r = rasterize(scene.params(), poses[i:i + chunk], scene.background, window_weight=window_weight)
            out.append(r.image.numpy())
    return np.clip(np.concatenate(out), 0.0, 1.0)


def render_gradients(scene: GaussianScene, pose: CameraPose, loss_image_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of ``sum(loss_image_grad * render(scene, pose))`` w.r.t. every Gaussian parameter."""
    params = {k: torch.tensor(v, dtype=torch.float64, requires_grad=True) for k, v in scene.params().items()}
    if len(scene) == 0:
        return {k: v.detach().numpy().copy() for k, v in params.items()}
    img = rasterize(params, [pose], scene.background).image[0]
    g = torch.as_tensor(np.asarray(loss_image_grad, dtype=float))
    grads = torch.autograd.grad((img * g).sum(), list(params.values()), allow_unused=True)
    return {k: (np.zeros_like(scene.params()[k]) if gr is None else gr.numpy()) for k, gr in zip(params, grads)}


# -- scene fitting ----------------------------------------------------------------

@dataclass
class FitResult:
    scene: GaussianScene
    initial_loss: float
    final_loss: float
    history: list[float]

    def __iter__(self):
        yield self.scene
        yield self.final_loss


# per-parameter step multipliers; the means' entry is scaled by the bounds diagonal
STEP_SCALES = {"means": 0.01, "log_scales": 1.0, "rotations": 0.5, "opacity_logits": 5.0, "colors": 1.0}


def default_bounds(poses: Sequence[CameraPose]) -> np.ndarray:
    """Cube around the point the cameras look at, half-width half the mean camera distance."""
    c = axes_convergence_point(poses)
    half = 0.5 * float(np.mean([np.linalg.norm(p.position - c) for p in poses]))
    return np.stack([c - half, c + half])


def init_scene(n_gaussians: int, bounds: np.ndarray, background, seed: int = 0, scale_factor: float = 0.5) -> GaussianScene:
    """Gaussians uniformly at random inside ``bounds`` with a spacing-sized isotropic scale."""
    rng = np.random.default_rng(seed)
    bounds = np.asarray(bounds, dtype=float)
    extent = bounds[1] - bounds[0]
    means = bounds[0] + rng.random((n_gaussians, 3)) * extent
    vol = float(np.prod(np.maximum(extent, 1e-6)))
    spacing = (vol / n_gaussians) ** (1.0 / 3.0)
    log_scales = np.full((n_gaussians, 3), math.log(scale_factor * spacing))
    rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n_gaussians, 1))
    opacity_logits = np.zeros(n_gaussians)
    colors = rng.random((n_gaussians, 3))
    return GaussianScene(means, log_scales, rotations, opacity_logits, colors, bounds=bounds, background=background)


def fit_scene(
    frames: Sequence[np.ndarray],
    poses: Sequence[CameraPose],
    n_gaussians: int = 512,
    iters: int = 200,
    step_size: float = 0.01,
    bounds=None,
    background=None,
    seed: int = 0,
    max_halvings: int = 10,
    patience: int = 3,
    dtype=torch.float32,
    window_weight: float = WINDOW_WEIGHT,
    init_scale: float = 0.5,
    log_every: int = 0,
) -> FitResult:
    """Fit a Gaussian scene to posed frames by minimizing the mean L1 photometric error.

    Steps follow Adam-preconditioned descent directions with backtracking: a step
    that raises the loss is halved up to ``max_halvings`` times and dropped if it
    still does, so the loss history is non-increasing. Fitting stops early after
    ``patience`` consecutive dropped steps.
    """
    if len(frames) < 2:
        raise ValueError("insufficient views: fit_scene needs at least 2 frames")
    if len(frames) != len(poses):
        raise ValueError(f"got {len(frames)} frames but {len(poses)} poses")
    if n_gaussians < 1:
        raise ValueError("n_gaussians must be >= 1")
    target = torch.as_tensor(np.stack([np.asarray(f, dtype=float)[..., :3] for f in frames]), dtype=dtype)
    if bounds is None:
        bounds = default_bounds(poses)
    bounds = np.asarray(bounds, dtype=float)
    if background is None:
        background = np.median(target.reshape(-1, 3).numpy(), axis=0)
    scene = init_scene(n_gaussians, bounds, background, seed, init_scale)
    ww = window_weight
    if iters <= 0:
        loss0 = _l1(scene.params(), poses, background, target, dtype, ww)[0].item()
        return FitResult(scene, loss0, loss0, [loss0])

    lo = torch.as_tensor(bounds[0], dtype=dtype)
    hi = torch.as_tensor(bounds[1], dtype=dtype)
    diag = float(np.linalg.norm(bounds[1] - bounds[0]))
    lrs = {k: step_size * s * (diag if k == "means" else 1.0) for k, s in STEP_SCALES.items()}
    theta = {k: torch.tensor(v, dtype=dtype) for k, v in scene.params().items()}
    m = {k: torch.zeros_like(v) for k, v in theta.items()}
    s = {k: torch.zeros_like(v) for k, v in theta.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8

    loss, grads = _loss_and_grad(theta, poses, background, target, ww)
    history = [loss]
    t_adam = 0
    stalled = 0
    for it in range(1, iters + 1):
        t_adam += 1
        direction = {}
        for k in theta:
            m[k].mul_(b1).add_(grads[k], alpha=1 - b1)
            s[k].mul_(b2).addcmul_(grads[k], grads[k], value=1 - b2)
            direction[k] = (m[k] / (1 - b1 ** t_adam)) / (torch.sqrt(s[k] / (1 - b2 ** t_adam)) + eps)
        scale = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            cand = {k: theta[k] - scale * lrs[k] * direction[k] for k in theta}
            cand["means"] = torch.minimum(torch.maximum(cand["means"], lo), hi)
            new_loss, new_grads = _loss_and_grad(cand, poses, background, target, ww)
            if new_loss <= loss:
                accepted = True
                break
            scale *= 0.5
        if accepted:
            theta, loss, grads = cand, new_loss, new_grads
            stalled = 0
        else:
            stalled += 1
            # the preconditioned direction went stale; restart the moments from the current gradient
            t_adam = 0
            for k in theta:
                m[k].zero_()
                s[k].zero_()
        history.append(loss)
        if log_every and it % log_every == 0:
            logger.info("fit iter %d loss %.5f", it, loss)
        if stalled >= patience:
            logger.debug("fit stopped at iter %d after %d rejected steps", it, stalled)
            break
    fitted = scene.with_params(theta)
    return FitResult(fitted, history[0], history[-1], history)


def _l1(params, poses, background, target, dtype, window_weight):
    out = rasterize(params, poses, background, dtype=dtype, window_weight=window_weight)
    return (out.image - target).abs().double().mean(), out


def _loss_and_grad(theta, poses, background, target, window_weight):
    leaf = {k: v.detach().requires_grad_(True) for k, v in theta.items()}
    loss, _ = _l1(leaf, poses, background, target, target.dtype, window_weight)
    grads = torch.autograd.grad(loss, list(leaf.values()), allow_unused=True)
    return loss.item(), {k: (torch.zeros_like(leaf[k]) if g is None else g) for k, g in zip(leaf, grads)}

"""Drone video to BEV sequence: fit a Gaussian scene to the posed frames, then render it from above."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image

from .geometry import CameraPose, ConfigError, Intrinsics, axes_convergence_point, bev_pose_sequence
from .splat import FAST_WINDOW_WEIGHT, FitResult, GaussianScene, fit_scene, render_many


@dataclass(frozen=True)
class FitConfig:
    n_gaussians: int = 512
    iters: int = 150
    step_size: float = 0.02
    fit_scale: float = 0.5           # frames are downsampled by this factor before fitting
    half_extent: float = 10.0        # horizontal half-size of the reconstruction box
    height: float = 4.0              # vertical size of the reconstruction box above ground
    init_scale: float = 0.3
    patience: int = 3
    window_weight: float = FAST_WINDOW_WEIGHT
    seed: int = 0


@dataclass(frozen=True)
class BEVConfig:
    out_size: int = 64
    crop_fraction: float = 0.8       # train-mode center crop, fraction of the rendered side
    test_crop_fraction: float = 0.8
    base_height: float = 20.0
    footprint: float = 16.0          # ground width kept after cropping, at base height
    height_growth: float | None = None   # default: 2% of base_height per frame
    yaw_step_deg: float | None = None    # default: 360 / n

    def crop_for(self, mode: str) -> float:
        return self.crop_fraction if mode == "train" else self.test_crop_fraction

    @property
    def focal_px(self) -> float:
        return self.out_size * self.base_height / self.footprint

    def intrinsics(self, mode: str = "test") -> Intrinsics:
        """Uncropped BEV camera; its central ``out_size`` pixels survive the crop."""
        crop = self.crop_for(mode)
        if not 0 < crop <= 1:
            raise ConfigError(f"crop fraction must be in (0, 1], got {crop}")
        return Intrinsics.centered(int(round(self.out_size / crop)), focal_px=self.focal_px)


@dataclass
class BEVSequence:
    frames: list[np.ndarray]
    poses: list[CameraPose]
    mode: str
    crop_fraction: float
    scene: GaussianScene | None = field(default=None, repr=False)
    fit: FitResult | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.frames) != len(self.poses):
            raise ValueError(f"{len(self.frames)} BEV frames but {len(self.poses)} poses")

    def __len__(self) -> int:
        return len(self.frames)


def resize(image: np.ndarray, size: int) -> np.ndarray:
    """Area-averaged resize through Pillow, float images in [0, 1]."""
    img = np.asarray(image, dtype=np.float32)
    chans = [np.asarray(Image.fromarray(img[..., c], mode="F").resize((size, size), Image.BOX)) for c in range(img.shape[2])]
    return np.clip(np.stack(chans, axis=-1).astype(float), 0.0, 1.0)


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    top, left = (h - size) // 2, (w - size) // 2
    return image[top:top + size, left:left + size]


def reconstruct(video_frames: Sequence[np.ndarray], video_poses: Sequence[CameraPose], cfg: FitConfig) -> FitResult:
    """Fit a scene to the drone frames inside a box centered under the cameras' common focus point."""
    if len(video_frames) == 0:
        raise ValueError("video_frames must be nonempty")
    if len(video_frames) != len(video_poses):
        raise ValueError(f"{len(video_frames)} frames but {len(video_poses)} poses")
    frames, poses = list(video_frames), list(video_poses)
    if cfg.fit_scale != 1.0:
        size = int(round(frames[0].shape[0] * cfg.fit_scale))
        frames = [resize(f, size) for f in frames]
        poses = [p.with_intrinsics(p.intrinsics.scaled(cfg.fit_scale)) for p in poses]
    c = axes_convergence_point(video_poses) if len(video_poses) >= 2 else video_poses[0].position
    lo = np.array([c[0] - cfg.half_extent, c[1] - cfg.half_extent, 0.0])
    hi = np.array([c[0] + cfg.half_extent, c[1] + cfg.half_extent, cfg.height])
    return fit_scene(frames, poses, cfg.n_gaussians, cfg.iters, cfg.step_size, bounds=np.stack([lo, hi]),
                     seed=cfg.seed, window_weight=cfg.window_weight, init_scale=cfg.init_scale, patience=cfg.patience)


def render_bevs(scene: GaussianScene, n: int, mode: str, bev: BEVConfig, window_weight: float = FAST_WINDOW_WEIGHT):
    center = np.array([*(0.5 * (scene.bounds[0, :2] + scene.bounds[1, :2])), scene.bounds[0, 2]])
    poses = bev_pose_sequence(center, n, mode, bev.base_height, bev.height_growth, bev.yaw_step_deg, bev.intrinsics(mode))
    frames = [center_crop(img, bev.out_size) for img in render_many(scene, poses, window_weight=window_weight)]
    return frames, poses


def video_to_bev(video_frames, video_poses, fit_config: FitConfig = FitConfig(), bev_config: BEVConfig = BEVConfig(),
                 mode: str = "test") -> BEVSequence:
    """One BEV per video frame, rendered from a scene fitted to the whole video."""
    fit = reconstruct(video_frames, video_poses, fit_config)
    frames, poses = render_bevs(fit.scene, len(video_frames), mode, bev_config, fit_config.window_weight)
    return BEVSequence(frames, poses, mode, bev_config.crop_for(mode), fit.scene, fit)

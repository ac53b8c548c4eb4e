"""Camera poses, drone flight paths, BEV camera placement and baseline view transforms.

Conventions: world up is +z. Cameras follow the pinhole convention with
camera x to the right, y down and z along the optical axis. Pixel (row i,
column j) has its center at image coordinates (j + 0.5, i + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial.transform import Rotation

WORLD_UP = np.array([0.0, 0.0, 1.0])


class ConfigError(ValueError):
    """A configuration value is outside its allowed range."""


@dataclass(frozen=True)
class Intrinsics:
    focal_px: float = 64.0
    cx: float = 32.0
    cy: float = 32.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ConfigError(f"focal_px must be > 0, got {self.focal_px}")
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"image size must be >= 1, got {self.width}x{self.height}")

    @classmethod
    def centered(cls, width: int, height: int | None = None, focal_px: float | None = None) -> "Intrinsics":
        height = width if height is None else height
        focal_px = float(width) if focal_px is None else float(focal_px)
        return cls(focal_px, width / 2.0, height / 2.0, int(width), int(height))

    def scaled(self, factor: float) -> "Intrinsics":
        """Intrinsics of the same camera after resizing the image by ``factor``."""
        w = int(round(self.width * factor))
        h = int(round(self.height * factor))
        return Intrinsics(self.focal_px * factor, self.cx * factor, self.cy * factor, w, h)


def canonical_quaternion(q: Sequence[float]) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with a fixed sign: w > 0, or first nonzero component > 0."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    for c in q:
        if c != 0.0:
            return q if c > 0 else -q
    return q


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return canonical_quaternion([w, x, y, z])


@dataclass(frozen=True)
class CameraPose:
    """Rigid camera pose with intrinsics. ``quaternion`` rotates world vectors into the camera frame."""

    position: np.ndarray
    quaternion: np.ndarray
    intrinsics: Intrinsics = field(default_factory=Intrinsics)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ConfigError(f"quaternion must be unit norm, got |q|={np.linalg.norm(q)}")
        object.__setattr__(self, "quaternion", q)

    @classmethod
    def from_rotation(cls, position, R: np.ndarray, intrinsics: Intrinsics | None = None) -> "CameraPose":
        return cls(position, matrix_to_quat(R), intrinsics or Intrinsics())

    @property
    def rotation(self) -> np.ndarray:
        """3x3 world-to-camera rotation; rows are the camera axes in world coordinates."""
        return quat_to_matrix(self.quaternion)

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[2]

    @property
    def image_up(self) -> np.ndarray:
        """World direction that appears as "up" (decreasing row) in the image."""
        return -self.rotation[1]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.position) @ self.rotation.T

    def project(self, points: np.ndarray) -> np.ndarray:
        """Pixel coordinates (u, v) of world points; points must be in front of the camera."""
        pc = self.world_to_camera(np.atleast_2d(points))
        k = self.intrinsics
        return np.stack([k.focal_px * pc[:, 0] / pc[:, 2] + k.cx, k.focal_px * pc[:, 1] / pc[:, 2] + k.cy], axis=1)

    def with_intrinsics(self, intrinsics: Intrinsics) -> "CameraPose":
        return replace(self, intrinsics=intrinsics)


def look_at(position, target, intrinsics: Intrinsics | None = None, up=WORLD_UP) -> CameraPose:
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:
        raise ConfigError("look_at direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return CameraPose.from_rotation(position, np.stack([right, down, forward]), intrinsics)


@dataclass(frozen=True)
class FlightConfig:
    elevation_deg: float = 45.0
    n_loops: int = 3
    n_frames: int = 24
    radius_start: float = 14.0
    radius_end: float = 8.0
    target_center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0.0 < self.elevation_deg < 90.0:
            raise ConfigError(f"elevation_deg must satisfy 0 < elevation_deg < 90, got {self.elevation_deg}")
        if self.n_loops < 1:
            raise ConfigError(f"n_loops must be >= 1, got {self.n_loops}")
        if self.n_frames < self.n_loops:
            raise ConfigError(f"n_frames must be >= n_loops ({self.n_loops}), got {self.n_frames}")
        if not self.radius_end > 0:
            raise ConfigError(f"radius_end must be > 0, got {self.radius_end}")
        if self.radius_start < self.radius_end:
            raise ConfigError(f"radius_start must be >= radius_end, got {self.radius_start} < {self.radius_end}")


def spiral_azimuths_deg(config: FlightConfig) -> np.ndarray:
    k = np.arange(config.n_frames)
    return 360.0 * config.n_loops * k / config.n_frames


def spiral_radii(config: FlightConfig) -> np.ndarray:
    if config.n_frames == 1:
        return np.array([config.radius_start])
    t = np.arange(config.n_frames) / (config.n_frames - 1)
    return config.radius_start + (config.radius_end - config.radius_start) * t


def spiral_path(config: FlightConfig, intrinsics: Intrinsics | None = None) -> list[CameraPose]:
    """Camera poses circling the target ``n_loops`` times while closing in from ``radius_start`` to ``radius_end``.

    Every camera keeps the configured elevation angle above the target and looks at it.
    """
    center = np.asarray(config.target_center, dtype=float)
    tan_e = math.tan(math.radians(config.elevation_deg))
    poses = []
    for az, r in zip(spiral_azimuths_deg(config), spiral_radii(config)):
        a = math.radians(az)
        pos = center + np.array([r * math.cos(a), r * math.sin(a), r * tan_e])
        poses.append(look_at(pos, center, intrinsics))
    return poses


def bev_pose(scene_center, height: float, yaw_deg: float = 0.0, intrinsics: Intrinsics | None = None) -> CameraPose:
    """Downward-looking camera ``height`` above ``scene_center``.

    At yaw 0 the image right is world +x and image up is world +y; yaw rotates
    the camera counter-clockwise about the vertical axis.
    """
    if not height > 0:
        raise ConfigError(f"BEV height must be > 0, got {height}")
    a = math.radians(float(yaw_deg) % 360.0)
    c, s = math.cos(a), math.sin(a)
    R = np.array([[c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, -1.0]])
    pos = np.asarray(scene_center, dtype=float) + height * WORLD_UP
    return CameraPose.from_rotation(pos, R, intrinsics)


def bev_pose_sequence(
    scene_center,
    n: int,
    mode: str = "test",
    base_height: float = 20.0,
    height_growth: float | None = None,
    yaw_step_deg: float | None = None,
    intrinsics: Intrinsics | None = None,
) -> list[CameraPose]:
    """One BEV pose per video frame: heights grow in both modes, yaw advances only in train mode."""
    if n <= 0:
        raise ConfigError(f"BEV sequence length must be >= 1, got {n}")
    if mode not in ("train", "test"):
        raise ConfigError(f"mode must be 'train' or 'test', got {mode!r}")
    if height_growth is None:
        height_growth = 0.02 * base_height
    if not height_growth > 0:
        raise ConfigError(f"height_growth must be > 0, got {height_growth}")
    if yaw_step_deg is None:
        yaw_step_deg = 360.0 / n
    poses = []
    for i in range(n):
        yaw = i * yaw_step_deg if mode == "train" else 0.0
        poses.append(bev_pose(scene_center, base_height + i * height_growth, yaw, intrinsics))
    return poses


def pose_yaw_deg(pose: CameraPose) -> float:
    """Yaw of a downward-looking pose in [0, 360), as used by ``bev_pose``."""
    right = pose.rotation[0]
    return math.degrees(math.atan2(right[1], right[0])) % 360.0


def axes_convergence_point(poses: Iterable[CameraPose]) -> np.ndarray:
    """Least-squares point closest to all optical axes."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for p in poses:
        d = p.optical_axis
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ p.position
    return np.linalg.lstsq(A, b, rcond=None)[0]


# -- pose table ---------------------------------------------------------------

POSE_TABLE_HEADER = "# bevloc poses v1: x y z qw qx qy qz focal_px cx cy width height"


def format_poses(poses: Sequence[CameraPose]) -> str:
    lines = [POSE_TABLE_HEADER]
    for p in poses:
        k = p.intrinsics
        vals = [*p.position, *p.quaternion, k.focal_px, k.cx, k.cy]
        lines.append(" ".join(repr(float(v)) for v in vals) + f" {k.width} {k.height}")
    return "\n".join(lines) + "\n"


def parse_poses(text: str) -> list[CameraPose]:
    poses = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        f = line.split()
        if len(f) != 12:
            raise ValueError(f"pose line must have 12 fields, got {len(f)}: {line!r}")
        v = [float(x) for x in f[:10]]
        k = Intrinsics(v[7], v[8], v[9], int(f[10]), int(f[11]))
        poses.append(CameraPose(v[0:3], v[3:7], k))
    return poses


def save_poses(path, poses: Sequence[CameraPose]) -> None:
    Path(path).write_text(format_poses(poses))


def load_poses(path) -> list[CameraPose]:
    return parse_poses(Path(path).read_text())


# -- baseline view transforms ---------------------------------------------------

def _sample(image: np.ndarray, rows: np.ndarray, cols: np.ndarray, mode="constant", cval=0.0) -> np.ndarray:
    """Bilinear samples of an HxW or HxWxC image at fractional index coordinates."""
    img = np.asarray(image, dtype=float)
    coords = np.stack([rows.ravel(), cols.ravel()])
    if img.ndim == 2:
        return map_coordinates(img, coords, order=1, mode=mode, cval=cval).reshape(rows.shape)
    chans = [map_coordinates(img[..., c], coords, order=1, mode=mode, cval=cval) for c in range(img.shape[2])]
    return np.stack(chans, axis=-1).reshape(*rows.shape, img.shape[2])


def polar_transform(satellite_image: np.ndarray, output_size: tuple[int, int], background: float = 0.0) -> np.ndarray:
    """Unroll a square overhead image around its center.

    Output row r samples radius proportional to r (row 0 is the image center,
    the last row reaches the inscribed circle); column c samples azimuth
    2*pi*c/width measured clockwise from image-up.
    """
    img = np.asarray(satellite_image)
    if img.shape[0] != img.shape[1]:
        raise ValueError(f"polar_transform needs a square image, got {img.shape[:2]}")
    h_out, w_out = output_size
    s = img.shape[0]
    c0 = (s - 1) / 2.0
    rho = c0 * np.arange(h_out) / max(h_out - 1, 1)
    phi = 2.0 * np.pi * np.arange(w_out) / w_out
    rr, pp = np.meshgrid(rho, phi, indexing="ij")
    rows = c0 - rr * np.cos(pp)
    cols = c0 + rr * np.sin(pp)
    return _sample(img, rows, cols, cval=background)


def spherical_transform(panorama_image: np.ndarray, output_size: int) -> np.ndarray:
    """Top-down view from an equirectangular panorama (rows: zenith to nadir, columns: azimuth).

    The output center samples the nadir row; radius grows toward the horizon,
    which is reached at the inscribed circle. Azimuth is clockwise from image-up
    and maps to panorama column ``phi / (2 pi) * width``.
    """
    pano = np.asarray(panorama_image)
    ph, pw = pano.shape[:2]
    if pw != 2 * ph:
        raise ValueError(f"spherical_transform needs a 2:1 panorama, got {ph}x{pw}")
    n = int(output_size)
    c0 = (n - 1) / 2.0
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    dx, dy = xx - c0, yy - c0
    rho = np.hypot(dx, dy) / max(c0, 0.5)
    phi = np.arctan2(dx, -dy) % (2.0 * np.pi)
    rows = (ph - 1) * (1.0 - 0.5 * rho)
    cols = phi / (2.0 * np.pi) * pw
    # wrap azimuth: append the first column so bilinear sampling crosses the seam
    wrapped = np.concatenate([pano, pano[:, :1]], axis=1)
    return _sample(wrapped, np.clip(rows, 0, ph - 1), cols, mode="nearest")

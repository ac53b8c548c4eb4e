"""Procedural locations, UniV-style dataset rendering and synthetic hard negatives.

A location is a small campus block: one target building at the origin,
3-8 distractor buildings around it and a few flat ground patches, all
axis aligned. Boxes become Gaussian scenes by sampling every visible face
with flat Gaussians, and every view in the dataset is rendered by the
splatting renderer.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .geometry import (CameraPose, ConfigError, FlightConfig, Intrinsics, bev_pose, load_poses, matrix_to_quat,
                       save_poses, spiral_path)
from .splat import GaussianScene, render_many
from .video2bev import BEVConfig, center_crop

logger = logging.getLogger(__name__)

SUPPORTED_FPS = (2, 5, 10)
DEFAULT_ELEVATIONS = (45.0, 30.0)

# roof patterns grouped in families of look-alikes; negatives swap within a family
PATTERN_FAMILIES = ((0, 7), (1, 2, 3), (4, 5, 6))
PATTERN_NAMES = ("solid", "stripes_x", "stripes_y", "checker", "cross", "border", "center_dot", "half")
GROUND_TONES = ((0.42, 0.47, 0.36), (0.48, 0.46, 0.40), (0.38, 0.44, 0.38), (0.45, 0.45, 0.45))


@dataclass(frozen=True)
class Box:
    center: tuple[float, float]
    size: tuple[float, float, float]       # x extent, y extent, height
    roof_color: tuple[float, float, float]
    accent_color: tuple[float, float, float]
    wall_color: tuple[float, float, float]
    pattern: int = 0
    is_target: bool = False


@dataclass(frozen=True)
class GroundPatch:
    center: tuple[float, float]
    size: tuple[float, float]
    color: tuple[float, float, float]


@dataclass(frozen=True)
class Location:
    id: int
    seed: int
    boxes: tuple[Box, ...]
    patches: tuple[GroundPatch, ...]
    ground_color: tuple[float, float, float]

    def __post_init__(self):
        if not self.boxes:
            raise ValueError("location layout must be nonempty")
        n_target = sum(b.is_target for b in self.boxes)
        if n_target != 1:
            raise ValueError(f"location must have exactly one target building, got {n_target}")

    @property
    def target(self) -> Box:
        return next(b for b in self.boxes if b.is_target)

    def layout_hash(self) -> str:
        payload = json.dumps(_layout_dict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "seed": self.seed, **_layout_dict(self)}, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Location":
        d = json.loads(text)
        tup = lambda v: tuple(tup(x) for x in v) if isinstance(v, list) else v  # noqa: E731
        boxes = tuple(Box(**{k: tup(v) for k, v in b.items()}) for b in d["boxes"])
        patches = tuple(GroundPatch(**{k: tup(v) for k, v in p.items()}) for p in d["patches"])
        return cls(d["id"], d["seed"], boxes, patches, tup(d["ground_color"]))


def _layout_dict(loc: Location) -> dict:
    return {"boxes": [asdict(b) for b in loc.boxes], "patches": [asdict(p) for p in loc.patches],
            "ground_color": list(loc.ground_color)}


def _random_color(rng, sat=(0.35, 0.9), val=(0.45, 0.95)) -> tuple[float, float, float]:
    return tuple(colorsys.hsv_to_rgb(rng.random(), rng.uniform(*sat), rng.uniform(*val)))


def generate_location(seed: int, id: int) -> Location:
    """Deterministic layout for ``(seed, id)``: one target building plus 3-8 distractors."""
    rng = np.random.default_rng([seed, id])
    boxes = []

    def make_box(center, size, target):
        roof = _random_color(rng)
        accent = _random_color(rng)
        wall = tuple(0.55 * c + 0.15 for c in _random_color(rng, sat=(0.05, 0.3), val=(0.5, 0.8)))
        return Box(tuple(center), tuple(size), roof, accent, wall, int(rng.integers(len(PATTERN_NAMES))), target)

    tsize = (rng.uniform(3.0, 5.0), rng.uniform(3.0, 5.0), rng.uniform(1.5, 3.5))
    boxes.append(make_box((0.0, 0.0), tsize, True))
    n_distractors = int(rng.integers(3, 9))
    tries = 0
    while len(boxes) < 1 + n_distractors and tries < 500:
        tries += 1
        r = rng.uniform(4.5, 8.0)
        a = rng.uniform(0, 2 * math.pi)
        c = (r * math.cos(a), r * math.sin(a))
        size = (rng.uniform(1.5, 3.0), rng.uniform(1.5, 3.0), rng.uniform(0.8, 2.5))
        if all(abs(c[0] - b.center[0]) > 0.5 * (size[0] + b.size[0]) + 0.4 or
               abs(c[1] - b.center[1]) > 0.5 * (size[1] + b.size[1]) + 0.4 for b in boxes):
            boxes.append(make_box(c, size, False))
    patches = []
    for _ in range(int(rng.integers(2, 5))):
        c = (rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0))
        size = (rng.uniform(2.0, 6.0), rng.uniform(2.0, 6.0))
        patches.append(GroundPatch(c, size, _random_color(rng, sat=(0.2, 0.6), val=(0.3, 0.7))))
    ground = tuple(float(np.clip(g + rng.uniform(-0.04, 0.04), 0, 1)) for g in GROUND_TONES[rng.integers(len(GROUND_TONES))])
    return Location(int(id), int(seed), tuple(boxes), tuple(patches), ground)


def _pattern_mask(pattern: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """True where the accent color shows; ``u, v`` are roof coordinates in [0, 1]."""
    name = PATTERN_NAMES[pattern]
    if name == "solid":
        return np.zeros_like(u, dtype=bool)
    if name == "stripes_x":
        return (np.floor(u * 4) % 2) == 1
    if name == "stripes_y":
        return (np.floor(v * 4) % 2) == 1
    if name == "checker":
        return ((np.floor(u * 3) + np.floor(v * 3)) % 2) == 1
    if name == "cross":
        return (np.abs(u - 0.5) < 0.15) | (np.abs(v - 0.5) < 0.15)
    if name == "border":
        return (u < 0.18) | (u > 0.82) | (v < 0.18) | (v > 0.82)
    if name == "center_dot":
        return np.hypot(u - 0.5, v - 0.5) < 0.25
    if name == "half":
        return u > 0.5
    raise ValueError(f"unknown roof pattern {pattern}")


def _face_gaussians(origin, du, dv, n_u, n_v, normal_scale, colors):
    """Flat Gaussians on a grid over the parallelogram origin + s*du + t*dv."""
    du, dv = np.asarray(du, float), np.asarray(dv, float)
    s = (np.arange(n_u) + 0.5) / n_u
    t = (np.arange(n_v) + 0.5) / n_v
    ss, tt = np.meshgrid(s, t, indexing="ij")
    means = np.asarray(origin, float) + ss.reshape(-1, 1) * du + tt.reshape(-1, 1) * dv
    lu, lv = np.linalg.norm(du), np.linalg.norm(dv)
    eu, ev = du / lu, dv / lv
    n = np.cross(eu, ev)
    # local axes as columns: maps Gaussian-frame vectors to world
    q = matrix_to_quat(np.stack([eu, ev, n], axis=1))
    k = len(means)
    scales = np.tile([0.6 * lu / n_u, 0.6 * lv / n_v, normal_scale], (k, 1))
    return means, np.log(scales), np.tile(q, (k, 1)), np.asarray(colors, float).reshape(k, 3), ss.ravel(), tt.ravel()


def location_scene(location: Location, spacing: float = 0.5, extra_boxes: Sequence[Box] = ()) -> GaussianScene:
    """Gaussian scene of a layout; the ground itself is the background color."""
    parts = []

    def add(means, log_scales, rots, colors):
        parts.append((means, log_scales, rots, colors))

    for p in location.patches:
        (cx, cy), (sx, sy) = p.center, p.size
        nu, nv = max(1, math.ceil(sx / (1.4 * spacing))), max(1, math.ceil(sy / (1.4 * spacing)))
        m, ls, q, c, _, _ = _face_gaussians((cx - sx / 2, cy - sy / 2, 0.01), (sx, 0, 0), (0, sy, 0), nu, nv, 0.02,
                                            np.tile(p.color, (nu * nv, 1)))
        add(m, ls, q, c)
    for b in list(location.boxes) + list(extra_boxes):
        (cx, cy), (sx, sy, h) = b.center, b.size
        x0, y0 = cx - sx / 2, cy - sy / 2
        nu, nv = max(2, math.ceil(sx / spacing)), max(2, math.ceil(sy / spacing))
        ss = (np.arange(nu) + 0.5) / nu
        tt = (np.arange(nv) + 0.5) / nv
        uu, vv = np.meshgrid(ss, tt, indexing="ij")
        mask = _pattern_mask(b.pattern, uu.ravel(), vv.ravel())
        roof_cols = np.where(mask[:, None], np.asarray(b.accent_color), np.asarray(b.roof_color))
        m, ls, q, c, _, _ = _face_gaussians((x0, y0, h), (sx, 0, 0), (0, sy, 0), nu, nv, 0.03, roof_cols)
        add(m, ls, q, c)
        nh = max(1, math.ceil(h / (1.4 * spacing)))
        wall = np.asarray(b.wall_color)
        for origin, du in (((x0, y0, 0), (sx, 0, 0)), ((x0 + sx, y0, 0), (0, sy, 0)),
                           ((x0 + sx, y0 + sy, 0), (-sx, 0, 0)), ((x0, y0 + sy, 0), (0, -sy, 0))):
            nw = max(1, math.ceil(np.linalg.norm(du) / (1.4 * spacing)))
            m, ls, q, c, _, _ = _face_gaussians(origin, du, (0, 0, h), nw, nh, 0.03, np.tile(wall, (nw * nh, 1)))
            add(m, ls, q, c)
    means = np.concatenate([p[0] for p in parts])
    n = len(means)
    top = max(b.size[2] for b in list(location.boxes) + list(extra_boxes))
    return GaussianScene(means, np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts]),
                         np.full(n, 4.0), np.concatenate([p[3] for p in parts]),
                         bounds=[[-10.0, -10.0, 0.0], [10.0, 10.0, top + 0.5]], background=location.ground_color)


# -- views ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ViewConfig:
    """Camera settings for dataset rendering; BEV conventions come from ``bev``."""

    image_size: int = 64
    drone_focal: float = 64.0
    radius_start: float = 14.0
    radius_end: float = 8.0
    n_loops: int = 3
    satellite_height_factor: float = 4.0
    scene_spacing: float = 0.5
    bev: BEVConfig = field(default_factory=BEVConfig)

    @property
    def drone_intrinsics(self) -> Intrinsics:
        return Intrinsics.centered(self.image_size, focal_px=self.drone_focal)

    def satellite_pose(self, center=(0.0, 0.0, 0.0)) -> CameraPose:
        """Overhead camera covering the same ground footprint as a base-height BEV."""
        h = self.satellite_height_factor * self.bev.base_height
        focal = self.image_size * h / self.bev.footprint
        return bev_pose(center, h, 0.0, Intrinsics.centered(self.image_size, focal_px=focal))


def n_video_frames(fps: int, video_seconds: float) -> int:
    if fps not in SUPPORTED_FPS:
        raise ConfigError(f"unsupported fps {fps}; must be one of {SUPPORTED_FPS}")
    return int(round(fps * video_seconds))


def drone_poses(fps: int, video_seconds: float, elevation_deg: float, view: ViewConfig = ViewConfig(),
                target_center=(0.0, 0.0, 0.0)) -> list[CameraPose]:
    n = n_video_frames(fps, video_seconds)
    cfg = FlightConfig(elevation_deg, view.n_loops, n, view.radius_start, view.radius_end, tuple(target_center))
    return spiral_path(cfg, view.drone_intrinsics)


def occluder_scene(pose: CameraPose, target, rng, spacing: float = 0.5) -> GaussianScene:
    """Floating cube on the line of sight between camera and target."""
    target = np.asarray(target, float)
    c = pose.position + rng.uniform(0.35, 0.6) * (target - pose.position)
    side = rng.uniform(2.0, 3.5)
    col = _random_color(rng)
    cube = Box((float(c[0]), float(c[1])), (side, side, side), col, col, col, 0, True)
    scene = location_scene(Location(-1, 0, (cube,), (), (0.0, 0.0, 0.0)), spacing)
    scene.means[:, 2] += c[2] - side / 2
    return scene


def render_drone_video(location: Location, poses: Sequence[CameraPose], occlusion_rate: float = 0.0,
                       seed: int = 0, view: ViewConfig = ViewConfig()) -> np.ndarray:
    """Render the flight; a fraction ``occlusion_rate`` of frames gets an occluding cube in front of the target."""
    scene = location_scene(location, view.scene_spacing)
    if occlusion_rate <= 0:
        return render_many(scene, poses)
    rng = np.random.default_rng([seed, location.id, 7])
    n = len(poses)
    occluded = set(rng.choice(n, size=int(round(occlusion_rate * n)), replace=False).tolist())
    target = (0.0, 0.0, 0.5 * location.target.size[2])
    frames = []
    for i, p in enumerate(poses):
        s = scene.concat(occluder_scene(p, target, rng, view.scene_spacing)) if i in occluded else scene
        frames.append(render_many(s, [p])[0])
    return np.stack(frames)


def render_satellite(location: Location, view: ViewConfig = ViewConfig()) -> np.ndarray:
    return render_many(location_scene(location, view.scene_spacing), [view.satellite_pose()])[0]


def render_true_bev(location: Location, view: ViewConfig = ViewConfig(), height: float | None = None,
                    yaw_deg: float = 0.0) -> np.ndarray:
    """Cropped BEV of the ground-truth layout (no reconstruction)."""
    pose = bev_pose((0.0, 0.0, 0.0), height or view.bev.base_height, yaw_deg, view.bev.intrinsics("test"))
    img = render_many(location_scene(location, view.scene_spacing), [pose])[0]
    return center_crop(img, view.bev.out_size)


# -- hard negatives -----------------------------------------------------------------------

def _separated(boxes: Sequence[Box], gap: float = 0.0) -> bool:
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            if (abs(a.center[0] - b.center[0]) <= 0.5 * (a.size[0] + b.size[0]) + gap and
                    abs(a.center[1] - b.center[1]) <= 0.5 * (a.size[1] + b.size[1]) + gap):
                return False
    return True


def _rearrange(boxes: list[Box], rng) -> list[Box]:
    """Move distractors: permute their sites, or rotate them about the target if no permutation fits."""
    idx = [i for i, b in enumerate(boxes) if not b.is_target]
    if len(idx) >= 2:
        for _ in range(20):
            perm = rng.permutation(idx)
            if (perm == idx).all():
                continue
            moved = list(boxes)
            for i, j in zip(idx, perm):
                moved[i] = replace(boxes[i], center=boxes[j].center)
            if _separated(moved):
                return moved
    phi = rng.uniform(math.pi / 3, 5 * math.pi / 3)
    c, s = math.cos(phi), math.sin(phi)
    return [b if b.is_target else replace(b, center=(c * b.center[0] - s * b.center[1], s * b.center[0] + c * b.center[1]))
            for b in boxes]


def perturb_location(location: Location, rng, hue_band: float = 0.1, footprint_jitter: float = 0.15,
                     rearrange: bool = True) -> Location:
    """Same palette and building set, different identity details and arrangement."""
    def jitter(col):
        h, s, v = colorsys.rgb_to_hsv(*col)
        h = (h + rng.uniform(-hue_band, hue_band)) % 1.0
        s = float(np.clip(s * rng.uniform(0.85, 1.15), 0, 1))
        v = float(np.clip(v * rng.uniform(0.9, 1.1), 0, 1))
        return tuple(colorsys.hsv_to_rgb(h, s, v))

    boxes = []
    for b in location.boxes:
        family = next(f for f in PATTERN_FAMILIES if b.pattern in f)
        others = [p for p in family if p != b.pattern]
        pattern = int(rng.choice(others)) if others and (b.is_target or rng.random() < 0.5) else b.pattern
        scale = rng.uniform(1 - footprint_jitter, 1 + footprint_jitter, size=2)
        size = (b.size[0] * scale[0], b.size[1] * scale[1], b.size[2])
        boxes.append(replace(b, size=size, roof_color=jitter(b.roof_color), accent_color=jitter(b.accent_color),
                             pattern=pattern))
    if rearrange:
        boxes = _rearrange(boxes, rng)
    return replace(location, boxes=tuple(boxes))


def synthesize_negatives(location: Location, view: str, m: int = 32, seed: int = 0,
                         view_config: ViewConfig = ViewConfig(), softness: int = 2) -> list[np.ndarray]:
    """``m`` images of perturbed copies of ``location`` seen from the BEV or satellite convention.

    BEV negatives use random yaw and a height from the BEV sequence range and
    are rendered at 1/``softness`` resolution then upsampled, which matches
    the blur level of BEVs rendered from fitted scenes.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if view not in ("bev", "satellite"):
        raise ValueError(f"view must be 'bev' or 'satellite', got {view!r}")
    rng = np.random.default_rng([seed, location.id, 11])
    vc = view_config
    out = []
    for _ in range(m):
        neg = perturb_location(location, rng)
        scene = location_scene(neg, vc.scene_spacing)
        if view == "satellite":
            img = render_many(scene, [vc.satellite_pose()])[0]
        else:
            h = vc.bev.base_height * rng.uniform(1.0, 1.2)
            intr = vc.bev.intrinsics("train")
            pose = bev_pose((0.0, 0.0, 0.0), h, rng.uniform(0, 360), intr)
            if softness > 1:
                pose = pose.with_intrinsics(intr.scaled(1.0 / softness))
                img = upsample(render_many(scene, [pose])[0], intr.width)
            else:
                img = render_many(scene, [pose])[0]
            img = center_crop(img, vc.bev.out_size)
        out.append(img)
    return out


def upsample(image: np.ndarray, size: int) -> np.ndarray:
    pil = Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))
    return np.asarray(pil.resize((size, size), Image.BILINEAR), dtype=float) / 255.0


def structural_hash(image: np.ndarray) -> str:
    """Difference hash of a 9x8 grayscale thumbnail."""
    g = np.asarray(image, float)[..., :3].mean(-1)
    pil = Image.fromarray(np.round(np.clip(g, 0, 1) * 255).astype(np.uint8)).resize((9, 8), Image.BILINEAR)
    a = np.asarray(pil, dtype=int)
    bits = (a[:, 1:] > a[:, :-1]).ravel()
    return "".join("1" if b else "0" for b in bits)


# -- dataset on disk -------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Root record of a rendered dataset; ``splits`` maps train/test to location ids."""

    splits: dict[str, list[int]]
    fps: int
    elevations: list[float]
    video_seconds: float
    seed: int
    view: dict = field(default_factory=dict)
    synthetic: dict[str, dict[str, int]] = field(default_factory=dict)
    occlusion_rate: float = 0.0
    version: int = 1

    PATHS = {
        "layout": "{split}/layouts/{id}.json",
        "drone": "{split}/drone_{elev}/{id}/{frame:04d}.png",
        "drone_poses": "{split}/drone_{elev}/{id}/poses.txt",
        "satellite": "{split}/satellite/{id}/satellite.png",
        "bev": "{split}/bev_{elev}/{id}/{frame:04d}.png",
        "bev_poses": "{split}/bev_{elev}/{id}/poses.txt",
        "synthetic": "{split}/synthetic_{view}/{id}/{index:04d}.png",
    }

    def __post_init__(self):
        overlap = set(self.splits.get("train", [])) & set(self.splits.get("test", []))
        if overlap:
            raise ValueError(f"train and test share location ids {sorted(overlap)}")
        if self.fps not in SUPPORTED_FPS:
            raise ConfigError(f"unsupported fps {self.fps}; must be one of {SUPPORTED_FPS}")

    @property
    def n_frames(self) -> int:
        return n_video_frames(self.fps, self.video_seconds)

    def to_json(self) -> str:
        d = asdict(self)
        d["paths"] = self.PATHS
        d["synthetic_note"] = "synthetic images carry their source location id but are never positives (p_m = 0)"
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        d.pop("paths", None)
        d.pop("synthetic_note", None)
        d["splits"] = {k: [int(i) for i in v] for k, v in d["splits"].items()}
        return cls(**d)

    def split_of(self, location_id: int) -> str:
        for split, ids in self.splits.items():
            if location_id in ids:
                return split
        raise KeyError(f"location {location_id} is not in this dataset")


def _elev_tag(elev: float) -> str:
    return f"{int(round(elev))}"


def save_png(path: Path, image: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)).save(path, optimize=False)


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=float) / 255.0


def make_locations(n_locations: int, n_test: int, seed: int = 0) -> tuple[list[Location], list[Location]]:
    """Disjoint train/test locations with ids 0..n-1; the last ``n_test`` ids are the test split."""
    if not 0 < n_test < n_locations:
        raise ConfigError(f"need 0 < n_test < n_locations, got n_test={n_test}, n_locations={n_locations}")
    locs = [generate_location(seed, i) for i in range(n_locations)]
    return locs[: n_locations - n_test], locs[n_locations - n_test:]


def render_dataset(train: Sequence[Location], test: Sequence[Location], out_dir, fps: int = 2,
                   elevations: Sequence[float] = DEFAULT_ELEVATIONS, video_seconds: float = 12.0,
                   view: ViewConfig = ViewConfig(), seed: int = 0, occlusion_rate: float = 0.0,
                   n_synthetic: int = 32) -> DatasetManifest:
    """Write drone videos, satellite images and train-split synthetic negatives under ``out_dir``."""
    out = Path(out_dir)
    n_video_frames(fps, video_seconds)
    manifest = DatasetManifest({"train": [l.id for l in train], "test": [l.id for l in test]}, fps,
                               [float(e) for e in elevations], float(video_seconds), int(seed), asdict(view),
                               occlusion_rate=float(occlusion_rate))
    out.mkdir(parents=True, exist_ok=True)
    for split, locs in (("train", train), ("test", test)):
        for loc in locs:
            lp = out / manifest.PATHS["layout"].format(split=split, id=loc.id)
            lp.parent.mkdir(parents=True, exist_ok=True)
            lp.write_text(loc.to_json() + "\n")
            for elev in elevations:
                poses = drone_poses(fps, video_seconds, elev, view)
                rate = occlusion_rate if split == "test" else 0.0
                frames = render_drone_video(loc, poses, rate, seed, view)
                for i, fr in enumerate(frames):
                    save_png(out / manifest.PATHS["drone"].format(split=split, elev=_elev_tag(elev), id=loc.id, frame=i), fr)
                save_poses(out / manifest.PATHS["drone_poses"].format(split=split, elev=_elev_tag(elev), id=loc.id), poses)
            save_png(out / manifest.PATHS["satellite"].format(split=split, id=loc.id), render_satellite(loc, view))
            logger.info("rendered location %d (%s)", loc.id, split)
    if n_synthetic:
        for loc in train:
            for v in ("bev", "satellite"):
                for j, img in enumerate(synthesize_negatives(loc, v, n_synthetic, seed, view)):
                    save_png(out / manifest.PATHS["synthetic"].format(split="train", view=v, id=loc.id, index=j), img)
            manifest.synthetic[str(loc.id)] = {"bev": n_synthetic, "satellite": n_synthetic}
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_manifest(root) -> DatasetManifest:
    return DatasetManifest.from_json((Path(root) / "manifest.json").read_text())


def load_location(root, manifest: DatasetManifest, location_id: int) -> Location:
    split = manifest.split_of(location_id)
    return Location.from_json((Path(root) / manifest.PATHS["layout"].format(split=split, id=location_id)).read_text())


def load_drone_video(root, manifest: DatasetManifest, location_id: int, elevation: float):
    split = manifest.split_of(location_id)
    tag = _elev_tag(elevation)
    poses = load_poses(Path(root) / manifest.PATHS["drone_poses"].format(split=split, elev=tag, id=location_id))
    frames = [load_png(Path(root) / manifest.PATHS["drone"].format(split=split, elev=tag, id=location_id, frame=i))
              for i in range(len(poses))]
    return np.stack(frames), poses


def load_satellite(root, manifest: DatasetManifest, location_id: int) -> np.ndarray:
    split = manifest.split_of(location_id)
    return load_png(Path(root) / manifest.PATHS["satellite"].format(split=split, id=location_id))


def load_synthetic(root, manifest: DatasetManifest, location_id: int, view: str) -> list[np.ndarray]:
    count = manifest.synthetic.get(str(location_id), {}).get(view, 0)
    split = manifest.split_of(location_id)
    return [load_png(Path(root) / manifest.PATHS["synthetic"].format(split=split, view=view, id=location_id, index=j))
            for j in range(count)]

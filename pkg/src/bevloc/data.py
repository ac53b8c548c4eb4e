"""Loading rendered datasets and reconstructed BEV sequences into arrays."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import synthdata as sd
from .geometry import load_poses, save_poses
from .training import TrainData
from .video2bev import BEVConfig, FitConfig, video_to_bev

log = logging.getLogger(__name__)

SOURCES = ("bev", "drone")
BEV_INDEX = "bev_index.json"


def bev_mode(split: str) -> str:
    return "train" if split == "train" else "test"


def reconstruct_dataset(root, fit: FitConfig = FitConfig(), bev: BEVConfig = BEVConfig(),
                        elevations=None) -> dict:
    """Fit a scene to every drone video and write its BEV sequence next to it.

    Train-split sequences rotate and rise, test-split sequences only rise.
    """
    root = Path(root)
    manifest = sd.load_manifest(root)
    elevations = manifest.elevations if elevations is None else list(elevations)
    index = {}
    for split, ids in sorted(manifest.splits.items()):
        for lid in ids:
            for elev in elevations:
                frames, poses = sd.load_drone_video(root, manifest, lid, elev)
                seq = video_to_bev(list(frames), poses, fit, bev, bev_mode(split))
                tag = sd._elev_tag(elev)
                for i, img in enumerate(seq.frames):
                    sd.save_png(root / manifest.PATHS["bev"].format(split=split, elev=tag, id=lid, frame=i), img)
                save_poses(root / manifest.PATHS["bev_poses"].format(split=split, elev=tag, id=lid), seq.poses)
                index[f"{lid}/{tag}"] = {"mode": seq.mode, "frames": len(seq), "fit_l1": round(seq.fit.final_loss, 6)}
                log.info("reconstructed location %d at %s deg: L1 %.4f", lid, tag, seq.fit.final_loss)
    (root / BEV_INDEX).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return index


def load_sequence(root, manifest: sd.DatasetManifest, location_id: int, elevation: float, source: str) -> np.ndarray:
    """Per-frame query images of one location: its BEV sequence or its raw drone frames."""
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}, got {source!r}")
    root = Path(root)
    if source == "drone":
        return sd.load_drone_video(root, manifest, location_id, elevation)[0]
    split, tag = manifest.split_of(location_id), sd._elev_tag(elevation)
    pose_file = root / manifest.PATHS["bev_poses"].format(split=split, elev=tag, id=location_id)
    if not pose_file.exists():
        raise FileNotFoundError(f"no BEV sequence for location {location_id} at {tag} deg; run `reconstruct` first")
    n = len(load_poses(pose_file))
    return np.stack([sd.load_png(root / manifest.PATHS["bev"].format(split=split, elev=tag, id=location_id, frame=i))
                     for i in range(n)])


def load_train_data(root, elevations, source: str = "bev", synthetic: bool = True) -> TrainData:
    """Training split as TrainData; labels are positions in the sorted train id list."""
    manifest = sd.load_manifest(root)
    ids = sorted(manifest.splits["train"])
    if not ids:
        raise ValueError("dataset has no training locations")
    queries, labels = [], []
    for label, lid in enumerate(ids):
        for elev in elevations:
            seq = load_sequence(root, manifest, lid, elev, source)
            queries.append(seq)
            labels += [label] * len(seq)
    sat = np.stack([sd.load_satellite(root, manifest, lid) for lid in ids])
    sq = ss = None
    if synthetic and all(str(lid) in manifest.synthetic for lid in ids):
        sq = np.stack([np.stack(sd.load_synthetic(root, manifest, lid, "bev")) for lid in ids])
        ss = np.stack([np.stack(sd.load_synthetic(root, manifest, lid, "satellite")) for lid in ids])
    f32 = lambda a: None if a is None else np.asarray(a, dtype=np.float32)
    return TrainData(f32(np.concatenate(queries)), np.array(labels), f32(sat), f32(sq), f32(ss))


def load_test_items(root, elevation: float, source: str = "bev", split: str = "test"):
    """(location ids, per-location query sequences, satellite images) of one split."""
    manifest = sd.load_manifest(root)
    ids = sorted(manifest.splits[split])
    seqs = [np.asarray(load_sequence(root, manifest, lid, elevation, source), dtype=np.float32) for lid in ids]
    sats = np.stack([sd.load_satellite(root, manifest, lid) for lid in ids]).astype(np.float32)
    return ids, seqs, sats

import hashlib
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from bevloc import synthdata as sd
from bevloc.geometry import ConfigError, load_poses


def test_location_deterministic():
    assert sd.generate_location(3, 7) == sd.generate_location(3, 7)
    assert sd.generate_location(3, 7).layout_hash() == sd.generate_location(3, 7).layout_hash()


def test_hundred_distinct_layouts():
    hashes = {sd.generate_location(0, i).layout_hash() for i in range(100)}
    assert len(hashes) == 100


def test_layout_shape():
    for i in range(30):
        loc = sd.generate_location(1, i)
        assert sum(b.is_target for b in loc.boxes) == 1
        assert 3 <= len(loc.boxes) - 1 <= 8


def test_location_json_round_trip():
    loc = sd.generate_location(2, 5)
    assert sd.Location.from_json(loc.to_json()) == loc


def test_location_requires_one_target():
    loc = sd.generate_location(0, 0)
    with pytest.raises(ValueError, match="exactly one target"):
        replace(loc, boxes=tuple(replace(b, is_target=True) for b in loc.boxes))
    with pytest.raises(ValueError):
        replace(loc, boxes=())


def test_frame_count_and_fps():
    assert sd.n_video_frames(2, 12) == 24
    assert sd.n_video_frames(10, 12) == 120
    with pytest.raises(ConfigError, match="fps"):
        sd.n_video_frames(3, 12)


def test_satellite_covers_bev_footprint():
    v = sd.ViewConfig()
    p = v.satellite_pose()
    assert p.position[2] == pytest.approx(4 * v.bev.base_height)
    ground_width = v.image_size * p.position[2] / p.intrinsics.focal_px
    assert ground_width == pytest.approx(v.bev.footprint)


def test_occlusion_changes_only_some_frames():
    loc = sd.generate_location(0, 1)
    poses = sd.drone_poses(2, 5, 45.0)
    clean = sd.render_drone_video(loc, poses)
    occ = sd.render_drone_video(loc, poses, occlusion_rate=0.3, seed=0)
    changed = [np.abs(a - b).max() > 1e-6 for a, b in zip(clean, occ)]
    assert sum(changed) == 3


# -- negatives ------------------------------------------------------------------------

@pytest.mark.parametrize("view", ["bev", "satellite"])
def test_negatives_count_and_determinism(view):
    loc = sd.generate_location(0, 2)
    a = sd.synthesize_negatives(loc, view, 4, seed=1)
    b = sd.synthesize_negatives(loc, view, 4, seed=1)
    assert len(a) == 4 and all(x.shape == (64, 64, 3) for x in a)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_thirty_two_bev_negatives_differ_from_true_bev():
    loc = sd.generate_location(0, 3)
    truth = hashlib.sha256(sd.render_true_bev(loc).tobytes()).hexdigest()
    negs = sd.synthesize_negatives(loc, "bev", 32)
    assert len(negs) == 32
    assert truth not in {hashlib.sha256(n.tobytes()).hexdigest() for n in negs}


def test_negatives_keep_palette_change_structure():
    # measured on these ten locations: worst mean-colour distance 0.061
    for i in range(10):
        loc = sd.generate_location(0, i)
        truth = sd.render_true_bev(loc)
        h0 = sd.structural_hash(truth)
        for n in sd.synthesize_negatives(loc, "bev", 32):
            assert np.linalg.norm(n.reshape(-1, 3).mean(0) - truth.reshape(-1, 3).mean(0)) < 0.25
            assert sd.structural_hash(n) != h0


def test_perturbation_rules():
    loc = sd.generate_location(0, 4)
    rng = np.random.default_rng(0)
    for _ in range(10):
        neg = sd.perturb_location(loc, rng)
        assert len(neg.boxes) == len(loc.boxes)
        assert neg.target.center == loc.target.center
        assert neg.target.pattern != loc.target.pattern
        for a, b in zip(loc.boxes, neg.boxes):
            fam = next(f for f in sd.PATTERN_FAMILIES if a.pattern in f)
            assert b.pattern in fam
            for s0, s1 in zip(a.size[:2], b.size[:2]):
                assert 0.85 * s0 - 1e-12 <= s1 <= 1.15 * s0 + 1e-12
        assert any(a.center != b.center for a, b in zip(loc.boxes, neg.boxes) if not a.is_target)


def test_negatives_reject_bad_arguments():
    loc = sd.generate_location(0, 0)
    with pytest.raises(ValueError):
        sd.synthesize_negatives(loc, "bev", 0)
    with pytest.raises(ValueError):
        sd.synthesize_negatives(loc, "ground", 1)


# -- dataset ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    train, test = sd.make_locations(3, 1, seed=0)
    m = sd.render_dataset(train, test, root, fps=2, elevations=(45.0, 30.0), video_seconds=1.5, n_synthetic=2)
    return root, m


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_dataset_layout(tiny_dataset):
    root, m = tiny_dataset
    assert m.splits == {"train": [0, 1], "test": [2]}
    assert m.n_frames == 3
    for elev in ("45", "30"):
        frames = sorted((root / "train" / f"drone_{elev}" / "0").glob("*.png"))
        assert len(frames) == 3
        assert len(load_poses(root / "train" / f"drone_{elev}" / "0" / "poses.txt")) == 3
    assert (root / "test" / "satellite" / "2" / "satellite.png").exists()
    assert len(sd.load_synthetic(root, m, 1, "satellite")) == 2
    assert sd.load_synthetic(root, m, 2, "bev") == []


def test_manifest_round_trip(tiny_dataset):
    root, m = tiny_dataset
    back = sd.load_manifest(root)
    assert back == m
    assert sd.load_location(root, back, 2) == sd.generate_location(0, 2)
    video, poses = sd.load_drone_video(root, back, 0, 45.0)
    assert video.shape == (3, 64, 64, 3) and len(poses) == 3


def test_manifest_rejects_overlap():
    with pytest.raises(ValueError, match="share"):
        sd.DatasetManifest({"train": [0, 1], "test": [1]}, 2, [45.0], 12.0, 0)


def test_dataset_byte_reproducible(tiny_dataset, tmp_path):
    root, _ = tiny_dataset
    train, test = sd.make_locations(3, 1, seed=0)
    sd.render_dataset(train, test, tmp_path, fps=2, elevations=(45.0, 30.0), video_seconds=1.5, n_synthetic=2)
    assert tree_digest(tmp_path) == tree_digest(root)


def test_unsupported_fps_rejected(tmp_path):
    train, test = sd.make_locations(2, 1)
    with pytest.raises(ConfigError):
        sd.render_dataset(train, test, tmp_path, fps=4)


def test_make_locations_split_checks():
    with pytest.raises(ConfigError):
        sd.make_locations(5, 5)
    train, test = sd.make_locations(20, 6)
    assert not {l.id for l in train} & {l.id for l in test}
    assert len(train) == 14 and len(test) == 6

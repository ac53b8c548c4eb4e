"""End-to-end steps shared by the CLI, the experiment scripts and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import synthdata as sd
from .config import ExperimentConfig
from .data import load_test_items, load_train_data, reconstruct_dataset
from .evaluation import (DIRECTIONS, average_precision, encode_parts, evaluate_embeddings, rank, run_record,
                         topk_sweep)
from .model import global_embedding
from .training import Stage1State, Stage2State, train_stage1, train_stage2

log = logging.getLogger(__name__)


def generate(cfg: ExperimentConfig, out) -> sd.DatasetManifest:
    d = cfg.data
    train, test = sd.make_locations(d.n_locations, d.n_test, d.seed)
    view = sd.ViewConfig(bev=cfg.bev)
    return sd.render_dataset(train, test, out, d.fps, d.elevations, d.video_seconds, view, d.seed,
                             d.occlusion_rate, d.n_synthetic)


def reconstruct(cfg: ExperimentConfig, root) -> dict:
    return reconstruct_dataset(root, cfg.fit, cfg.bev, cfg.data.elevations)


def _elevations(cfg: ExperimentConfig, root) -> list[float]:
    manifest = sd.load_manifest(root)
    return [e for e in manifest.elevations if e in cfg.data.elevations] or list(manifest.elevations)


def stage1(cfg: ExperimentConfig, root, source: str = "bev") -> Stage1State:
    torch.set_num_threads(1)
    data = load_train_data(root, _elevations(cfg, root), source, synthetic=False)
    return train_stage1(data, cfg.stage1, cfg.model)


def stage2(cfg: ExperimentConfig, root, s1: Stage1State | None, strategy: str = "freeze",
           negatives: str | None = None, source: str = "bev") -> Stage2State:
    torch.set_num_threads(1)
    s2cfg = cfg.stage2 if negatives is None else replace(cfg.stage2, negatives=negatives)
    data = load_train_data(root, _elevations(cfg, root), source, synthetic=s2cfg.negatives == "synthetic")
    return train_stage2(data, s1, strategy, s2cfg, cfg.stage1, cfg.model)


class TestSet:
    """Encoded test split for one model, reused across directions and k values."""

    def __init__(self, model, root, elevation: float, source: str = "bev"):
        self.ids, seqs, sats = load_test_items(root, elevation, source)
        self.video_parts = [encode_parts(model, s) for s in seqs]
        self.sat_parts = encode_parts(model, sats)

    def run(self, direction: str, head=None, k: int = 32):
        return evaluate_embeddings(direction, self.video_parts, self.ids, self.sat_parts, self.ids, head, k)

    def frame_query_ap(self) -> float:
        """Mean AP over every single frame used as its own drone->satellite query."""
        sat = global_embedding(self.sat_parts).double()
        aps = []
        for lid, parts in zip(self.ids, self.video_parts):
            for row in (global_embedding(parts).double() @ sat.T).numpy():
                aps.append(average_precision([self.ids[j] for j in rank(row)], [lid]))
        return float(np.mean(aps))


def evaluate_all(cfg: ExperimentConfig, root, model, head=None, source: str | None = None,
                 k: int | None = None) -> dict:
    """Metric records for both directions, keyed by direction."""
    ts = TestSet(model, root, cfg.eval.elevation, source or cfg.eval.source)
    return {d: run_record(ts.run(d, head, k or cfg.eval.k)) for d in DIRECTIONS}


def mean_ap(records: dict, stage: str = "final") -> float:
    return float(np.mean([records[d][stage]["AP"] for d in DIRECTIONS]))


# ---------------------------------------------------------------- ablations

def _seeds(cfg: ExperimentConfig, seeds: Sequence[int] | None) -> list[int]:
    return list(seeds) if seeds is not None else [cfg.stage1.seed]


def ablation_inputs(cfg: ExperimentConfig, root, seeds=None) -> dict:
    """Input representation and stage-2 ablations; mean AP over both directions and all seeds."""
    rows = {"drone": [], "bev": [], "two_stage_in_batch": [], "two_stage_synthetic": []}
    for seed in _seeds(cfg, seeds):
        c = cfg.with_seed(seed)
        s1_drone = stage1(c, root, "drone")
        rows["drone"].append(mean_ap(evaluate_all(c, root, s1_drone.model, source="drone"), "stage1"))
        s1 = stage1(c, root, "bev")
        rows["bev"].append(mean_ap(evaluate_all(c, root, s1.model, source="bev"), "stage1"))
        for name, neg in (("two_stage_in_batch", "in-batch"), ("two_stage_synthetic", "synthetic")):
            s2 = stage2(c, root, s1, "freeze", neg)
            rows[name].append(mean_ap(evaluate_all(c, root, s1.model, s2.head, source="bev")))
        log.info("inputs ablation seed %d: %s", seed, {k: v[-1] for k, v in rows.items()})
    return {"per_seed": rows, "mean_ap": {k: float(np.mean(v)) for k, v in rows.items()}}


def ablation_strategies(cfg: ExperimentConfig, root, seeds=None) -> dict:
    from .training import stage1_hash

    rows = {"freeze": [], "fine_tune": [], "train_together": []}
    freeze_hash_equal = []
    for seed in _seeds(cfg, seeds):
        c = cfg.with_seed(seed)
        s1 = stage1(c, root, "bev")
        for strategy in rows:
            before = stage1_hash(s1.model)
            base = s1
            if strategy == "fine_tune":       # copy so the shared stage-1 stays untouched
                base = Stage1State(_clone(s1.model))
            s2 = stage2(c, root, base if strategy != "train_together" else None, strategy)
            if strategy == "freeze":
                freeze_hash_equal.append(before == stage1_hash(s2.stage1.model))
            rows[strategy].append(mean_ap(evaluate_all(c, root, s2.stage1.model, s2.head, source="bev")))
        log.info("strategy ablation seed %d: %s", seed, {k: v[-1] for k, v in rows.items()})
    return {"per_seed": rows, "mean_ap": {k: float(np.mean(v)) for k, v in rows.items()},
            "freeze_stage1_unchanged": all(freeze_hash_equal)}


def _clone(model):
    import copy
    return copy.deepcopy(model)


def ablation_topk(cfg: ExperimentConfig, root, ks: Sequence[int] = (1, 2, 4, 8, 16, 32), seeds=None) -> dict:
    """Mean AP (both directions) after re-ranking the top k, per k."""
    curves = {int(k): [] for k in ks}
    for seed in _seeds(cfg, seeds):
        c = cfg.with_seed(seed)
        s1 = stage1(c, root, "bev")
        s2 = stage2(c, root, s1, "freeze")
        ts = TestSet(s1.model, root, c.eval.elevation, "bev")
        runs = [ts.run(d, s2.head, max(ks)) for d in DIRECTIONS]
        sweeps = [topk_sweep(r, ks) for r in runs]
        for k in ks:
            curves[int(k)].append(float(np.mean([s[int(k)]["AP"] for s in sweeps])))
    return {"per_seed": {str(k): v for k, v in curves.items()},
            "mean_ap": {str(k): float(np.mean(v)) for k, v in curves.items()}}


def robustness(cfg: ExperimentConfig, root, seeds=None, source: str = "drone") -> dict:
    """Video (late-fused) vs single-frame drone->satellite AP on the test split of ``root``."""
    rows = {"video": [], "single_frame": []}
    for seed in _seeds(cfg, seeds):
        c = cfg.with_seed(seed)
        s1 = stage1(c, root, source)
        ts = TestSet(s1.model, root, c.eval.elevation, source)
        rows["video"].append(ts.run("drone->satellite").metrics["stage1"]["AP"])
        rows["single_frame"].append(ts.frame_query_ap())
    return {"per_seed": rows, "mean_ap": {k: float(np.mean(v)) for k, v in rows.items()},
            "occlusion_rate": sd.load_manifest(root).occlusion_rate}

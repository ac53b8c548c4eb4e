"""Late fusion, two-stage re-ranking and retrieval metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .model import MatchHead, Stage1Model, global_embedding

DIRECTIONS = ("drone->satellite", "satellite->drone")
REPORT_KS = (1, 5, 10)


def late_fuse(per_frame_scores) -> np.ndarray:
    """Mean over the frame axis of an F x G score matrix."""
    s = np.asarray(per_frame_scores, dtype=float)
    if s.ndim != 2:
        raise ValueError(f"per-frame scores must be F x G, got shape {s.shape}")
    if s.shape[0] == 0:
        raise ValueError("late fusion needs at least one frame")
    return s.mean(axis=0)


def rank(scores) -> np.ndarray:
    """Gallery indices by descending score, ties by index."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def rerank_topk(stage1_order, match_probabilities, k: int = 32) -> np.ndarray:
    """Reorder the first k entries by descending match probability; k is clamped to the gallery size.

    ``match_probabilities[i]`` belongs to ``stage1_order[i]`` for i < k.
    """
    order = np.asarray(stage1_order)
    k = min(int(k), len(order))
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    p = np.asarray(match_probabilities, dtype=float)
    if len(p) < k:
        raise ValueError(f"need {k} match probabilities, got {len(p)}")
    prefix = np.argsort(-p[:k], kind="stable")
    return np.concatenate([order[:k][prefix], order[k:]])


def recall_at_k(ranking, ground_truth, k: int) -> int:
    ranking = list(ranking)
    if ground_truth not in ranking:
        raise ValueError(f"ground truth {ground_truth!r} is not in the gallery")
    return int(ranking.index(ground_truth) < k)


def average_precision(ranking, relevant_ids) -> float:
    """Mean over relevant items of the precision at their ranks."""
    relevant = set(relevant_ids)
    if not relevant:
        raise ValueError("relevant set is empty")
    ranking = list(ranking)
    missing = relevant - set(ranking)
    if missing:
        raise ValueError(f"relevant ids not in gallery: {sorted(missing)}")
    hits, total = 0, 0.0
    for r, item in enumerate(ranking, start=1):
        if item in relevant:
            hits += 1
            total += hits / r
    return total / len(relevant)


def random_ranking_ap(gallery_size: int, trials: int = 20000, seed: int = 0) -> float:
    """Expected AP of a uniformly random ranking with one relevant item, by simulation."""
    rng = np.random.default_rng(seed)
    return float(np.mean(1.0 / rng.integers(1, gallery_size + 1, size=trials)))


@dataclass
class RetrievalRun:
    direction: str
    frame_scores: list[np.ndarray]            # per query: F x G (or G x F fused on the video side)
    fused: np.ndarray                         # Q x G
    stage1_ranking: np.ndarray                # Q x G gallery ids
    final_ranking: np.ndarray
    gallery_ids: list[int]
    query_ids: list[int]
    match_prob: np.ndarray | None = None      # Q x G fused match probabilities, NaN outside the top-k
    metrics: dict = field(default_factory=dict)


def retrieval_metrics(rankings: np.ndarray, gallery_ids: Sequence[int], query_ids: Sequence[int],
                      ks: Sequence[int] = REPORT_KS) -> dict:
    ranked = [[gallery_ids[j] for j in row] for row in rankings]
    rec = {f"R@{k}": float(np.mean([recall_at_k(r, q, k) for r, q in zip(ranked, query_ids)])) for k in ks}
    rec["AP"] = float(np.mean([average_precision(r, [q]) for r, q in zip(ranked, query_ids)]))
    return rec


# ---------------------------------------------------------------- embedding-level evaluation

@torch.no_grad()
def encode_parts(model: Stage1Model, images, chunk: int = 256) -> torch.Tensor:
    model.eval()
    images = np.asarray(images, dtype=np.float32)
    return torch.cat([model.parts(images[s:s + chunk]) for s in range(0, len(images), chunk)])


@torch.no_grad()
def match_scores(head: MatchHead, bev_parts: torch.Tensor, sat_parts: torch.Tensor) -> np.ndarray:
    """Match probability of each of F BEV frames (F, R, C) against one satellite image (1, R, C)."""
    head.eval()
    return head(bev_parts, sat_parts.expand_as(bev_parts)).double().numpy()


def evaluate_embeddings(direction: str, video_parts: Sequence[torch.Tensor], video_ids: Sequence[int],
                        sat_parts: torch.Tensor, sat_ids: Sequence[int], head: MatchHead | None = None,
                        k: int = 32) -> RetrievalRun:
    """Retrieval between videos (per-frame parts) and satellite images.

    Scores between a video and a satellite image are frame-wise cosine similarities
    (or match probabilities) averaged over the video's frames, in both directions.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if len(video_parts) != len(video_ids) or len(sat_parts) != len(sat_ids):
        raise ValueError("ids and parts differ in length")
    sat_emb = global_embedding(sat_parts).double()
    per_video = [(global_embedding(p).double() @ sat_emb.T).numpy() for p in video_parts]   # F x S each
    fused_vs = np.stack([late_fuse(s) for s in per_video])                              # V x S
    if direction == "drone->satellite":
        fused, q_ids, g_ids = fused_vs, list(video_ids), list(sat_ids)
    else:
        fused, q_ids, g_ids = fused_vs.T.copy(), list(sat_ids), list(video_ids)
    stage1 = np.stack([rank(row) for row in fused])
    final, probs = stage1.copy(), None
    if head is not None:
        probs = np.full(fused.shape, np.nan)
        for qi in range(len(q_ids)):
            for g in stage1[qi, :min(k, len(g_ids))]:
                v, s = (qi, g) if direction == "drone->satellite" else (g, qi)
                per_frame = match_scores(head, video_parts[v], sat_parts[s:s + 1])
                probs[qi, g] = late_fuse(per_frame[:, None])[0]
            final[qi] = rerank_topk(stage1[qi], probs[qi, stage1[qi]], k)
    gid = np.asarray(g_ids)
    run = RetrievalRun(direction, per_video, fused, gid[stage1], gid[final], g_ids, q_ids, probs)
    run.metrics = {"stage1": retrieval_metrics(stage1, g_ids, q_ids), "final": retrieval_metrics(final, g_ids, q_ids)}
    return run


def topk_sweep(run: RetrievalRun, ks: Sequence[int]) -> dict[int, dict]:
    """Metrics after re-ranking the top k, for each k; needs a run evaluated with k >= max(ks) (clamped)."""
    if run.match_prob is None:
        raise ValueError("run has no match probabilities; evaluate with a stage-2 head")
    pos = {g: j for j, g in enumerate(run.gallery_ids)}
    stage1 = np.array([[pos[g] for g in row] for row in run.stage1_ranking])
    out = {}
    for k in ks:
        kk = min(k, len(run.gallery_ids))
        rows = []
        for qi, order in enumerate(stage1):
            p = run.match_prob[qi, order[:kk]]
            if np.isnan(p).any():
                raise ValueError(f"match probabilities missing for k={k}; evaluate with a larger k")
            rows.append(rerank_topk(order, p, kk))
        out[int(k)] = retrieval_metrics(np.array(rows), run.gallery_ids, run.query_ids)
    return out


def metrics_json(records: dict) -> str:
    return json.dumps(records, indent=2, sort_keys=True) + "\n"


def evaluate(direction: str, model: Stage1Model, head: MatchHead | None, root, elevation: float = 45.0,
             source: str = "bev", k: int = 32) -> RetrievalRun:
    """Test-split retrieval between query sequences (BEV or raw drone) and satellite images."""
    from .data import load_test_items

    ids, seqs, sats = load_test_items(root, elevation, source)
    video_parts = [encode_parts(model, s) for s in seqs]
    return evaluate_embeddings(direction, video_parts, ids, encode_parts(model, sats), ids, head, k)


def run_record(run: RetrievalRun) -> dict:
    return {"direction": run.direction, "gallery_size": len(run.gallery_ids), **{
        stage: {name: round(v, 10) for name, v in m.items()} for stage, m in run.metrics.items()}}

"""Instance, contrastive and matching losses, hard-negative mining and the two-stage training loops."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .model import MatchHead, ModelConfig, Stage1Model, global_embedding

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
STRATEGIES = ("freeze", "fine_tune", "train_together")
NEGATIVE_MODES = ("synthetic", "in-batch")
P_CLAMP = 1e-7


# ---------------------------------------------------------------- losses

def instance_loss(logits_sat: Sequence[torch.Tensor], logits_bev: Sequence[torch.Tensor], label) -> torch.Tensor:
    """Sum over rings of -log p_sat(label) - log p_bev(label), averaged over the batch."""
    if len(logits_sat) != len(logits_bev):
        raise ValueError(f"{len(logits_sat)} satellite rings vs {len(logits_bev)} BEV rings")
    label = torch.as_tensor(label, dtype=torch.long).reshape(-1)
    n_classes = logits_sat[0].shape[-1]
    if label.numel() and (label.min() < 0 or label.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes}): {label.tolist()}")
    total = 0.0
    for ls, lb in zip(logits_sat, logits_bev):
        ls, lb = ls.reshape(-1, n_classes), lb.reshape(-1, n_classes)
        total = total + F.cross_entropy(ls, label) + F.cross_entropy(lb, label)
    return total


def _check_unit(x: torch.Tensor, name: str, tol: float = 1e-6):
    dev = (x.norm(dim=-1) - 1).abs().max().item()
    if dev > tol:
        raise ValueError(f"{name} must be unit vectors (max norm deviation {dev:.2e})")


def contrastive_loss(f_sat: torch.Tensor, f_bev: torch.Tensor, tau) -> torch.Tensor:
    """Symmetric in-batch softmax loss over cosine similarities; row i of both batches is one location."""
    if f_sat.shape != f_bev.shape or f_sat.ndim != 2:
        raise ValueError(f"expected two (N, D) batches, got {tuple(f_sat.shape)} and {tuple(f_bev.shape)}")
    if f_sat.shape[0] < 2:
        raise ValueError("contrastive loss needs at least 2 pairs")
    tau = torch.as_tensor(tau, dtype=f_sat.dtype)
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {float(tau)}")
    _check_unit(f_sat, "f_sat")
    _check_unit(f_bev, "f_bev")
    logits = f_sat @ f_bev.T / tau
    target = torch.arange(f_sat.shape[0])
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))


def matching_loss(p_hat, p_m) -> torch.Tensor:
    """Mean binary cross-entropy; p_hat clamped to [1e-7, 1 - 1e-7] before the log."""
    p = torch.as_tensor(p_hat).clamp(P_CLAMP, 1 - P_CLAMP)
    y = torch.as_tensor(p_m, dtype=p.dtype)
    if ((y != 0) & (y != 1)).any():
        raise ValueError("p_m must be 0 or 1")
    return -(y * p.log() + (1 - y) * (1 - p).log()).mean()


def select_hard_negatives(anchor_label: int, similarities, gallery_labels, synth_similarities, k: int = 3,
                          k_synth: int | None = None):
    """Indices of the k most similar different-category gallery items and the k most similar synthetic items.

    Ties go to the lower index. Synthetic items may share the anchor's category.
    ``k_synth`` overrides the synthetic count.
    """
    k_synth = k if k_synth is None else k_synth
    sims = np.asarray(similarities, dtype=float)
    labels = np.asarray(gallery_labels)
    eligible = np.flatnonzero(labels != anchor_label)
    if len(eligible) < k:
        raise ValueError(f"need {k} real negatives of another category, only {len(eligible)} in gallery")
    real = eligible[np.argsort(-sims[eligible], kind="stable")[:k]]
    synth_sims = np.asarray(synth_similarities, dtype=float)
    if synth_sims.size == 0:
        raise ValueError("synthetic pool is empty; run synthesize_negatives first")
    if synth_sims.size < k_synth:
        raise ValueError(f"need {k_synth} synthetic negatives, pool has {synth_sims.size}")
    synth = np.argsort(-synth_sims, kind="stable")[:k_synth]
    return real, synth


# ---------------------------------------------------------------- data

@dataclass
class TrainData:
    """Training images as float32 HWC arrays.

    ``queries`` are the per-frame BEV (or raw drone) images with location labels;
    ``satellite[l]`` is location l's satellite image. Synthetic pools are (L, M, H, W, 3).
    """

    queries: np.ndarray
    query_labels: np.ndarray
    satellite: np.ndarray
    synth_query: np.ndarray | None = None
    synth_satellite: np.ndarray | None = None

    def __post_init__(self):
        self.query_labels = np.asarray(self.query_labels, dtype=int)
        if len(self.queries) == 0 or len(self.satellite) == 0:
            raise ValueError("empty training set")
        if len(self.queries) != len(self.query_labels):
            raise ValueError("queries and query_labels differ in length")
        if self.query_labels.min() < 0 or self.query_labels.max() >= len(self.satellite):
            raise ValueError("query label without a satellite image")

    @property
    def n_locations(self) -> int:
        return len(self.satellite)

    @property
    def has_synthetic(self) -> bool:
        return self.synth_query is not None and self.synth_satellite is not None

    def frames_of(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.query_labels == label)


def location_batches(data: TrainData, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of query-index batches; every batch holds distinct locations.

    Each round draws one unused frame per location in shuffled order, so an epoch
    visits every frame once.
    """
    frames = [rng.permutation(data.frames_of(l)) for l in range(data.n_locations)]
    rounds = max(len(f) for f in frames)
    batches = []
    for r in range(rounds):
        order = [l for l in rng.permutation(data.n_locations) if r < len(frames[l])]
        picks = np.array([frames[l][r] for l in order], dtype=int)
        for s in range(0, len(picks), batch_size):
            b = picks[s:s + batch_size]
            if len(b) >= 2:
                batches.append(b)
    return batches


# ---------------------------------------------------------------- stage 1

@dataclass(frozen=True)
class Stage1Config:
    epochs: int = 140
    batch_size: int = 140
    lr_encoder: float = 2e-5
    lr_other: float = 2e-4
    weight_decay: float = 1e-2
    seed: int = 0


@dataclass
class Stage1State:
    model: Stage1Model
    optimizer: torch.optim.Optimizer | None = None
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


def stage1_optimizer(model: Stage1Model, lr_encoder: float, lr_other: float, weight_decay: float):
    return torch.optim.AdamW([
        {"params": list(model.encoder.parameters()), "lr": lr_encoder},
        {"params": list(model.classifiers.parameters()), "lr": lr_other},
        {"params": [model.log_tau], "lr": lr_other, "weight_decay": 0.0},
    ], weight_decay=weight_decay)


def stage1_loss(model: Stage1Model, data: TrainData, batch: np.ndarray):
    labels = data.query_labels[batch]
    parts_q = model.parts(data.queries[batch])
    parts_s = model.parts(data.satellite[labels])
    l_i = instance_loss(model.classify_parts(parts_s), model.classify_parts(parts_q), torch.from_numpy(labels))
    l_c = contrastive_loss(global_embedding(parts_s), global_embedding(parts_q), model.tau)
    return l_i, l_c


def new_stage1(model_cfg: ModelConfig, data: TrainData, seed: int = 0) -> Stage1Model:
    torch.manual_seed(seed)
    if model_cfg.n_classes != data.n_locations:
        model_cfg = ModelConfig(**{**asdict(model_cfg), "n_classes": data.n_locations})
    return Stage1Model(model_cfg)


def train_stage1(data: TrainData, cfg: Stage1Config = Stage1Config(), model_cfg: ModelConfig = ModelConfig(),
                 state: Stage1State | None = None) -> Stage1State:
    """Optimize L_I + L_C with AdamW and separate encoder / other step sizes."""
    if state is None:
        state = Stage1State(new_stage1(model_cfg, data, cfg.seed))
    model = state.model
    if state.optimizer is None:
        state.optimizer = stage1_optimizer(model, cfg.lr_encoder, cfg.lr_other, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    model.train()
    for _ in range(cfg.epochs):
        t0 = time.perf_counter()
        sums = np.zeros(2)
        batches = location_batches(data, cfg.batch_size, rng)
        for batch in batches:
            l_i, l_c = stage1_loss(model, data, batch)
            state.optimizer.zero_grad()
            (l_i + l_c).backward()
            state.optimizer.step()
            sums += (l_i.item(), l_c.item())
        state.epoch += 1
        m = sums / max(len(batches), 1)
        rec = {"epoch": state.epoch, "loss": float(m.sum()), "instance": float(m[0]), "contrastive": float(m[1]),
               "tau": float(model.tau.detach()), "seconds": time.perf_counter() - t0}
        state.history.append(rec)
        log.info("stage1 epoch %d loss %.4f (I %.4f C %.4f) tau %.4f", rec["epoch"], rec["loss"], m[0], m[1], rec["tau"])
    model.eval()
    return state


# ---------------------------------------------------------------- stage 2

@dataclass(frozen=True)
class Stage2Config:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 2e-4
    lr_stage1: float = 2e-5          # fine_tune step size for stage-1 weights
    weight_decay: float = 1e-2
    k_real: int = 3
    k_synth: int = 3
    negatives: str = "synthetic"
    augment: bool = True             # same random rotation/flip on both images of an anchor's pairs
    seed: int = 0


@dataclass
class Stage2State:
    head: MatchHead
    stage1: Stage1State
    strategy: str
    optimizer: torch.optim.Optimizer | None = None
    history: list[dict] = field(default_factory=list)


class ImageBank:
    """All training images in one array so pairs can be described by integer ids."""

    def __init__(self, data: TrainData, use_synthetic: bool):
        blocks = [data.queries, data.satellite]
        self.q0, self.s0 = 0, len(data.queries)
        self.sq0 = self.ss0 = None
        end = self.s0 + len(data.satellite)
        self.m = 0
        if use_synthetic:
            L, self.m = data.synth_query.shape[:2]
            self.sq0, self.ss0 = end, end + L * self.m
            blocks += [data.synth_query.reshape(-1, *data.synth_query.shape[2:]),
                       data.synth_satellite.reshape(-1, *data.synth_satellite.shape[2:])]
        self.images = np.concatenate([np.asarray(b, dtype=np.float32) for b in blocks])

    def synth_q(self, loc: int) -> np.ndarray:
        return self.sq0 + loc * self.m + np.arange(self.m)

    def synth_s(self, loc: int) -> np.ndarray:
        return self.ss0 + loc * self.m + np.arange(self.m)


N_DIHEDRAL = 8


def dihedral(images: np.ndarray, t: int) -> np.ndarray:
    """One of the 8 square symmetries on (..., H, W, C) images: t % 4 quarter turns, then a flip if t >= 4."""
    out = np.rot90(images, t % 4, axes=(-3, -2))
    if t >= 4:
        out = out[..., ::-1, :]
    return np.ascontiguousarray(out)


@torch.no_grad()
def bank_parts(model: Stage1Model, images: np.ndarray, chunk: int = 256) -> torch.Tensor:
    model.eval()
    return torch.cat([model.parts(images[s:s + chunk]) for s in range(0, len(images), chunk)])


def _transformed_parts(model: Stage1Model, images: np.ndarray, ids: np.ndarray, ts: np.ndarray) -> torch.Tensor:
    """Parts of images[ids[i]] under dihedral(ts[i]), encoding each distinct (id, t) once."""
    keys = ids * N_DIHEDRAL + ts
    uniq, inv = np.unique(keys, return_inverse=True)
    imgs = np.stack([dihedral(images[k // N_DIHEDRAL], int(k % N_DIHEDRAL)) for k in uniq])
    return model.parts(imgs)[torch.from_numpy(inv)]


def mine_pairs(data: TrainData, bank: ImageBank, emb: torch.Tensor, batch: np.ndarray, cfg: Stage2Config):
    """(slot-a ids, slot-b ids, labels) for every anchor frame in the batch, both anchor directions."""
    a_ids, b_ids, ys, anchor = [], [], [], []
    labels = data.query_labels
    sat_ids = bank.s0 + np.arange(data.n_locations)
    in_batch = cfg.negatives == "in-batch"
    batch_locs = labels[batch]
    k_real = min(cfg.k_real, len(batch) - 1) if in_batch else cfg.k_real
    for f in batch:
        loc = labels[f]
        q, s = bank.q0 + f, bank.s0 + loc
        # satellite gallery for the BEV anchor, BEV gallery for the satellite anchor
        if in_batch:
            sat_pool = bank.s0 + batch_locs
            q_pool = bank.q0 + batch
        else:
            sat_pool = sat_ids
            q_pool = bank.q0 + np.arange(len(labels))
        sat_pool_labels = sat_pool - bank.s0
        q_pool_labels = labels[q_pool - bank.q0]
        k_synth = 0 if in_batch else cfg.k_synth
        if in_batch:
            sq = ss = np.zeros(1)
        else:
            sq = (emb[bank.synth_s(loc)] @ emb[q]).numpy()
            ss = (emb[bank.synth_q(loc)] @ emb[s]).numpy()
        rs, ks = select_hard_negatives(loc, (emb[sat_pool] @ emb[q]).numpy(), sat_pool_labels, sq, k_real, k_synth)
        rq, kq = select_hard_negatives(loc, (emb[q_pool] @ emb[s]).numpy(), q_pool_labels, ss, k_real, k_synth)
        a_ids += [q, q] + [q] * len(rs) + list(q_pool[rq])
        b_ids += [s, s] + list(sat_pool[rs]) + [s] * len(rq)
        ys += [1, 1] + [0] * (len(rs) + len(rq))
        if not in_batch:
            a_ids += [q] * k_synth + list(bank.synth_q(loc)[kq])
            b_ids += list(bank.synth_s(loc)[ks]) + [s] * k_synth
            ys += [0] * (2 * k_synth)
        anchor += [int(f)] * (len(ys) - len(anchor))
    return np.array(a_ids), np.array(b_ids), np.array(ys, dtype=np.float32), np.array(anchor)


def _bytes_hash(tensors: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(tensors[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def stage1_hash(model: Stage1Model) -> str:
    return _bytes_hash(model.state_dict())


def train_stage2(data: TrainData, stage1: Stage1State | None, strategy: str = "freeze",
                 cfg: Stage2Config = Stage2Config(), stage1_cfg: Stage1Config = Stage1Config(),
                 model_cfg: ModelConfig = ModelConfig()) -> Stage2State:
    """Train the match head with L_M over mined pairs.

    freeze: stage-1 weights fixed; fine_tune: stage-1 weights updated at ``lr_stage1``;
    train_together: stage 1 starts from scratch and is trained jointly on L_I + L_C + L_M.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if cfg.negatives not in NEGATIVE_MODES:
        raise ValueError(f"negatives must be one of {NEGATIVE_MODES}, got {cfg.negatives!r}")
    use_synth = cfg.negatives == "synthetic"
    if use_synth and not data.has_synthetic:
        raise ValueError("missing synthetic negative pool; run synthesize_negatives (gen-data) first")
    if strategy == "train_together":
        stage1 = Stage1State(new_stage1(model_cfg, data, stage1_cfg.seed))
    elif stage1 is None:
        raise ValueError(f"strategy {strategy!r} needs a trained stage-1 model")
    model = stage1.model
    torch.manual_seed(cfg.seed)
    head = MatchHead.from_config(model.cfg)
    groups = [{"params": list(head.parameters()), "lr": cfg.lr}]
    if strategy == "fine_tune":
        groups.append({"params": list(model.parameters()), "lr": cfg.lr_stage1})
    optimizer = torch.optim.AdamW(groups, weight_decay=cfg.weight_decay)
    joint_opt = None
    if strategy == "train_together":
        joint_opt = stage1_optimizer(model, stage1_cfg.lr_encoder, stage1_cfg.lr_other, stage1_cfg.weight_decay)
    for p in model.parameters():
        p.requires_grad_(strategy != "freeze")

    bank = ImageBank(data, use_synth)
    state = Stage2State(head, stage1, strategy, optimizer)
    rng = np.random.default_rng([cfg.seed, 2])
    cached = None
    if strategy == "freeze":
        ts = range(N_DIHEDRAL) if cfg.augment else [0]
        cached = torch.stack([bank_parts(model, dihedral(bank.images, t)) for t in ts])
    epochs = stage1_cfg.epochs if strategy == "train_together" else cfg.epochs
    for epoch in range(epochs):
        t0 = time.perf_counter()
        parts_all = cached[0] if cached is not None else bank_parts(model, bank.images)
        emb = global_embedding(parts_all)          # mining similarities, refreshed each epoch
        batches = location_batches(data, cfg.batch_size if strategy != "train_together" else stage1_cfg.batch_size, rng)
        total, n = 0.0, 0
        head.train()
        if strategy != "freeze":
            model.train()
        for batch in batches:
            a_ids, b_ids, y, anchor = mine_pairs(data, bank, emb, batch, cfg)
            t_anchor = dict(zip(batch.tolist(), rng.integers(N_DIHEDRAL, size=len(batch)) if cfg.augment
                                else np.zeros(len(batch), dtype=int)))
            ts = np.array([t_anchor[a] for a in anchor.tolist()])
            if cached is not None:
                pa, pb = cached[ts, a_ids], cached[ts, b_ids]
            else:
                parts = _transformed_parts(model, bank.images, np.concatenate([a_ids, b_ids]), np.concatenate([ts, ts]))
                pa, pb = parts[:len(a_ids)], parts[len(a_ids):]
            loss = matching_loss(head(pa, pb), torch.from_numpy(y))
            if strategy == "train_together":
                l_i, l_c = stage1_loss(model, data, batch)
                loss_all = loss + l_i + l_c
                joint_opt.zero_grad()
            else:
                loss_all = loss
            optimizer.zero_grad()
            loss_all.backward()
            optimizer.step()
            if joint_opt is not None:
                joint_opt.step()
            total += loss.item()
            n += 1
        rec = {"epoch": epoch + 1, "matching": total / max(n, 1), "seconds": time.perf_counter() - t0}
        state.history.append(rec)
        log.info("stage2[%s] epoch %d L_M %.4f", strategy, rec["epoch"], rec["matching"])
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    head.eval()
    return state


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: Stage1Model, head: MatchHead | None = None, extra: dict | None = None):
    """Versioned container with stage-1 and stage-2 tensors under separate namespaces."""
    blob = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "stage1": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "stage1_sha256": stage1_hash(model),
        "stage2": None if head is None else {k: v.detach().clone() for k, v in head.state_dict().items()},
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_checkpoint(path) -> tuple[Stage1Model, MatchHead | None, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r} in {path}")
    cfg = ModelConfig(**blob["model_config"])
    model = Stage1Model(cfg)
    model.load_state_dict(blob["stage1"])
    model.eval()
    head = None
    if blob["stage2"] is not None:
        head = MatchHead.from_config(cfg)
        head.load_state_dict(blob["stage2"])
        head.eval()
    return model, head, blob

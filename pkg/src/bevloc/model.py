"""Shared encoder, square-ring partition, per-ring classifiers and the pair matching head.

Tensor layouts: images are (B, 3, H, W) floats in [0, 1], feature maps are
(B, C, H, W), and part embeddings are (B, R, C) with ring 0 innermost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    channels: int = 64
    n_rings: int = 4
    n_classes: int = 14
    tau_init: float = 0.07
    ring_width: int | None = None    # match-head per-ring output width, default = channels


def as_batch(images) -> torch.Tensor:
    """HWC numpy image(s) or a BCHW tensor into a float32 BCHW tensor."""
    if isinstance(images, torch.Tensor):
        x = images
    else:
        arr = np.asarray(images, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        x = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected images as (B, 3, H, W), got {tuple(x.shape)}")
    return x.float()


class ToyEncoder(nn.Module):
    """Three stride-2 convolutions: 64x64x3 -> 8x8xC."""

    def __init__(self, image_size: int = 64, channels: int = 64):
        super().__init__()
        if image_size % 8:
            raise ValueError(f"image_size must be divisible by 8, got {image_size}")
        self.image_size = image_size
        self.layers = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(64, 64, 3, stride=1, padding=1), nn.ReLU(),
            nn.Conv2d(64, channels, 3, stride=2, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (self.image_size, self.image_size):
            raise ValueError(f"encoder expects {self.image_size}x{self.image_size} input, got "
                             f"{tuple(x.shape[-2:])}")
        return self.layers(x - 0.5)


def ring_index(size: int, n_rings: int) -> np.ndarray:
    """Ring id per cell of a size x size grid (Chebyshev distance from the center, unit thickness)."""
    if n_rings < 1:
        raise ValueError(f"n_rings must be >= 1, got {n_rings}")
    c = (size - 1) / 2.0
    i = np.arange(size)
    d = np.maximum(np.abs(i[:, None] - c), np.abs(i[None, :] - c))
    ring = np.minimum(np.floor(d).astype(int), n_rings - 1)
    counts = np.bincount(ring.ravel(), minlength=n_rings)
    if (counts == 0).any():
        empty = [int(r) for r in np.flatnonzero(counts == 0)]
        raise ValueError(f"{size}x{size} feature map is too small for {n_rings} rings (empty rings {empty})")
    return ring


def square_ring_partition(fm: torch.Tensor, n_rings: int) -> torch.Tensor:
    """Mean-pool a (B, C, H, W) map over concentric square rings -> (B, R, C)."""
    h, w = fm.shape[-2:]
    if h != w:
        raise ValueError(f"ring partition needs a square feature map, got {h}x{w}")
    ring = torch.from_numpy(ring_index(h, n_rings).ravel())
    onehot = F.one_hot(ring, n_rings).to(fm.dtype)              # (HW, R)
    weights = onehot / onehot.sum(0, keepdim=True)
    return torch.einsum("bcn,nr->brc", fm.flatten(2), weights)


def global_embedding(parts: torch.Tensor) -> torch.Tensor:
    """Concatenate ring vectors and L2-normalize -> (B, R*C)."""
    flat = parts.flatten(-2)
    norm = flat.norm(dim=-1, keepdim=True)
    if (norm == 0).any():
        raise ValueError("degenerate embedding: all-zero ring vectors")
    return flat / norm


class ClassifierBank(nn.Module):
    """One linear location classifier per ring."""

    def __init__(self, n_rings: int, channels: int, n_classes: int):
        super().__init__()
        self.heads = nn.ModuleList(nn.Linear(channels, n_classes) for _ in range(n_rings))

    def forward(self, parts: torch.Tensor) -> list[torch.Tensor]:
        if parts.shape[-2] != len(self.heads):
            raise ValueError(f"{parts.shape[-2]} rings but {len(self.heads)} classifiers")
        return [head(parts[..., r, :]) for r, head in enumerate(self.heads)]


class Stage1Model(nn.Module):
    """Encoder + per-ring classifiers + learnable temperature (kept as log tau)."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = ToyEncoder(cfg.image_size, cfg.channels)
        self.classifiers = ClassifierBank(cfg.n_rings, cfg.channels, cfg.n_classes)
        self.log_tau = nn.Parameter(torch.tensor(float(np.log(cfg.tau_init))))

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp()

    def encode(self, images) -> torch.Tensor:
        return self.encoder(as_batch(images))

    def parts(self, images) -> torch.Tensor:
        return square_ring_partition(self.encode(images), self.cfg.n_rings)

    def classify_parts(self, parts: torch.Tensor) -> list[torch.Tensor]:
        return self.classifiers(parts)

    def embed(self, images) -> torch.Tensor:
        return global_embedding(self.parts(images))


def _mlp(n_in: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, 2 * n_in), nn.ReLU(), nn.Linear(2 * n_in, n_out))


def pair_features(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Concatenated pair plus its elementwise product and absolute difference."""
    return torch.cat([a, b, a * b, (a - b).abs()], -1)


class MatchHead(nn.Module):
    """Per-ring fusion MLPs on (a_r, b_r), then an MLP on the concatenation to 2 logits."""

    def __init__(self, n_rings: int = 4, channels: int = 64, ring_width: int | None = None):
        super().__init__()
        self.n_rings, self.channels = n_rings, channels
        width = ring_width or channels
        self.ring_mlps = nn.ModuleList(_mlp(4 * channels, width) for _ in range(n_rings))
        self.fuse = _mlp(n_rings * width, 2)

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> "MatchHead":
        return cls(cfg.n_rings, cfg.channels, cfg.ring_width)

    def logits(self, parts_a: torch.Tensor, parts_b: torch.Tensor) -> torch.Tensor:
        if parts_a.shape != parts_b.shape:
            raise ValueError(f"part shapes differ: {tuple(parts_a.shape)} vs {tuple(parts_b.shape)}")
        if parts_a.shape[-2:] != (self.n_rings, self.channels):
            raise ValueError(f"expected parts (..., {self.n_rings}, {self.channels}), got {tuple(parts_a.shape)}")
        a, b = F.normalize(parts_a, dim=-1), F.normalize(parts_b, dim=-1)
        fused = [mlp(pair_features(a[..., r, :], b[..., r, :])) for r, mlp in enumerate(self.ring_mlps)]
        return self.fuse(torch.cat(fused, -1))

    def forward(self, parts_a: torch.Tensor, parts_b: torch.Tensor) -> torch.Tensor:
        """Match probability; slot a holds BEV-type parts, slot b satellite-type parts."""
        return self.logits(parts_a, parts_b).softmax(-1)[..., 1]


def match_head(head: MatchHead, parts_a: torch.Tensor, parts_b: torch.Tensor) -> torch.Tensor:
    return head(parts_a, parts_b)

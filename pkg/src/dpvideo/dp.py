"""Gradient clipping, noisy aggregation, and the private training steps.

Two step flavors share the same clip-then-noise pipeline; they differ in what
the protected unit is:

  - dp_sgd_step: each clip is a sample; its gradient is clipped directly.
  - multi_clip_step: each video is a sample; the gradients of its sampled
    clips are averaged first, then the per-video average is clipped. No
    cross-video mixing happens before clipping, so one video contributes at
    most clip_norm to the aggregate regardless of how many clips it supplied.

Noise is drawn from a counter-based stream keyed by (seed, step_id), so a
step's noise never depends on the number of clips per video.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import Tape, per_sample_gradients
from .models import ParameterStore


@dataclass(frozen=True)
class NoiseConfig:
    clip_norm: float
    noise_multiplier: float
    seed: int

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")


@dataclass
class MultiClipEntry:
    """One video's contribution to a step: its label and k sampled clips.

    Clips are (clip_index, frames) pairs; indices must be distinct.
    """

    label: int
    clips: list[tuple[int, np.ndarray]]

    def __post_init__(self):
        if len(self.clips) < 1:
            raise ValueError("a video entry must carry at least one clip")
        indices = [i for i, _ in self.clips]
        if len(set(indices)) != len(indices):
            raise ValueError(f"duplicate clip indices in video entry: {sorted(indices)}")


@dataclass
class StepStats:
    batch_size: int
    mean_loss: float


def clip_gradient(grad: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale grad to l2 norm at most clip_norm: grad / max(1, |grad| / clip_norm).

    Gradients already within the bound pass through unchanged (bitwise); the
    zero vector is a fixed point.
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    norm = float(np.linalg.norm(grad))
    if norm <= clip_norm:
        return grad
    return grad * (clip_norm / norm)


def noisy_aggregate(clipped: list[np.ndarray], cfg: NoiseConfig, step_id: int) -> np.ndarray:
    """(sum of clipped gradients + Gaussian noise) / batch size.

    Noise coordinates are i.i.d. N(0, (sigma * clip_norm)^2) and a pure
    function of (cfg.seed, step_id, coordinate), never of the batch contents.
    """
    if not clipped:
        raise ValueError("cannot aggregate an empty batch")
    total = np.zeros_like(clipped[0])
    for g in clipped:  # fixed index order keeps the reduction bit-deterministic
        total += g
    if cfg.noise_multiplier > 0.0:
        scale = cfg.noise_multiplier * cfg.clip_norm
        total = total + scale * rng.standard_normal(cfg.seed, rng.NOISE, step_id, total.size)
    return total / len(clipped)


def clip_sample_gradients(
    tape: Tape, store: ParameterStore, batch: list[tuple[np.ndarray, int]], cfg: NoiseConfig
) -> tuple[list[np.ndarray], list[float]]:
    """Clipped per-clip gradients for a clip-mode batch, in batch order."""
    clips = np.stack([c for c, _ in batch])
    labels = np.array([lab for _, lab in batch], dtype=np.float64)
    grads, losses = per_sample_gradients(tape, {"clip": clips, "label": labels}, store)
    return [clip_gradient(g, cfg.clip_norm) for g in grads], losses


def per_video_gradient(
    tape: Tape, store: ParameterStore, entry: MultiClipEntry
) -> tuple[np.ndarray, list[float]]:
    """Equal-weight average of the entry's clip gradients, summed in clip-index order."""
    ordered = sorted(entry.clips, key=lambda pair: pair[0])
    clips = np.stack([c for _, c in ordered])
    labels = np.full(len(ordered), entry.label, dtype=np.float64)
    grads, losses = per_sample_gradients(tape, {"clip": clips, "label": labels}, store)
    total = np.zeros_like(grads[0])
    for g in grads:
        total += g
    return total / len(grads), losses


def clip_video_gradients(
    tape: Tape, store: ParameterStore, batch: list[MultiClipEntry], cfg: NoiseConfig
) -> tuple[list[np.ndarray], list[float]]:
    """Clipped per-video averaged gradients for a video-mode batch."""
    clipped = []
    losses: list[float] = []
    for entry in batch:
        avg, entry_losses = per_video_gradient(tape, store, entry)
        clipped.append(clip_gradient(avg, cfg.clip_norm))
        losses.extend(entry_losses)
    return clipped, losses


def dp_sgd_step(
    batch: list[tuple[np.ndarray, int]],
    tape: Tape,
    store: ParameterStore,
    cfg: NoiseConfig,
    lr: float,
    step_id: int,
) -> StepStats:
    """One clip-level private step: clip per-clip gradients, noise, descend."""
    clipped, losses = clip_sample_gradients(tape, store, batch, cfg)
    update = noisy_aggregate(clipped, cfg, step_id)
    store.apply_delta(-lr * update)
    return StepStats(batch_size=len(batch), mean_loss=float(np.mean(losses)))


def multi_clip_step(
    batch: list[MultiClipEntry],
    tape: Tape,
    store: ParameterStore,
    cfg: NoiseConfig,
    lr: float,
    step_id: int,
) -> StepStats:
    """One video-level private step: average clips within each video, then
    clip per video, noise, descend."""
    clipped, losses = clip_video_gradients(tape, store, batch, cfg)
    update = noisy_aggregate(clipped, cfg, step_id)
    store.apply_delta(-lr * update)
    return StepStats(batch_size=len(batch), mean_loss=float(np.mean(losses)))

"""End-to-end private training runs.

A run draws a Poisson subsample of videos each step (matching the accounted
mechanism), performs a multi-clip private step, advances the accountant, and
stops when the next step would exceed the privacy budget. Everything is a
pure function of the config, including the reported metrics.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import rng
from .accountant import AccountantState, calibrate_sigma, to_epsilon
from .data import DatasetSpec, VideoSample, chunk_video, load_dataset, sample_clips
from .dp import MultiClipEntry, NoiseConfig, multi_clip_step
from .finetune import Scheme, apply_scheme
from .models import (
    AdapterSpec,
    Model,
    ModelConfig,
    build_model,
    insert_adapters,
    load_checkpoint,
    load_into,
    predict_video,
    save_checkpoint,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    train_data: str
    eval_data: str
    hidden_dims: tuple[int, ...]
    norm_kind: str = "layer"
    norm_groups: int = 1
    scheme: str = "full"
    bottleneck_dim: int | None = None
    clips_per_video: int = 1
    target_epsilon: float | None = None
    noise_multiplier: float | None = None
    delta: float = 1e-5
    clip_norm: float = 1.0
    sampling_rate: float = 0.05
    max_epochs: float = 10.0
    learning_rate: float = 0.1
    seed: int = 0
    checkpoint: str | None = None
    eval_every: int = 50

    def __post_init__(self):
        from .finetune import SCHEME_KINDS

        if self.scheme not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEME_KINDS}")
        if (self.target_epsilon is None) == (self.noise_multiplier is None):
            raise ValueError("provide exactly one of target_epsilon and noise_multiplier")
        if self.target_epsilon is not None and self.target_epsilon <= 0:
            raise ValueError("target_epsilon must be positive")
        if self.noise_multiplier is not None and self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")
        if self.clips_per_video < 1:
            raise ValueError("clips_per_video must be at least 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError("sampling_rate must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.max_epochs <= 0 or self.learning_rate <= 0:
            raise ValueError("max_epochs and learning_rate must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.scheme == "adapter" and self.bottleneck_dim is None:
            raise ValueError("adapter scheme requires bottleneck_dim")


@dataclass
class EvalRecord:
    step: int
    epsilon: float
    loss: float
    accuracy: float


@dataclass
class RunReport:
    config: dict
    scheme: str
    clips_per_video: int
    seed: int
    trainable_params: int
    records: list[EvalRecord]
    final_epsilon: float
    delta: float
    noise_multiplier: float
    sampling_rate: float
    steps: int
    best_order: int
    final_accuracy: float
    expected_batch_size: float
    wall_time_s: float


def _model_config(spec: DatasetSpec, config: TrainConfig) -> ModelConfig:
    return ModelConfig(
        input_dim=spec.feature_dim,
        frames_per_clip=spec.clip_length,
        hidden_dims=tuple(config.hidden_dims),
        norm_kind=config.norm_kind,
        norm_groups=config.norm_groups,
        num_classes=spec.num_classes,
    )


def _check_compatible(train_spec: DatasetSpec, eval_spec: DatasetSpec) -> None:
    for attr in ("feature_dim", "clip_length", "num_classes"):
        if getattr(train_spec, attr) != getattr(eval_spec, attr):
            raise ValueError(
                f"train/eval dataset mismatch: {attr} differs "
                f"({getattr(train_spec, attr)} vs {getattr(eval_spec, attr)})"
            )


def setup_model(config: TrainConfig, spec: DatasetSpec) -> Model:
    """Build, optionally warm-start from a checkpoint, and apply the scheme."""
    model = build_model(_model_config(spec, config), config.seed)
    if config.checkpoint is not None:
        load_into(model.params, load_checkpoint(config.checkpoint))
    if config.scheme == "adapter":
        insert_adapters(model, AdapterSpec(config.bottleneck_dim), config.seed)
    apply_scheme(model.params, Scheme(config.scheme, config.bottleneck_dim), config.seed)
    return model


def evaluate(model: Model, videos: list[VideoSample]) -> float:
    """Video-level top-1 accuracy; consumes no privacy budget."""
    if not videos:
        raise ValueError("empty evaluation set")
    hits = sum(1 for v in videos if predict_video(model, v) == v.label)
    return hits / len(videos)


def train(config: TrainConfig) -> RunReport:
    started = time.perf_counter()
    train_spec, train_videos = load_dataset(config.train_data)
    eval_spec, eval_videos = load_dataset(config.eval_data)
    _check_compatible(train_spec, eval_spec)
    if config.clips_per_video > train_spec.clips_per_video:
        raise ValueError(
            f"clips_per_video {config.clips_per_video} exceeds the {train_spec.clips_per_video} "
            f"clips available per video"
        )

    model = setup_model(config, train_spec)
    frozen_names = [n for n in model.params.names() if not model.params.is_trainable(n)]
    frozen_before = model.params.snapshot(frozen_names)

    q = config.sampling_rate
    total_steps = math.ceil(config.max_epochs / q)
    if config.noise_multiplier is not None:
        sigma = config.noise_multiplier
    else:
        sigma = calibrate_sigma(config.target_epsilon, config.delta, q, total_steps)
    log.info(
        "training: scheme=%s k=%d sigma=%.4f steps=%d expected_batch=%.1f trainable=%d",
        config.scheme, config.clips_per_video, sigma, total_steps,
        q * len(train_videos), model.params.count_trainable(),
    )

    noise_cfg = NoiseConfig(clip_norm=config.clip_norm, noise_multiplier=sigma, seed=config.seed)
    acct = AccountantState.create(q, sigma)
    records: list[EvalRecord] = []
    recent_losses: list[float] = []
    last_loss = float("nan")

    def record_eval() -> None:
        nonlocal last_loss
        if recent_losses:
            last_loss = float(np.mean(recent_losses))
            recent_losses.clear()
        acc = evaluate(model, eval_videos)
        eps = to_epsilon(acct, config.delta)
        records.append(EvalRecord(step=acct.steps, epsilon=eps, loss=last_loss, accuracy=acc))
        log.info("step %d: eps=%.4f loss=%.4f acc=%.4f", acct.steps, eps, last_loss, acc)

    for step in range(total_steps):
        if config.target_epsilon is not None:
            if to_epsilon(acct.advance(1), config.delta) > config.target_epsilon:
                break
        selector = rng.stream(config.seed, rng.POISSON, step)
        mask = selector.random(len(train_videos)) < q
        selected = [v for v, keep in zip(train_videos, mask) if keep]
        if selected:
            clip_gen = rng.stream(config.seed, rng.CLIP_SAMPLE, step)
            batch = [
                MultiClipEntry(
                    label=v.label,
                    clips=sample_clips(v, train_spec.clip_length, config.clips_per_video, clip_gen),
                )
                for v in selected
            ]
            stats = multi_clip_step(batch, model.tape, model.params, noise_cfg, config.learning_rate, step)
            recent_losses.append(stats.mean_loss)
        # an empty subsample still invokes the mechanism, so it costs a step
        acct = acct.advance(1)
        if acct.steps % config.eval_every == 0:
            record_eval()

    if not records or records[-1].step != acct.steps:
        record_eval()

    # the spent budget must be reproducible from (q, sigma, steps) alone
    final_state = AccountantState.create(q, sigma, steps=acct.steps)
    final_epsilon, best_order = final_state.epsilon_with_order(config.delta)
    if final_epsilon != to_epsilon(acct, config.delta):
        raise AssertionError("privacy ledger mismatch: recomputed epsilon differs from tracked value")
    if config.target_epsilon is not None and final_epsilon > config.target_epsilon + 1e-6:
        raise AssertionError("spent epsilon exceeds the configured target")

    frozen_after = model.params.snapshot(frozen_names)
    for name in frozen_names:
        if not np.array_equal(frozen_before[name], frozen_after[name]):
            raise AssertionError(f"frozen parameter {name!r} changed during training")

    return RunReport(
        config=_echo(config),
        scheme=config.scheme,
        clips_per_video=config.clips_per_video,
        seed=config.seed,
        trainable_params=model.params.count_trainable(),
        records=records,
        final_epsilon=final_epsilon,
        delta=config.delta,
        noise_multiplier=sigma,
        sampling_rate=q,
        steps=acct.steps,
        best_order=best_order,
        final_accuracy=records[-1].accuracy,
        expected_batch_size=q * len(train_videos),
        wall_time_s=time.perf_counter() - started,
    )


def _echo(config: TrainConfig) -> dict:
    echo = asdict(config)
    echo["hidden_dims"] = list(config.hidden_dims)
    return echo


def sweep_clips(
    config: TrainConfig,
    k_values: list[int],
    seeds: list[int] | None = None,
    jobs: int = 1,
) -> list[RunReport]:
    """One run per (k, seed) with shared calibration; identical (sigma, steps,
    epsilon) across k is asserted, since the accountant never sees k. Runs are
    fully independent, so jobs > 1 executes them in separate processes."""
    if not k_values:
        raise ValueError("no clip counts to sweep")
    seeds = [config.seed] if seeds is None else list(seeds)
    configs = [
        replace(config, clips_per_video=k, seed=seed) for seed in seeds for k in k_values
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(train, configs))
    else:
        reports = [train(c) for c in configs]
    for start in range(0, len(reports), len(k_values)):
        per_seed = reports[start : start + len(k_values)]
        first = per_seed[0]
        for rep in per_seed[1:]:
            if (rep.noise_multiplier, rep.steps, rep.final_epsilon) != (
                first.noise_multiplier, first.steps, first.final_epsilon,
            ):
                raise AssertionError(
                    "sweep runs diverged in (sigma, steps, epsilon); the privacy spend "
                    "must not depend on clips_per_video"
                )
    return reports


@dataclass(frozen=True)
class PretrainConfig:
    data: str
    out: str
    hidden_dims: tuple[int, ...]
    norm_kind: str = "layer"
    norm_groups: int = 1
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def pretrain(config: PretrainConfig) -> tuple[Model, float]:
    """Non-private SGD over all clips of a source dataset; saves a checkpoint.

    Used to produce the warm start that the parameter-efficient schemes
    fine-tune privately.
    """
    spec, videos = load_dataset(config.data)
    model = build_model(
        ModelConfig(
            input_dim=spec.feature_dim,
            frames_per_clip=spec.clip_length,
            hidden_dims=tuple(config.hidden_dims),
            norm_kind=config.norm_kind,
            norm_groups=config.norm_groups,
            num_classes=spec.num_classes,
        ),
        config.seed,
    )
    clips = []
    labels = []
    for v in videos:
        for clip in chunk_video(v, spec.clip_length):
            clips.append(clip)
            labels.append(v.label)
    clips_arr = np.stack(clips)
    labels_arr = np.array(labels, dtype=np.float64)

    from .autodiff import gradient_of_mean_loss  # local to keep module deps flat

    for epoch in range(config.epochs):
        order = rng.stream(config.seed, rng.SHUFFLE, epoch).permutation(len(clips))
        for start in range(0, len(clips), config.batch_size):
            idx = order[start : start + config.batch_size]
            grad = gradient_of_mean_loss(
                model.tape, {"clip": clips_arr[idx], "label": labels_arr[idx]}, model.params
            )
            model.params.apply_delta(-config.learning_rate * grad)
        log.info("pretrain epoch %d/%d done", epoch + 1, config.epochs)
    accuracy = evaluate(model, videos)
    save_checkpoint(config.out, model.params)
    log.info("pretrain finished: source accuracy %.4f, checkpoint %s", accuracy, config.out)
    return model, accuracy


CSV_HEADER = "step,epsilon,loss,accuracy"


def report_to_dict(report: RunReport) -> dict:
    """JSON-ready view of a report.

    Wall time is deliberately left out so that identical configs produce
    byte-identical report files.
    """
    return {
        "config": report.config,
        "scheme": report.scheme,
        "clips_per_video": report.clips_per_video,
        "seed": report.seed,
        "trainable_params": report.trainable_params,
        "records": [asdict(r) for r in report.records],
        "final_epsilon": report.final_epsilon,
        "delta": report.delta,
        "noise_multiplier": report.noise_multiplier,
        "sampling_rate": report.sampling_rate,
        "steps": report.steps,
        "best_order": report.best_order,
        "final_accuracy": report.final_accuracy,
        "expected_batch_size": report.expected_batch_size,
    }


def write_report(report: RunReport, json_path: str, csv_path: str) -> None:
    import json

    with open(json_path, "w") as f:
        json.dump(report_to_dict(report), f, indent=2)
        f.write("\n")
    with open(csv_path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for r in report.records:
            f.write(f"{r.step},{r.epsilon!r},{r.loss!r},{r.accuracy!r}\n")

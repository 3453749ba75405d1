"""MSE training loop with Adam and step decay, plus corpus evaluation.

``generic`` runs train on every cue with modality and meta masking applied
per sample; ``specific`` runs train on a fixed cue subset without masking.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kvconfig
from .errors import ConfigError, TrainingError, ValidationError
from .masking import (
    NO_PATTERN, EvalPattern, MaskPolicy, apply_eval_pattern, apply_train_masking, drop_cues,
    restrict_cues, scene_stream,
)
from .metrics import MetricReport, corpus_report
from .model import ModelConfig, ModelParams, forward_batch, predict, save_model
from .nn import AdamState, adam_step, backward, clip_grad_norm, mse, zero_grad
from .scene import CUE_ORDER, NEIGHBOR, PRIMARY, CueKind, Scene

log = logging.getLogger(__name__)

ALL_CUES = CUE_ORDER


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-4
    decay_factor: float = 0.1
    decay_fraction: float = 0.8
    batch_size: int = 32
    seed: int = 0
    mode: str = "generic"
    cues: tuple[str, ...] = ("T", "P3d", "P2d", "B3d", "B2d")
    modality_rate: float = 0.3
    meta_rate: float = 0.1
    eval_every: int = 1
    reroot: bool = False
    max_steps: int | None = None
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.mode not in ("generic", "specific"):
            raise ConfigError(f"mode must be 'generic' or 'specific', got {self.mode!r}")
        if "T" not in self.cues:
            raise ConfigError("the cue menu must include the trajectory cue T")
        for c in self.cues:
            CueKind.parse(c)
        MaskPolicy(self.modality_rate, self.meta_rate)

    @property
    def decay_epoch(self) -> int:
        # at least one epoch runs at the base rate, even for very short runs
        return max(1, int(math.floor(self.decay_fraction * self.epochs)))

    @property
    def cue_kinds(self) -> tuple[CueKind, ...]:
        kinds = {CueKind.parse(c) for c in self.cues}
        return tuple(k for k in CUE_ORDER if k in kinds)

    @property
    def mask_policy(self) -> MaskPolicy:
        if self.mode == "specific":
            return MaskPolicy(0.0, 0.0, self.seed)
        return MaskPolicy(self.modality_rate, self.meta_rate, self.seed)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-indexed ``epoch``."""
        return self.lr if epoch <= self.decay_epoch else self.lr * self.decay_factor

    def to_kv(self) -> dict[str, str]:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = ",".join(v) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_kv(cls, values: dict[str, str], strict: bool = True) -> "TrainConfig":
        return cls(**kvconfig.coerce(cls, values, strict=strict))


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)
    checkpoint: str | None = None
    best_epoch: int | None = None
    steps: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        keys = ["epoch", "steps", "lr", "train_loss", "val_ade", "val_fde"]
        writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: repr(row[k]) if isinstance(row.get(k), float) else row.get(k, "")
                             for k in keys})
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def __eq__(self, other) -> bool:
        return (isinstance(other, RunLog) and self.rows == other.rows
                and self.best_epoch == other.best_epoch and self.steps == other.steps)


def mse_loss(pred, truth) -> float:
    pred = np.asarray(getattr(pred, "positions", pred), dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValidationError(f"prediction shape {pred.shape} differs from truth {truth.shape}")
    return float(np.mean((pred - truth) ** 2))


def reroot(scene: Scene, index: int) -> Scene:
    """Make agent ``index`` the primary; needs per-agent futures in ``scene.meta``."""
    futures = scene.meta.get("futures")
    if futures is None:
        raise ValidationError(f"scene {scene.id} carries no per-agent futures")
    if index == 0:
        return scene
    order = [index] + [i for i in range(scene.n_agents) if i != index]
    new_primary = scene.agents[index].trajectory
    shift = new_primary.values[-1, 0].copy()
    agents = []
    for rank, i in enumerate(order):
        a = scene.agents[i]
        cues = [c.with_values(c.values - shift) if c.kind is CueKind.T else c for c in a.cues]
        agents.append(replace(a, cues=tuple(cues), role=PRIMARY if rank == 0 else NEIGHBOR))
    return replace(scene, id=f"{scene.id}@{index}", agents=tuple(agents),
                   future=np.asarray(futures[index]) - shift,
                   meta={k: v for k, v in scene.meta.items() if k != "futures"})


def prepare_training_scenes(scenes: list[Scene], config: TrainConfig) -> list[Scene]:
    scenes = [drop_cues(s, config.cue_kinds) for s in scenes]
    if config.reroot:
        scenes = [reroot(s, i) if i else s for s in scenes for i in range(s.n_agents)]
    return scenes


def make_batches(scenes: list[Scene], config: TrainConfig, epoch: int) -> list[list[int]]:
    """Shuffle, group by agent count, chunk; deterministic in (seed, epoch)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, epoch]))
    order = rng.permutation(len(scenes))
    order = sorted(order, key=lambda i: scenes[i].n_agents)
    batches, current, n = [], [], None
    for i in order:
        if current and (scenes[i].n_agents != n or len(current) == config.batch_size):
            batches.append(current)
            current = []
        current.append(int(i))
        n = scenes[i].n_agents
    if current:
        batches.append(current)
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def _slot_ids(batch_scenes: list[Scene], model_config: ModelConfig, rng) -> list[list[int]] | None:
    if model_config.identity != "slot":
        return None
    out = []
    for s in batch_scenes:
        neighbours = rng.permutation(np.arange(1, model_config.max_agents))[:s.n_agents - 1]
        out.append([0] + [int(x) for x in neighbours])
    return out


def train(
    scenes: list[Scene],
    model_config: ModelConfig,
    config: TrainConfig,
    val_scenes: list[Scene] | None = None,
    checkpoint: str | Path | None = None,
    params: ModelParams | None = None,
    progress: bool = False,
) -> tuple[ModelParams, RunLog]:
    """Fit a model; returns the best-validation parameters (final ones without a val split)."""
    if not scenes:
        raise ValidationError("training corpus is empty")
    train_scenes = prepare_training_scenes(scenes, config)
    params = params or ModelParams.init(model_config, config.seed)
    named = params.named()
    state = AdamState()
    policy = config.mask_policy
    runlog = RunLog(checkpoint=str(checkpoint) if checkpoint else None)
    best = (math.inf, None)
    best_arrays = None
    steps = 0
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        losses, weights = [], []
        slot_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2, epoch]))
        for bi, idx in enumerate(make_batches(train_scenes, config, epoch)):
            batch_scenes = []
            for i in idx:
                s = train_scenes[i]
                if policy.modality_rate or policy.meta_rate:
                    s = apply_train_masking(s, policy, scene_stream(config.seed, i, epoch))
                batch_scenes.append(s)
            zero_grad(named)
            pred, _ = forward_batch(batch_scenes, params, model_config,
                                    slot_ids=_slot_ids(batch_scenes, model_config, slot_rng))
            loss = mse(pred, np.stack([s.future for s in batch_scenes]))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {bi} "
                    f"(scenes {[train_scenes[i].id for i in idx][:4]}...), lr={lr}")
            backward(loss)
            if config.clip_norm is not None:
                clip_grad_norm(named, config.clip_norm)
            adam_step(named, state, lr)
            losses.append(value)
            weights.append(len(idx))
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        row = {"epoch": epoch, "steps": steps, "lr": lr,
               "train_loss": float(np.average(losses, weights=weights))}
        last = epoch == config.epochs or (config.max_steps is not None and steps >= config.max_steps)
        if val_scenes and (epoch % config.eval_every == 0 or last):
            rep = evaluate(params, model_config, val_scenes, config.cue_kinds, seed=config.seed)
            row["val_ade"], row["val_fde"] = rep.ade, rep.fde
            if rep.ade < best[0]:
                best = (rep.ade, epoch)
                best_arrays = params.arrays()
                if checkpoint:
                    save_model(checkpoint, params, model_config)
        runlog.rows.append(row)
        if progress:
            log.info("epoch %d/%d steps=%d lr=%.2e loss=%.5f val_ade=%s (%.0fs)", epoch,
                     config.epochs, steps, lr, row["train_loss"], row.get("val_ade", "-"),
                     time.perf_counter() - t0)
        if config.max_steps is not None and steps >= config.max_steps:
            break
    runlog.steps = steps
    if best_arrays is not None:
        runlog.best_epoch = best[1]
        params = ModelParams.from_arrays(best_arrays)
    elif checkpoint:
        save_model(checkpoint, params, model_config)
    return params, runlog


def prepare_eval_scene(scene: Scene, cues, pattern: EvalPattern, rng) -> Scene:
    scene = restrict_cues(scene, cues)
    return apply_eval_pattern(scene, pattern, rng)


def evaluate(
    params: ModelParams,
    model_config: ModelConfig,
    scenes: list[Scene],
    cues=ALL_CUES,
    pattern: EvalPattern = NO_PATTERN,
    seed: int = 0,
    name: str | None = None,
    batch_size: int = 64,
) -> MetricReport:
    """Mask cues outside ``cues``, apply ``pattern``, predict and aggregate."""
    cues = tuple(CueKind.parse(c) if isinstance(c, str) else c for c in cues)
    if CueKind.T not in cues:
        raise ConfigError("evaluation cue subset must include the trajectory cue T")
    if not scenes:
        raise ValidationError("evaluation corpus is empty")
    prepared = [prepare_eval_scene(s, cues, pattern, scene_stream(seed, i, 7919))
                for i, s in enumerate(scenes)]
    preds = predict(prepared, params, model_config, batch_size)
    truths = np.stack([s.future for s in scenes])
    label = name or ("+".join(k.value for k in cues)
                     + ("" if pattern.name == "none" else f" {pattern.describe()}"))
    return corpus_report(label, preds, truths, [s.id for s in scenes], fps=scenes[0].fps)


def batch_loss(scenes: list[Scene], params: ModelParams, model_config: ModelConfig):
    """Differentiable MSE of one batch (used by gradient checks)."""
    pred, _ = forward_batch(scenes, params, model_config)
    return mse(pred, np.stack([s.future for s in scenes]))


__all__ = ["RunLog", "TrainConfig", "batch_loss", "evaluate", "make_batches", "mse_loss",
           "prepare_eval_scene", "reroot", "train"]

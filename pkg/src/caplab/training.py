"""Two-stage training, evaluation, checkpointing, and gradient verification.

Stage one teaches the network to undo compression: inputs are the
compressed low-light images, targets the uncompressed low-light images.
Stage two fine-tunes the same weights toward the bright references.
Both stages minimize the identical Charbonnier objective over random
aligned patch crops with horizontal/vertical flips as the only
augmentation; evaluation always runs on full images.

Everything is deterministic for a fixed seed: weight init comes from a
seeded torch generator, patch sampling from a seeded numpy generator,
and the optimizer is plain Adam on a single CPU thread, so repeated
runs produce bit-identical checkpoints.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import (
    IngestionError,
    InternalConsistencyError,
    InvalidConfigError,
    InvalidInputError,
    NumericError,
)
from .imaging import MetricRecord, charbonnier, psnr, ssim
from .jpeg.synth import DatasetManifest
from .model import BrightnessGuidedUNet, ModelConfig, build_model

__all__ = [
    "CHECKPOINT_FORMAT_VERSION",
    "TrainConfig",
    "Checkpoint",
    "EvalReport",
    "GradCheckReport",
    "charbonnier_loss",
    "pretrain",
    "finetune",
    "evaluate",
    "evaluate_pairs",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "run_model_on_image",
    "write_history_csv",
]

CHECKPOINT_FORMAT_VERSION = 1

STAGES = ("pretrain", "finetune")
STAGE_TAGS = ("pretrain", "finetune", "scratch")
SCHEDULES = ("constant", "cosine")

HISTORY_COLUMNS = ("epoch", "train_loss", "lr", "val_psnr", "val_ssim", "val_charbonnier")


@dataclass
class TrainConfig:
    """Hyperparameters for one training stage.

    ``use_pretrain`` and ``use_bgsa`` are the two ablation toggles: the
    former decides whether fine-tuning starts from a stage-one
    checkpoint, the latter overrides the model's masking flag for the
    run.
    """

    stage: str = "pretrain"
    epochs: int = 2
    batch_size: int = 8
    patch_size: int = 64
    learning_rate: float = 2e-4
    lr_schedule: str = "cosine"
    seed: int = 0
    eps_charbonnier: float = 1e-3
    use_pretrain: bool = True
    use_bgsa: bool = True

    def validate(self, model_config: ModelConfig | None = None) -> None:
        if self.stage not in STAGES:
            raise InvalidConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise InvalidConfigError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if self.lr_schedule not in SCHEDULES:
            raise InvalidConfigError(
                f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}"
            )
        if self.eps_charbonnier < 0:
            raise InvalidConfigError(
                f"eps_charbonnier must be >= 0, got {self.eps_charbonnier}"
            )
        if model_config is not None:
            f = model_config.downsample_factor
            if self.patch_size < f or self.patch_size % f:
                raise InvalidConfigError(
                    f"patch_size {self.patch_size} must be a positive multiple "
                    f"of the downsample factor {f}"
                )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def charbonnier_loss(pred: torch.Tensor, target: torch.Tensor,
                     eps: float = 1e-3) -> torch.Tensor:
    """Differentiable mean Charbonnier distance (the training objective)."""
    if pred.shape != target.shape:
        raise InvalidInputError(
            f"prediction shape {tuple(pred.shape)} != target {tuple(target.shape)}"
        )
    if eps < 0:
        raise InvalidConfigError(f"eps must be >= 0, got {eps}")
    d = pred - target
    return torch.sqrt(d * d + eps * eps).mean()


@dataclass
class Checkpoint:
    """Self-describing training artifact: config, weights, provenance."""

    model_config: ModelConfig
    stage: str
    state_dict: dict
    seed: int
    param_count: int
    history: list = field(default_factory=list)
    optimizer_state: dict | None = None
    train_config: dict | None = None
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def build_model(self) -> BrightnessGuidedUNet:
        model = build_model(self.model_config)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    payload = {
        "kind": "caplab-checkpoint",
        "format_version": ckpt.format_version,
        "model_config": ckpt.model_config.to_dict(),
        "stage": ckpt.stage,
        "state_dict": ckpt.state_dict,
        "seed": ckpt.seed,
        "param_count": ckpt.param_count,
        "history": ckpt.history,
        "optimizer_state": ckpt.optimizer_state,
        "train_config": ckpt.train_config,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"no checkpoint file at {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise IngestionError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != "caplab-checkpoint":
        raise IngestionError(f"{path} is not a checkpoint of this package")
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise IngestionError(
            f"checkpoint format {version} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    if payload.get("stage") not in STAGE_TAGS:
        raise IngestionError(f"checkpoint stage {payload.get('stage')!r} unknown")
    return Checkpoint(
        model_config=ModelConfig.from_dict(payload["model_config"]),
        stage=payload["stage"],
        state_dict=payload["state_dict"],
        seed=payload["seed"],
        param_count=payload["param_count"],
        history=payload["history"],
        optimizer_state=payload["optimizer_state"],
        train_config=payload["train_config"],
    )


def _to_chw(img: np.ndarray) -> torch.Tensor:
    a = np.asarray(img, dtype=np.float32)
    if a.ndim == 2:
        a = a[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1)))


def _to_hwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().double().numpy().transpose(1, 2, 0)


def run_model_on_image(model, img: np.ndarray) -> np.ndarray:
    """Full-image inference: (H, W, C) in, unclamped (H, W, C) float64 out."""
    x = _to_chw(img)
    dtype = torch.float32
    if isinstance(model, nn.Module):
        p = next(model.parameters(), None)
        if p is not None:
            dtype = p.dtype
    with torch.no_grad():
        out = model(x.to(dtype)[None])
    return _to_hwc(out[0])


class _PatchSampler:
    """Seeded random aligned crops with horizontal/vertical flips."""

    def __init__(self, pairs, patch_size: int, rng: np.random.Generator):
        if not pairs:
            raise InvalidConfigError("no training pairs to sample from")
        for image_id, inp, tgt in pairs:
            if inp.shape != tgt.shape:
                raise InvalidInputError(
                    f"pair {image_id}: input {tuple(inp.shape)} != target "
                    f"{tuple(tgt.shape)}"
                )
            if inp.shape[1] < patch_size or inp.shape[2] < patch_size:
                raise InvalidConfigError(
                    f"image {image_id} ({inp.shape[1]}x{inp.shape[2]}) smaller "
                    f"than patch size {patch_size}"
                )
        self.pairs = pairs
        self.patch = patch_size
        self.rng = rng

    def sample(self, batch_size: int):
        xs, ys, ids = [], [], []
        p = self.patch
        for _ in range(batch_size):
            i = int(self.rng.integers(len(self.pairs)))
            image_id, inp, tgt = self.pairs[i]
            y0 = int(self.rng.integers(inp.shape[1] - p + 1))
            x0 = int(self.rng.integers(inp.shape[2] - p + 1))
            fh = bool(self.rng.integers(2))
            fv = bool(self.rng.integers(2))
            a = inp[:, y0 : y0 + p, x0 : x0 + p]
            b = tgt[:, y0 : y0 + p, x0 : x0 + p]
            dims = ([2] if fh else []) + ([1] if fv else [])
            if dims:
                a = torch.flip(a, dims)
                b = torch.flip(b, dims)
            xs.append(a)
            ys.append(b)
            ids.append(f"{image_id}@y{y0}x{x0}{'h' if fh else ''}{'v' if fv else ''}")
        return torch.stack(xs), torch.stack(ys), ids


def _target_kind(stage_tag: str) -> str:
    return "low" if stage_tag == "pretrain" else "bright"


def _load_split_pairs(manifest: DatasetManifest, split: str, target: str):
    ids = manifest.ids(split)
    pairs = []
    for image_id in ids:
        t = manifest.load_triplet(image_id)
        tgt = t.uncompressed_low if target == "low" else t.bright
        pairs.append((image_id, _to_chw(t.compressed_low), _to_chw(tgt)))
    return pairs


def _epoch_val_metrics(model, val_pairs, eps: float) -> dict:
    model.eval()
    ps, ss, ch = [], [], []
    for _, inp, tgt in val_pairs:
        pred = np.clip(run_model_on_image(model, _to_hwc(inp)), 0.0, 1.0)
        ref = _to_hwc(tgt)
        ps.append(psnr(pred, ref))
        ss.append(ssim(pred, ref))
        ch.append(charbonnier(pred, ref, eps))
    model.train()
    return {
        "val_psnr": sum(ps) / len(ps),
        "val_ssim": sum(ss) / len(ss),
        "val_charbonnier": sum(ch) / len(ch),
    }


def _run_stage(model, train_pairs, val_pairs, cfg: TrainConfig):
    sampler = _PatchSampler(train_pairs, cfg.patch_size, np.random.default_rng(cfg.seed))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    steps_per_epoch = max(1, math.ceil(len(train_pairs) / cfg.batch_size))
    total_steps = steps_per_epoch * cfg.epochs
    history = []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        losses = []
        lr = cfg.learning_rate
        for _ in range(steps_per_epoch):
            if cfg.lr_schedule == "cosine":
                lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            for group in opt.param_groups:
                group["lr"] = lr
            x, y, batch_ids = sampler.sample(cfg.batch_size)
            opt.zero_grad()
            loss = charbonnier_loss(model(x), y, cfg.eps_charbonnier)
            if not bool(torch.isfinite(loss)):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}; batch: {batch_ids}"
                )
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            step += 1
        row = {"epoch": epoch, "train_loss": sum(losses) / len(losses), "lr": lr}
        if val_pairs:
            row.update(_epoch_val_metrics(model, val_pairs, cfg.eps_charbonnier))
        history.append(row)
    model.eval()
    return history, opt


def _finish_checkpoint(model, stage_tag: str, cfg: TrainConfig,
                       model_config: ModelConfig, history, opt) -> Checkpoint:
    return Checkpoint(
        model_config=model_config,
        stage=stage_tag,
        state_dict=model.state_dict(),
        seed=cfg.seed,
        param_count=sum(p.numel() for p in model.parameters() if p.requires_grad),
        history=history,
        optimizer_state=opt.state_dict(),
        train_config=cfg.to_dict(),
    )


def pretrain(manifest: DatasetManifest, model_config: ModelConfig,
             train_config: TrainConfig) -> Checkpoint:
    """Stage one: learn to restore compressed low-light images.

    Inputs are the compressed images, targets their uncompressed
    versions, both from the train split. Returns a checkpoint tagged
    ``pretrain``.
    """
    if train_config.stage != "pretrain":
        raise InvalidConfigError(
            f"pretrain requires stage='pretrain', got {train_config.stage!r}"
        )
    effective = replace(model_config, use_bgsa=train_config.use_bgsa)
    train_config.validate(effective)
    train_pairs = _load_split_pairs(manifest, "train", "low")
    if not train_pairs:
        raise InvalidConfigError("manifest has no train entries")
    val_pairs = _load_split_pairs(manifest, "val", "low")
    model = build_model(effective, seed=train_config.seed)
    history, opt = _run_stage(model, train_pairs, val_pairs, train_config)
    return _finish_checkpoint(model, "pretrain", train_config, effective, history, opt)


def finetune(manifest: DatasetManifest, init: Checkpoint | None,
             model_config: ModelConfig, train_config: TrainConfig) -> Checkpoint:
    """Stage two: fine-tune toward the bright references.

    When ``init`` is given (and ``use_pretrain`` is on) every weight is
    loaded from it and the result is tagged ``finetune``; otherwise
    training starts from random init and is tagged ``scratch``, which is
    the baseline ablation.
    """
    if train_config.stage != "finetune":
        raise InvalidConfigError(
            f"finetune requires stage='finetune', got {train_config.stage!r}"
        )
    effective = replace(model_config, use_bgsa=train_config.use_bgsa)
    train_config.validate(effective)
    use_init = init is not None and train_config.use_pretrain
    if use_init and init.model_config != effective:
        raise InvalidConfigError(
            "init checkpoint's model config does not match: "
            f"{init.model_config} vs {effective}"
        )
    train_pairs = _load_split_pairs(manifest, "train", "bright")
    if not train_pairs:
        raise InvalidConfigError("manifest has no train entries")
    val_pairs = _load_split_pairs(manifest, "val", "bright")
    model = build_model(effective, seed=train_config.seed)
    if use_init:
        model.load_state_dict(init.state_dict)
    history, opt = _run_stage(model, train_pairs, val_pairs, train_config)
    tag = "finetune" if use_init else "scratch"
    return _finish_checkpoint(model, tag, train_config, effective, history, opt)


@dataclass
class EvalReport:
    """Per-image metrics plus their arithmetic means over the split."""

    target: str
    eps: float
    records: list
    mean_psnr: float
    mean_ssim: float
    mean_charbonnier: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "psnr", "ssim", "charbonnier"])
            for image_id, rec in self.records:
                writer.writerow(
                    [image_id, f"{rec.psnr:.12g}", f"{rec.ssim:.12g}",
                     f"{rec.charbonnier:.12g}"]
                )
            writer.writerow(
                ["mean", f"{self.mean_psnr:.12g}", f"{self.mean_ssim:.12g}",
                 f"{self.mean_charbonnier:.12g}"]
            )


def evaluate_pairs(named_pairs, model, eps: float = 1e-3,
                   target: str = "custom") -> EvalReport:
    """Score a model on (id, input, target) image triples.

    Full-image inference, predictions clamped to [0, 1] before metrics.
    ``model`` may be any callable on (B, C, H, W) tensors, so identity
    stubs work for metric sanity checks.
    """
    if not named_pairs:
        raise InvalidInputError("no pairs to evaluate")
    records = []
    for image_id, inp, ref in named_pairs:
        pred = np.clip(run_model_on_image(model, np.asarray(inp, dtype=np.float64)),
                       0.0, 1.0)
        ref = np.asarray(ref, dtype=np.float64)
        if pred.shape != ref.shape:
            raise InvalidInputError(
                f"{image_id}: prediction shape {pred.shape} != target {ref.shape}"
            )
        records.append(
            (image_id,
             MetricRecord(psnr=psnr(pred, ref), ssim=ssim(pred, ref),
                          charbonnier=charbonnier(pred, ref, eps)))
        )
    n = len(records)
    return EvalReport(
        target=target,
        eps=eps,
        records=records,
        mean_psnr=sum(r.psnr for _, r in records) / n,
        mean_ssim=sum(r.ssim for _, r in records) / n,
        mean_charbonnier=sum(r.charbonnier for _, r in records) / n,
    )


def evaluate(manifest: DatasetManifest, split: str, checkpoint,
             target: str = "auto", eps: float = 1e-3) -> EvalReport:
    """Evaluate a checkpoint (or ready model) on one split of a dataset.

    ``target`` "auto" scores pretrain-stage checkpoints against the
    uncompressed low images and everything else against the bright
    references; "low"/"bright" force the choice.
    """
    if target not in ("auto", "low", "bright"):
        raise InvalidConfigError(f"target must be auto, low, or bright, got {target!r}")
    if isinstance(checkpoint, Checkpoint):
        model = checkpoint.build_model()
        stage = checkpoint.stage
    else:
        model = checkpoint
        stage = "finetune"
    if target == "auto":
        target = _target_kind(stage)
    ids = manifest.ids(split)
    if not ids:
        raise InvalidInputError(f"split {split!r} is empty")
    named = []
    for image_id in ids:
        t = manifest.load_triplet(image_id)
        ref = t.uncompressed_low if target == "low" else t.bright
        named.append((image_id, t.compressed_low, ref))
    return evaluate_pairs(named, model, eps=eps, target=target)


@dataclass
class GradCheckReport:
    """Outcome of the finite-difference gradient comparison."""

    n_checked: int
    max_rel_error: float
    tolerance: float
    passed: bool
    worst_param: str = ""


GRAD_CHECK_PARAM_LIMIT = 50_000


def grad_check(target, n_params: int = 25, tolerance: float = 1e-3,
               step: float = 1e-5, seed: int = 0,
               input_shape: tuple | None = None) -> GradCheckReport:
    """Compare backprop gradients against central finite differences.

    ``target`` is a ModelConfig (a fresh seeded network is built; at
    most 50k parameters) or any nn.Module (checked as-is on a copy).
    Everything runs in float64; the loss is the Charbonnier objective
    against a random target. Relative error uses a 1e-6 denominator
    floor so near-zero gradients (e.g. masked attention paths) compare
    absolutely. Failure is reported, not raised.
    """
    if isinstance(target, ModelConfig):
        from .model import param_count

        n_total = param_count(target)
        if n_total > GRAD_CHECK_PARAM_LIMIT:
            raise InvalidConfigError(
                f"grad_check config has {n_total} params "
                f"(limit {GRAD_CHECK_PARAM_LIMIT})"
            )
        model = build_model(target, seed=seed)
        if input_shape is None:
            input_shape = (1, target.input_channels, 8, 8)
    elif isinstance(target, nn.Module):
        model = copy.deepcopy(target)
        if input_shape is None:
            raise InvalidConfigError("input_shape is required for module targets")
        n_total = sum(p.numel() for p in model.parameters() if p.requires_grad)
        if n_total > GRAD_CHECK_PARAM_LIMIT:
            raise InvalidConfigError(
                f"grad_check module has {n_total} params "
                f"(limit {GRAD_CHECK_PARAM_LIMIT})"
            )
    else:
        raise InvalidConfigError(f"cannot grad-check {type(target).__name__}")
    if n_params < 1:
        raise InvalidConfigError(f"n_params must be >= 1, got {n_params}")

    model = model.double()
    model.eval()
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.random(input_shape))
    with torch.no_grad():
        out_shape = tuple(model(x).shape)
    ref = torch.from_numpy(rng.random(out_shape))

    params = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    sizes = [p.numel() for _, p in params]
    total = sum(sizes)
    n_check = min(n_params, total)
    picks = np.sort(rng.choice(total, size=n_check, replace=False))

    model.zero_grad()
    loss = charbonnier_loss(model(x), ref)
    loss.backward()

    def locate(flat_idx: int):
        for (name, p), size in zip(params, sizes):
            if flat_idx < size:
                return name, p, flat_idx
            flat_idx -= size
        raise InternalConsistencyError(f"flat index {flat_idx} out of range")

    max_err = -1.0
    worst = ""
    for flat_idx in picks:
        name, p, off = locate(int(flat_idx))
        analytic = float(p.grad.reshape(-1)[off])
        with torch.no_grad():
            flat = p.reshape(-1)
            orig = float(flat[off])
            flat[off] = orig + step
            loss_p = float(charbonnier_loss(model(x), ref))
            flat[off] = orig - step
            loss_m = float(charbonnier_loss(model(x), ref))
            flat[off] = orig
        fd = (loss_p - loss_m) / (2.0 * step)
        err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
        if err > max_err:
            max_err = err
            worst = f"{name}[{off}]"
    return GradCheckReport(
        n_checked=n_check,
        max_rel_error=max_err,
        tolerance=tolerance,
        passed=max_err < tolerance,
        worst_param=worst,
    )


def write_history_csv(history, path) -> None:
    """Emit per-epoch training history with a stable column set."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            out = {}
            for col in HISTORY_COLUMNS:
                val = row.get(col, "")
                if isinstance(val, float):
                    val = f"{val:.12g}"
                out[col] = val
            writer.writerow(out)

"""Accuracy-triggered 4-stage training curriculum for the codec.

Stage 0 repeats one fixed image batch with fresh random payloads; stage 1
(trigger: batch bit accuracy 0.90) switches to random batches; stage 2 (0.95)
enables noise simulation; stage 3 (0.98) enables the adversarial loss and
ramps the quality trade-off alpha linearly from its initial value to
alpha_max over ``ramp_iters`` iterations.  The stage index never decreases.

One controller owns the model; all randomness (batches, payloads, noise)
derives from per-purpose generators seeded off the master seed, so a fixed
seed reproduces the exact batch/payload/noise sequence.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml
from PIL import Image

from . import codec as codec_mod
from .codec import CodecConfig, CodecModel, load_archive, save_codec
from .core import ImageArray, psnr, ssim
from .losses import LossWeights, PerceptualLoss, loss_gan_gp, loss_total
from .noise import NoiseSpec, perturb_tensor

LOSS_CSV_HEADER = ["iter", "stage", "alpha", "l_yuv", "l_lpips", "l_ffl",
                   "l_gan", "l_recovery", "l_total", "batch_acc", "lr"]
VAL_CSV_HEADER = ["epoch", "iter", "stage", "alpha", "psnr_db", "ssim",
                  "acc_clean", "acc_noised"]
STAGE_CSV_HEADER = ["stage", "iteration", "epoch", "batch_acc"]

DEFAULT_THRESHOLDS = (0.90, 0.95, 0.98)
ALPHA_INIT = 0.05


class NumericalError(RuntimeError):
    """Raised when training hits a non-finite loss; carries the breakdown."""

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown or {}


@dataclass
class TrainState:
    """Curriculum position: stage, iteration, and the current alpha."""

    stage: int = 0
    iteration: int = 0
    alpha: float = ALPHA_INIT
    thresholds: tuple = DEFAULT_THRESHOLDS
    ramp_iters: int = 10000
    epoch: int = 0
    best_val_acc: float = 0.0
    streak: int = 0
    stage3_start_iter: int = -1

    def __post_init__(self):
        if not 0 <= self.stage <= 3:
            raise ValueError(f"stage must be 0..3, got {self.stage}")


def advance_stage(state: TrainState, batch_bit_acc: float, patience: int = 1) -> TrainState:
    """Advance the curriculum when the batch bit accuracy crosses the next trigger.

    ``patience`` consecutive qualifying batches are required before a
    transition fires (1 = immediate).  Stage 3 is terminal.  Returns a new
    state; never mutates the input.
    """
    if state.stage >= 3:
        return dataclasses.replace(state)
    threshold = state.thresholds[state.stage]
    if batch_bit_acc >= threshold:
        streak = state.streak + 1
        if streak >= patience:
            new_stage = state.stage + 1
            return dataclasses.replace(
                state, stage=new_stage, streak=0,
                stage3_start_iter=state.iteration if new_stage == 3 else state.stage3_start_iter)
        return dataclasses.replace(state, streak=streak)
    return dataclasses.replace(state, streak=0)


def alpha_schedule(state: TrainState, alpha_max: float) -> float:
    """Alpha is constant before stage 3, then ramps linearly to alpha_max."""
    if state.stage < 3:
        return ALPHA_INIT
    done = max(0, state.iteration - state.stage3_start_iter)
    frac = min(1.0, done / max(1, state.ramp_iters))
    return ALPHA_INIT + (alpha_max - ALPHA_INIT) * frac


@dataclass
class TrainConfig:
    """Everything needed to reproduce a codec training run."""

    dataset_dir: str = ""
    out_dir: str = "runs/codec"
    epochs: int = 150
    batch_size: int = 32
    base_lr: float = 4e-6            # per image; effective lr = base_lr * batch_size
    lr_schedule: str = "cosine"
    alpha_max: float = 20.0
    ramp_iters: int = 10000
    noise_severity: str = "high"
    thresholds: tuple = DEFAULT_THRESHOLDS
    trigger_patience: int = 3
    image_size: int = 256
    bit_length: int = 64
    internal_dim: int = 64
    backbone_depth: int = 4
    res_blocks_per_level: int = 2
    channel_growth_cap: int = 4
    post_layers: int = 3
    extractor_family: str = "resnet-large"
    single_projection_post: bool = False
    beta_yuv: float = 1.5
    beta_lpips: float = 1.0
    beta_ffl: float = 1.5
    beta_gan: float = 1.0
    gp_lambda: float = 10.0
    gp_mode: str = "encoded"
    weight_decay: float = 0.0
    adam_betas: tuple = (0.5, 0.9)
    val_fraction: float = 0.01
    val_count: int | None = None
    max_train_images: int | None = None
    seed: int = 0
    toy_preset: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.noise_severity not in ("off", "low", "medium", "high"):
            raise ValueError(f"unknown noise severity {self.noise_severity!r}")
        self.thresholds = tuple(self.thresholds)
        self.adam_betas = tuple(self.adam_betas)

    @classmethod
    def toy(cls, dataset_dir: str, out_dir: str, **overrides) -> "TrainConfig":
        """Desk-scale acceptance configuration: 64x64, 16 bits, 500/50 images."""
        base = dict(
            dataset_dir=dataset_dir, out_dir=out_dir,
            epochs=110, batch_size=16, base_lr=2.5e-5,
            alpha_max=15.0, ramp_iters=1200, noise_severity="high",
            image_size=64, bit_length=16, internal_dim=32, backbone_depth=2,
            res_blocks_per_level=1, channel_growth_cap=2,
            extractor_family="resnet-small",
            val_count=50, max_train_images=500, toy_preset=True,
        )
        base.update(overrides)
        return cls(**base)

    def codec_config(self) -> CodecConfig:
        return CodecConfig(
            image_size=self.image_size, bit_length=self.bit_length,
            internal_dim=self.internal_dim, backbone_depth=self.backbone_depth,
            post_layers=self.post_layers, extractor_family=self.extractor_family,
            res_blocks_per_level=self.res_blocks_per_level,
            channel_growth_cap=self.channel_growth_cap)

    def loss_weights(self, alpha: float = ALPHA_INIT) -> LossWeights:
        return LossWeights(alpha=alpha, alpha_max=self.alpha_max,
                           beta_yuv=self.beta_yuv, beta_lpips=self.beta_lpips,
                           beta_ffl=self.beta_ffl, beta_gan=self.beta_gan,
                           gp_lambda=self.gp_lambda)

    def to_yaml(self, path) -> None:
        d = dataclasses.asdict(self)
        d["thresholds"] = list(self.thresholds)
        d["adam_betas"] = list(self.adam_betas)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(yaml.safe_dump(d, sort_keys=False))

    @classmethod
    def from_yaml(cls, path) -> "TrainConfig":
        d = yaml.safe_load(Path(path).read_text())
        return cls(**d)


def load_image_folder(dataset_dir, image_size: int,
                      limit: int | None = None) -> torch.Tensor:
    """Load every PNG/JPEG under a folder as a (N, 3, S, S) unit-signed tensor.

    Files are taken in sorted order so a fixed folder gives a fixed tensor.
    """
    dataset_dir = Path(dataset_dir)
    paths = sorted(p for p in dataset_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if limit is not None:
        paths = paths[:limit]
    if not paths:
        raise FileNotFoundError(f"no images found in {dataset_dir}")
    out = np.empty((len(paths), 3, image_size, image_size), dtype=np.float32)
    for i, p in enumerate(paths):
        with Image.open(p) as im:
            im = im.convert("RGB")
            if im.size != (image_size, image_size):
                im = im.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 127.5 - 1.0
        out[i] = arr.transpose(2, 0, 1)
    return torch.from_numpy(out)


@dataclass
class TrainResult:
    best_checkpoint: str
    last_checkpoint: str
    loss_csv: str
    val_csv: str
    stage_csv: str
    final_val: dict
    stage_iterations: dict
    wall_seconds: float


class Trainer:
    """Owns the codec model and runs the staged curriculum."""

    def __init__(self, config: TrainConfig, model: CodecModel | None = None,
                 images: torch.Tensor | None = None):
        self.cfg = config
        torch.manual_seed(config.seed)
        self.model = model if model is not None else CodecModel(config.codec_config())
        if images is None:
            limit = None
            if config.max_train_images is not None:
                n_val = config.val_count or 0
                limit = config.max_train_images + n_val
            images = load_image_folder(config.dataset_dir, config.image_size, limit)
        n_val = config.val_count
        if n_val is None:
            n_val = max(1, int(round(len(images) * config.val_fraction)))
        if len(images) <= n_val:
            raise ValueError(f"dataset has {len(images)} images, need more than {n_val}")
        self.val_images = images[:n_val]
        self.train_images = images[n_val:]
        if config.max_train_images is not None:
            self.train_images = self.train_images[:config.max_train_images]
        if len(self.train_images) < config.batch_size:
            raise ValueError(
                f"need at least batch_size={config.batch_size} training images, "
                f"got {len(self.train_images)}")

        self.noise_spec = NoiseSpec.from_severity(config.noise_severity)
        self.perceptual = PerceptualLoss(seed=0)
        eff_lr = config.base_lr * config.batch_size
        self.eff_lr = eff_lr
        self.opt = torch.optim.AdamW(
            list(self.model.embedder.parameters()) + list(self.model.extractor.parameters()),
            lr=eff_lr, betas=config.adam_betas, weight_decay=config.weight_decay)
        self.critic_opt = torch.optim.AdamW(
            self.model.critic.parameters(), lr=eff_lr, betas=config.adam_betas,
            weight_decay=config.weight_decay)

        self.iters_per_epoch = len(self.train_images) // config.batch_size
        self.total_iters = self.iters_per_epoch * config.epochs
        self.state = TrainState(thresholds=config.thresholds, ramp_iters=config.ramp_iters)

        self.g_data = torch.Generator().manual_seed(config.seed * 7919 + 1)
        self.g_payload = torch.Generator().manual_seed(config.seed * 7919 + 2)
        self.g_noise = torch.Generator().manual_seed(config.seed * 7919 + 3)
        self.fixed_batch_idx = torch.randperm(
            len(self.train_images), generator=self.g_data)[:config.batch_size].clone()
        self.stage_rows = [(0, 0, 0, 0.0)]

    # -- schedule ----------------------------------------------------------

    def lr_at(self, iteration: int) -> float:
        if self.cfg.lr_schedule == "constant":
            return self.eff_lr
        t = min(iteration, self.total_iters) / max(1, self.total_iters)
        return self.eff_lr * 0.5 * (1.0 + math.cos(math.pi * t))

    def _set_lr(self, lr: float) -> None:
        for group in self.opt.param_groups:
            group["lr"] = lr
        for group in self.critic_opt.param_groups:
            group["lr"] = lr

    # -- single optimisation step ------------------------------------------

    def train_step(self, batch: torch.Tensor):
        """One forward/backward pass with stage-appropriate gating.

        Returns (batch_bit_acc, breakdown).  Aborts with NumericalError and
        a per-term dump when the loss goes non-finite.
        """
        cfg = self.cfg
        state = self.state
        b = batch.shape[0]
        w = torch.randint(0, 2, (b, cfg.bit_length), generator=self.g_payload).float()

        self.model.train()
        y = self.model.encode(batch, w)

        use_gan = state.stage >= 3
        if use_gan:
            self.critic_opt.zero_grad()
            _, critic_term = loss_gan_gp(batch, y.detach(), self.model.critic,
                                         gp_lambda=cfg.gp_lambda, gp_mode=cfg.gp_mode)
            critic_term.backward()
            self.critic_opt.step()

        if state.stage >= 2 and self.noise_spec.severity != "off":
            seeds = torch.randint(0, 2 ** 31 - 1, (b,), generator=self.g_noise)
            y_noised = torch.stack([
                perturb_tensor(y[j], self.noise_spec, int(seeds[j].item()))
                for j in range(b)])
        else:
            y_noised = y

        w_hat = self.model.decode_probs(y_noised)
        weights = self.cfg.loss_weights(alpha=state.alpha)
        total, breakdown = loss_total(batch, y, w, w_hat, weights,
                                      critic=self.model.critic if use_gan else None,
                                      perceptual=self.perceptual)
        if not math.isfinite(breakdown["l_total"]):
            raise NumericalError(
                f"non-finite loss at iteration {state.iteration}: {breakdown}",
                breakdown=breakdown)
        self.opt.zero_grad()
        total.backward()
        self.opt.step()

        batch_acc = float(((w_hat.detach() > 0.5).float() == w).float().mean())
        breakdown["batch_acc"] = batch_acc
        return batch_acc, breakdown

    # -- validation ----------------------------------------------------------

    def validate(self):
        """Clean PSNR/SSIM/accuracy plus noised accuracy on the held-out split."""
        cfg = self.cfg
        self.model.eval()
        g = torch.Generator().manual_seed(cfg.seed * 7919 + 101 + self.state.epoch)
        psnrs, ssims, acc_c, acc_n = [], [], [], []
        with torch.no_grad():
            for start in range(0, len(self.val_images), cfg.batch_size):
                xb = self.val_images[start:start + cfg.batch_size]
                wb = torch.randint(0, 2, (xb.shape[0], cfg.bit_length), generator=g).float()
                yb = self.model.encode(xb, wb)
                pc = self.model.decode_probs(yb)
                acc_c.append(((pc > 0.5).float() == wb).float().mean(dim=1))
                seeds = torch.randint(0, 2 ** 31 - 1, (xb.shape[0],), generator=g)
                spec = self.noise_spec if self.noise_spec.severity != "off" \
                    else NoiseSpec.from_severity("medium")
                yn = torch.stack([perturb_tensor(yb[j], spec, int(seeds[j].item()))
                                  for j in range(xb.shape[0])])
                pn = self.model.decode_probs(yn)
                acc_n.append(((pn > 0.5).float() == wb).float().mean(dim=1))
                for j in range(xb.shape[0]):
                    a = ImageArray(xb[j].numpy().transpose(1, 2, 0).astype(np.float64).clip(-1, 1),
                                   "unit_signed")
                    bimg = ImageArray(yb[j].numpy().transpose(1, 2, 0).astype(np.float64).clip(-1, 1),
                                      "unit_signed")
                    p = psnr(a, bimg)
                    psnrs.append(min(p, 100.0))
                    ssims.append(ssim(a, bimg))
        return {
            "psnr_db": float(np.mean(psnrs)),
            "ssim": float(np.mean(ssims)),
            "acc_clean": float(torch.cat(acc_c).mean()),
            "acc_noised": float(torch.cat(acc_n).mean()),
        }

    # -- persistence ---------------------------------------------------------

    def _training_blob(self) -> bytes:
        buf = io.BytesIO()
        torch.save({
            "state": dataclasses.asdict(self.state),
            "opt": self.opt.state_dict(),
            "critic_opt": self.critic_opt.state_dict(),
            "g_data": self.g_data.get_state(),
            "g_payload": self.g_payload.get_state(),
            "g_noise": self.g_noise.get_state(),
            "fixed_batch_idx": self.fixed_batch_idx,
            "stage_rows": self.stage_rows,
            "config": dataclasses.asdict(self.cfg),
        }, buf)
        return buf.getvalue()

    def save(self, path) -> None:
        save_codec(path, self.model, training_blob=self._training_blob())

    def restore(self, path) -> None:
        manifest, state_dict, blob = load_archive(path)
        if blob is None:
            raise ValueError(f"{path} has no training section; cannot resume")
        self.model.load_state_dict(state_dict)
        data = torch.load(io.BytesIO(blob), weights_only=False)
        st = data["state"]
        st["thresholds"] = tuple(st["thresholds"])
        self.state = TrainState(**st)
        self.opt.load_state_dict(data["opt"])
        self.critic_opt.load_state_dict(data["critic_opt"])
        self.g_data.set_state(data["g_data"])
        self.g_payload.set_state(data["g_payload"])
        self.g_noise.set_state(data["g_noise"])
        self.fixed_batch_idx = data["fixed_batch_idx"]
        self.stage_rows = data["stage_rows"]

    # -- main loop -----------------------------------------------------------

    def run(self, log_every: int = 1) -> TrainResult:
        cfg = self.cfg
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.to_yaml(out_dir / "config.yaml")
        loss_csv = out_dir / "loss.csv"
        val_csv = out_dir / "val.csv"
        stage_csv = out_dir / "stages.csv"
        t0 = time.time()

        best_score = -math.inf
        best_path = out_dir / "best.ckpt"
        last_path = out_dir / "last.ckpt"

        with open(loss_csv, "w", newline="") as lf, open(val_csv, "w", newline="") as vf:
            lw = csv.writer(lf)
            lw.writerow(LOSS_CSV_HEADER)
            vw = csv.writer(vf)
            vw.writerow(VAL_CSV_HEADER)

            start_epoch = self.state.epoch
            for epoch in range(start_epoch, cfg.epochs):
                self.state.epoch = epoch
                perm = torch.randperm(len(self.train_images), generator=self.g_data)
                for it in range(self.iters_per_epoch):
                    if self.state.stage == 0:
                        idx = self.fixed_batch_idx
                    else:
                        idx = perm[it * cfg.batch_size:(it + 1) * cfg.batch_size]
                    batch = self.train_images[idx]

                    self._set_lr(self.lr_at(self.state.iteration))
                    self.state.alpha = alpha_schedule(self.state, cfg.alpha_max)
                    try:
                        acc, breakdown = self.train_step(batch)
                    except NumericalError as err:
                        (out_dir / "diagnostic.json").write_text(
                            json.dumps(err.breakdown, indent=2))
                        raise

                    if self.state.iteration % log_every == 0:
                        lw.writerow([
                            self.state.iteration, self.state.stage,
                            f"{self.state.alpha:.6f}",
                            f"{breakdown['l_yuv']:.6g}", f"{breakdown['l_lpips']:.6g}",
                            f"{breakdown['l_ffl']:.6g}", f"{breakdown['l_gan']:.6g}",
                            f"{breakdown['l_recovery']:.6g}", f"{breakdown['l_total']:.6g}",
                            f"{acc:.4f}", f"{self.lr_at(self.state.iteration):.3e}"])

                    prev_stage = self.state.stage
                    new_state = advance_stage(self.state, acc, patience=cfg.trigger_patience)
                    new_state.epoch = self.state.epoch
                    self.state = new_state
                    if self.state.stage != prev_stage:
                        self.stage_rows.append(
                            (self.state.stage, self.state.iteration, epoch, acc))
                        self.save(out_dir / f"stage{self.state.stage}.ckpt")
                    self.state.iteration += 1

                metrics = self.validate()
                vw.writerow([epoch, self.state.iteration, self.state.stage,
                             f"{self.state.alpha:.6f}", f"{metrics['psnr_db']:.4f}",
                             f"{metrics['ssim']:.6f}", f"{metrics['acc_clean']:.6f}",
                             f"{metrics['acc_noised']:.6f}"])
                vf.flush()
                lf.flush()

                # accuracy first, PSNR as tiebreak once accuracy saturates
                score = round(metrics["acc_clean"], 3) * 1000.0 + metrics["psnr_db"]
                self.state.best_val_acc = max(self.state.best_val_acc, metrics["acc_clean"])
                self.save(last_path)
                if score > best_score:
                    best_score = score
                    self.save(best_path)

        with open(stage_csv, "w", newline="") as sf:
            sw = csv.writer(sf)
            sw.writerow(STAGE_CSV_HEADER)
            for row in self.stage_rows:
                sw.writerow(row)

        final_val = self.validate()
        return TrainResult(
            best_checkpoint=str(best_path), last_checkpoint=str(last_path),
            loss_csv=str(loss_csv), val_csv=str(val_csv), stage_csv=str(stage_csv),
            final_val=final_val,
            stage_iterations={s: i for s, i, _, _ in self.stage_rows},
            wall_seconds=time.time() - t0)


def train(config: TrainConfig, model: CodecModel | None = None,
          images: torch.Tensor | None = None, resume_from=None) -> TrainResult:
    """Run the full curriculum and return checkpoint/log paths."""
    trainer = Trainer(config, model=model, images=images)
    if resume_from is not None:
        trainer.restore(resume_from)
    return trainer.run()

"""Training objectives: recovery cross-entropy, spatial/perceptual/spectral
quality terms, and the adversarial critic loss with gradient penalty.

The total objective is ``alpha * quality + recovery`` where the quality
composite combines a YUV-space MSE, a perceptual feature distance, a focal
frequency loss, and the adversarial generator term.  All terms accept
unit-signed image tensors of shape (3, H, W) or (B, 3, H, W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

BCE_EPS = 1e-7

# RGB -> YUV (BT.601 analog form); applied to unit-signed values.
_YUV = torch.tensor([
    [0.299, 0.587, 0.114],
    [-0.14713, -0.28886, 0.436],
    [0.615, -0.51499, -0.10001],
], dtype=torch.float64)


@dataclass
class LossWeights:
    """Trade-off and per-term weights for the composite objective."""

    alpha: float = 0.05
    alpha_max: float = 20.0
    beta_yuv: float = 1.5
    beta_lpips: float = 1.0
    beta_ffl: float = 1.5
    beta_gan: float = 1.0
    gp_lambda: float = 10.0

    def __post_init__(self):
        for name in ("alpha", "alpha_max", "beta_yuv", "beta_lpips", "beta_ffl",
                     "beta_gan", "gp_lambda"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.alpha > self.alpha_max:
            raise ValueError(f"alpha {self.alpha} exceeds alpha_max {self.alpha_max}")


def _batched(t: torch.Tensor) -> torch.Tensor:
    if t.dim() == 3:
        return t.unsqueeze(0)
    if t.dim() == 4:
        return t
    raise ValueError(f"expected (3,H,W) or (B,3,H,W), got {tuple(t.shape)}")


def loss_recovery(w: torch.Tensor, w_hat: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy between payload bits and predicted probabilities.

    Probabilities are clamped to [eps, 1-eps] with eps=1e-7 so exact 0/1
    predictions stay finite.
    """
    if w.shape != w_hat.shape:
        raise ValueError(f"payload shape mismatch: {tuple(w.shape)} vs {tuple(w_hat.shape)}")
    p = w_hat.clamp(BCE_EPS, 1.0 - BCE_EPS)
    w = w.to(p.dtype)
    return -(w * torch.log(p) + (1.0 - w) * torch.log(1.0 - p)).mean()


def loss_yuv(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """MSE after a fixed linear RGB->YUV conversion."""
    x, y = _batched(x), _batched(y)
    m = _YUV.to(x.dtype)
    xf = torch.einsum("ij,bjhw->bihw", m, x)
    yf = torch.einsum("ij,bjhw->bihw", m, y)
    return ((xf - yf) ** 2).mean()


def loss_ffl(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Focal frequency loss: spectrum-weighted squared Fourier difference.

    The per-frequency weight is the difference magnitude normalized to a max
    of 1 per image and channel, detached from the gradient so it acts as a
    constant focusing mask.
    """
    x, y = _batched(x), _batched(y)
    fx = torch.fft.fft2(x, norm="ortho")
    fy = torch.fft.fft2(y, norm="ortho")
    d = fy - fx
    mag2 = d.real ** 2 + d.imag ** 2
    w = torch.sqrt(mag2.detach() + 1e-24)
    peak = w.amax(dim=(-1, -2), keepdim=True).clamp(min=1e-12)
    return ((w / peak) * mag2).mean()


class PerceptualLoss(nn.Module):
    """Feature-space distance from a fixed, randomly initialized conv pyramid.

    A frozen surrogate for a pretrained perceptual network, suitable for
    small-resolution training: it is zero at identity, symmetric, and grows
    monotonically with perturbation strength.
    """

    MIN_SIZE = 8

    def __init__(self, seed: int = 0, channels=(8, 16, 32)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        c_in = 3
        for c_out in channels:
            conv = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, bias=False)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / math.sqrt(c_in * 9)))
            layers.append(conv)
            c_in = c_out
        self.stages = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.stages:
            w = conv.weight.to(h.dtype)
            h = nn.functional.conv2d(h, w, stride=2, padding=1)
            h = nn.functional.leaky_relu(h, 0.2)
            feats.append(h)
        return feats

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        x, y = _batched(x), _batched(y)
        if min(x.shape[-2:]) < self.MIN_SIZE:
            raise ValueError(f"image smaller than the perceptual net minimum {self.MIN_SIZE}")
        fx = self.features(x)
        fy = self.features(y)
        total = x.new_zeros(())
        for a, b in zip(fx, fy):
            total = total + ((a - b) ** 2).mean()
        return total / len(fx)


_default_perceptual: PerceptualLoss | None = None


def default_perceptual() -> PerceptualLoss:
    global _default_perceptual
    if _default_perceptual is None:
        _default_perceptual = PerceptualLoss(seed=0)
    return _default_perceptual


def loss_perceptual(x: torch.Tensor, y: torch.Tensor,
                    net: PerceptualLoss | None = None) -> torch.Tensor:
    return (net or default_perceptual())(x, y)


def loss_gan_gp(x: torch.Tensor, y: torch.Tensor, critic,
                gp_lambda: float = 10.0, gp_mode: str = "encoded"):
    """Adversarial losses: (generator_term, critic_term).

    critic_term = E[D(y)] - E[D(x)] + gp_lambda * E[(||grad D||_2 - 1)^2],
    evaluated on detached encoded samples so the critic update cannot reach
    the embedder.  With gp_mode="encoded" the penalty gradient is taken at the
    encoded samples; "interpolate" uses random real/fake mixes instead.
    generator_term = -E[D(y)], differentiable through y.
    """
    if gp_mode not in ("encoded", "interpolate"):
        raise ValueError(f"unknown gp_mode {gp_mode!r}")
    x, y = _batched(x), _batched(y)
    gen_term = -critic(y).mean()

    y_d = y.detach()
    x_d = x.detach()
    if gp_mode == "encoded":
        probe = y_d.clone().requires_grad_(True)
    else:
        mix = torch.rand(y_d.shape[0], 1, 1, 1, dtype=y_d.dtype)
        probe = (mix * x_d + (1.0 - mix) * y_d).requires_grad_(True)
    score = critic(probe)
    if score.grad_fn is None:
        raise ValueError("critic output is detached from its input; cannot train with it")
    grad = torch.autograd.grad(score.sum(), probe, create_graph=True, allow_unused=True)[0]
    if grad is None:
        # constant critic: zero input-gradient everywhere
        grad = torch.zeros_like(probe)
    norms = grad.flatten(1).norm(dim=1)
    gp = ((norms - 1.0) ** 2).mean()
    critic_term = critic(y_d).mean() - critic(x_d).mean() + gp_lambda * gp
    return gen_term, critic_term


def loss_total(x: torch.Tensor, y: torch.Tensor, w: torch.Tensor,
               w_hat: torch.Tensor, weights: LossWeights, critic=None,
               perceptual: PerceptualLoss | None = None):
    """Composite objective ``alpha * quality + recovery`` with a per-term breakdown.

    The adversarial contribution is the generator term; it enters only when a
    critic is supplied (training stages before the adversarial phase pass
    None).  Returns (total, breakdown dict).
    """
    rec = loss_recovery(w, w_hat)
    l_yuv = loss_yuv(x, y)
    l_lpips = loss_perceptual(x, y, perceptual)
    l_ffl = loss_ffl(x, y)
    if critic is not None:
        l_gan = -critic(_batched(y)).mean()
    else:
        l_gan = x.new_zeros(())
    quality = (weights.beta_yuv * l_yuv + weights.beta_lpips * l_lpips
               + weights.beta_ffl * l_ffl + weights.beta_gan * l_gan)
    total = weights.alpha * quality + rec
    breakdown = {
        "l_yuv": float(l_yuv.detach()), "l_lpips": float(l_lpips.detach()),
        "l_ffl": float(l_ffl.detach()), "l_gan": float(l_gan.detach()),
        "l_recovery": float(rec.detach()), "l_quality": float(quality.detach()),
        "l_total": float(total.detach()), "alpha": weights.alpha,
    }
    return total, breakdown

"""Embedder / extractor / critic networks and the codec checkpoint format.

The embedder fuses the payload with the cover early (payload bits replicated
across the spatial grid, concatenated channel-wise, mixed by d 3x3 filters),
pushes the fused map through an hourglass of residual blocks without channel
normalization, and finishes with a stack of 1x1 convolutions separated by
SiLU and bounded by tanh.  The extractor is a residual-family classifier with
a sigmoid bit head; the critic is a strided convolutional network without
normalization so it stays compatible with a gradient penalty.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ImageArray
from .tensors import image_to_tensor, payload_to_tensor, tensor_to_image

EXTRACTOR_FAMILIES = ("resnet-small", "resnet-large", "densenet", "regnet", "resnext")

CHECKPOINT_FORMAT_VERSION = 1

PROB_EPS = 1e-6


@dataclass
class CodecConfig:
    """Architecture knobs shared by embedder, extractor and critic."""

    image_size: int = 256
    bit_length: int = 64
    internal_dim: int = 64
    backbone_depth: int = 4
    post_layers: int = 3
    extractor_family: str = "resnet-large"
    res_blocks_per_level: int = 2
    channel_growth_cap: int = 4

    def __post_init__(self):
        if self.image_size < 8 or self.image_size % 8 != 0:
            raise ValueError(f"image_size must be a positive multiple of 8, got {self.image_size}")
        if self.bit_length < 1:
            raise ValueError("bit_length must be >= 1")
        if self.internal_dim < 8:
            raise ValueError("internal_dim must be >= 8")
        if self.post_layers < 2:
            raise ValueError("post_layers must be >= 2")
        if self.backbone_depth < 1:
            raise ValueError("backbone_depth must be >= 1")
        if self.extractor_family not in EXTRACTOR_FAMILIES:
            raise ValueError(f"extractor_family must be one of {EXTRACTOR_FAMILIES}")

    @classmethod
    def toy(cls, **overrides) -> "CodecConfig":
        """Desk-scale preset: 64x64 images, 16-bit payloads, slim networks."""
        base = dict(image_size=64, bit_length=16, internal_dim=32, backbone_depth=2,
                    post_layers=3, extractor_family="resnet-small",
                    res_blocks_per_level=1, channel_growth_cap=2)
        base.update(overrides)
        return cls(**base)


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        h = self.conv2(F.silu(self.conv1(F.silu(x))))
        return x + h


class PreFuse(nn.Module):
    """Early payload/image fusion: bits become constant spatial channels."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.bit_length = cfg.bit_length
        self.conv = nn.Conv2d(3 + cfg.bit_length, cfg.internal_dim, 3, padding=1)

    def forward(self, x, w):
        b, _, h, wd = x.shape
        if w.dim() == 1:
            w = w.unsqueeze(0).expand(b, -1)
        if w.shape != (b, self.bit_length):
            raise ValueError(f"payload shape {tuple(w.shape)} != ({b}, {self.bit_length})")
        wmap = w.to(x.dtype).view(b, self.bit_length, 1, 1).expand(b, self.bit_length, h, wd)
        return self.conv(torch.cat([x, wmap], dim=1))


class Backbone(nn.Module):
    """Hourglass of residual blocks with a long skip preserving full-res detail."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        d = cfg.internal_dim
        chans = [min(d * 2 ** i, d * cfg.channel_growth_cap)
                 for i in range(cfg.backbone_depth + 1)]
        self.stem = nn.Conv2d(d, d, 3, padding=1)
        downs, dec_convs, enc_blocks, dec_blocks = [], [], [], []
        for i in range(cfg.backbone_depth):
            downs.append(nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1))
            enc_blocks.append(nn.Sequential(
                *[ResBlock(chans[i + 1]) for _ in range(cfg.res_blocks_per_level)]))
        for i in reversed(range(cfg.backbone_depth)):
            dec_convs.append(nn.Conv2d(chans[i + 1], chans[i], 3, padding=1))
            dec_blocks.append(nn.Sequential(
                *[ResBlock(chans[i]) for _ in range(cfg.res_blocks_per_level)]))
        self.downs = nn.ModuleList(downs)
        self.enc_blocks = nn.ModuleList(enc_blocks)
        self.dec_convs = nn.ModuleList(dec_convs)
        self.dec_blocks = nn.ModuleList(dec_blocks)
        self.fuse = nn.Conv2d(2 * d, d, 3, padding=1)
        self.out_channels = d

    def forward(self, x):
        top = self.stem(x)
        h = top
        for down, blocks in zip(self.downs, self.enc_blocks):
            h = blocks(F.silu(down(h)))
        for conv, blocks in zip(self.dec_convs, self.dec_blocks):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = blocks(F.silu(conv(h)))
        return self.fuse(torch.cat([top, h], dim=1))


class PostProcess(nn.Module):
    """Channel-wise pooling: 1x1 convolutions with SiLU between, tanh at the end."""

    def __init__(self, in_channels: int, n_layers: int):
        super().__init__()
        convs = []
        ch = in_channels
        for i in range(n_layers):
            out = 3 if i == n_layers - 1 else max(ch // 2, 8)
            convs.append(nn.Conv2d(ch, out, 1))
            ch = out
        self.convs = nn.ModuleList(convs)
        self.in_channels = in_channels

    def forward(self, feats):
        if feats.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {feats.shape[1]}")
        h = feats
        for conv in self.convs[:-1]:
            h = F.silu(conv(h))
        return torch.tanh(self.convs[-1](h))


class SingleProjection(nn.Module):
    """Ablation head: one 3-channel projection instead of the pooling stack."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, 3, 1)
        self.in_channels = in_channels

    def forward(self, feats):
        if feats.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {feats.shape[1]}")
        return torch.tanh(self.conv(feats))


class Embedder(nn.Module):
    def __init__(self, cfg: CodecConfig, single_projection_post: bool = False):
        super().__init__()
        self.pre = PreFuse(cfg)
        self.backbone = Backbone(cfg)
        if single_projection_post:
            self.post = SingleProjection(self.backbone.out_channels)
        else:
            self.post = PostProcess(self.backbone.out_channels, cfg.post_layers)

    def forward(self, x, w):
        return self.post(self.backbone(self.pre(x, w)))


class SmallResNet(nn.Module):
    """Compact residual classifier for desk-scale extraction."""

    def __init__(self, bit_length: int, width: int = 32):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1),
            nn.BatchNorm2d(width), nn.ReLU(inplace=True))
        self.stages = nn.ModuleList([
            self._stage(width, width * 2),
            self._stage(width * 2, width * 4),
            self._stage(width * 4, width * 4),
        ])
        self.head = nn.Linear(width * 4, bit_length)

    @staticmethod
    def _stage(c_in, c_out):
        return nn.ModuleDict({
            "conv1": nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
            "bn1": nn.BatchNorm2d(c_out),
            "conv2": nn.Conv2d(c_out, c_out, 3, padding=1),
            "bn2": nn.BatchNorm2d(c_out),
            "skip": nn.Conv2d(c_in, c_out, 1, stride=2),
        })

    def forward(self, x):
        h = self.stem(x)
        for st in self.stages:
            identity = st["skip"](h)
            h = F.relu(st["bn1"](st["conv1"](h)))
            h = st["bn2"](st["conv2"](h))
            h = F.relu(h + identity)
        h = F.adaptive_avg_pool2d(h, 1).flatten(1)
        return self.head(h)


def _torchvision_extractor(family: str, bit_length: int) -> nn.Module:
    from torchvision import models

    if family == "resnet-large":
        return models.resnet50(weights=None, num_classes=bit_length)
    if family == "densenet":
        return models.densenet121(weights=None, num_classes=bit_length)
    if family == "regnet":
        return models.regnet_y_400mf(weights=None, num_classes=bit_length)
    if family == "resnext":
        return models.resnext50_32x4d(weights=None, num_classes=bit_length)
    raise ValueError(f"unknown extractor family {family!r}")


class Extractor(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        if cfg.extractor_family == "resnet-small":
            self.net = SmallResNet(cfg.bit_length)
        else:
            self.net = _torchvision_extractor(cfg.extractor_family, cfg.bit_length)

    def forward(self, y):
        probs = torch.sigmoid(self.net(y))
        return probs.clamp(PROB_EPS, 1.0 - PROB_EPS)


class Critic(nn.Module):
    """Four strided conv layers, no normalization, unbounded scalar score."""

    def __init__(self, base: int = 32):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(3, base, 4, stride=2, padding=1),
            nn.Conv2d(base, base * 2, 4, stride=2, padding=1),
            nn.Conv2d(base * 2, base * 4, 4, stride=2, padding=1),
            nn.Conv2d(base * 4, base * 4, 4, stride=2, padding=1),
        ])
        self.head = nn.Linear(base * 4, 1)

    def forward(self, img):
        h = img
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
        h = F.adaptive_avg_pool2d(h, 1).flatten(1)
        return self.head(h).squeeze(-1)


class CodecModel(nn.Module):
    """Embedder + extractor + critic bundle with its configuration."""

    def __init__(self, config: CodecConfig, seed: int | None = None,
                 single_projection_post: bool = False):
        super().__init__()
        if seed is not None:
            torch.manual_seed(seed)
        self.config = config
        self.embedder = Embedder(config, single_projection_post=single_projection_post)
        self.extractor = Extractor(config)
        self.critic = Critic(base=min(config.internal_dim, 32))
        self.single_projection_post = single_projection_post

    def check_resolution(self, img: torch.Tensor) -> None:
        s = self.config.image_size
        if img.shape[-2:] != (s, s):
            raise ValueError(
                f"expected native resolution {s}x{s}, got {tuple(img.shape[-2:])}; "
                "route arbitrary sizes through resolution scaling")

    def encode(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        self.check_resolution(x)
        return self.embedder(x, w)

    def decode_probs(self, y: torch.Tensor) -> torch.Tensor:
        self.check_resolution(y)
        return self.extractor(y)

    def critic_score(self, img: torch.Tensor) -> torch.Tensor:
        self.check_resolution(img)
        return self.critic(img)


# --------------------------------------------------------------------------
# public single-image operations (numpy in / numpy out, inference mode)

def _single(model: CodecModel, img: ImageArray) -> torch.Tensor:
    t = image_to_tensor(img.to_unit_signed()).unsqueeze(0)
    model.check_resolution(t)
    return t


def embed_fixed(model: CodecModel, x: ImageArray, w) -> ImageArray:
    """Encode a payload into a native-resolution unit-signed cover image."""
    from .core import WatermarkPayload

    if isinstance(w, WatermarkPayload):
        if len(w) != model.config.bit_length:
            raise ValueError(f"payload length {len(w)} != model bit length {model.config.bit_length}")
        w = payload_to_tensor(w)
    model.eval()
    with torch.no_grad():
        y = model.encode(_single(model, x), w.unsqueeze(0))
    return tensor_to_image(y.squeeze(0))


def preprocess_fuse(model: CodecModel, x: ImageArray, w, d: int | None = None) -> np.ndarray:
    """Expose the fused feature map (H x W x d) for inspection."""
    from .core import WatermarkPayload

    if d is not None and d != model.config.internal_dim:
        raise ValueError(f"d={d} does not match model internal_dim {model.config.internal_dim}")
    if isinstance(w, WatermarkPayload):
        w = payload_to_tensor(w)
    model.eval()
    with torch.no_grad():
        feats = model.embedder.pre(_single(model, x), w.unsqueeze(0))
    return feats.squeeze(0).numpy().transpose(1, 2, 0)


def postprocess(model: CodecModel, features: np.ndarray) -> ImageArray:
    """Run the 1x1 pooling stack on an H x W x n feature map."""
    t = torch.from_numpy(np.ascontiguousarray(features.transpose(2, 0, 1))).float().unsqueeze(0)
    model.eval()
    with torch.no_grad():
        out = model.embedder.post(t)
    return tensor_to_image(out.squeeze(0))


def extract(model: CodecModel, y: ImageArray) -> np.ndarray:
    """Recover the payload probability vector from a native-resolution image."""
    model.eval()
    with torch.no_grad():
        probs = model.decode_probs(_single(model, y))
    return probs.squeeze(0).numpy()


def discriminate(model: CodecModel, img: ImageArray) -> float:
    model.eval()
    with torch.no_grad():
        return float(model.critic_score(_single(model, img)))


# --------------------------------------------------------------------------
# checkpoint archive: manifest as structured text + one array per parameter

_ZIP_DATE = (2020, 1, 1, 0, 0, 0)  # fixed so identical runs emit identical bytes


def _write_zip_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, payload)


def save_archive(path, kind: str, config_dict: dict, state_dict: dict,
                 extra_manifest: dict | None = None,
                 training_blob: bytes | None = None) -> None:
    """Write a checkpoint: manifest.json plus params/<name>.npy per parameter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "config": config_dict,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    with zipfile.ZipFile(path, "w") as zf:
        _write_zip_entry(zf, "manifest.json", json.dumps(manifest, indent=2).encode())
        for key in sorted(state_dict):
            buf = io.BytesIO()
            np.save(buf, state_dict[key].detach().cpu().numpy())
            _write_zip_entry(zf, f"params/{key}.npy", buf.getvalue())
        if training_blob is not None:
            _write_zip_entry(zf, "training.pt", training_blob)


def load_archive(path):
    """Read (manifest, state_dict, training_blob_or_None) from a checkpoint."""
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {manifest.get('format_version')}")
        state = {}
        for name in zf.namelist():
            if name.startswith("params/") and name.endswith(".npy"):
                arr = np.load(io.BytesIO(zf.read(name)))
                state[name[len("params/"):-len(".npy")]] = torch.from_numpy(arr)
        blob = zf.read("training.pt") if "training.pt" in zf.namelist() else None
    return manifest, state, blob


def save_codec(path, model: CodecModel, extra_manifest: dict | None = None,
               training_blob: bytes | None = None) -> None:
    extra = {"single_projection_post": model.single_projection_post}
    if extra_manifest:
        extra.update(extra_manifest)
    save_archive(path, "codec", asdict(model.config), model.state_dict(),
                 extra_manifest=extra, training_blob=training_blob)


def load_codec(path) -> CodecModel:
    manifest, state, _ = load_archive(path)
    if manifest["kind"] != "codec":
        raise ValueError(f"{path}: not a codec checkpoint (kind={manifest['kind']!r})")
    model = CodecModel(CodecConfig(**manifest["config"]),
                       single_projection_post=manifest.get("single_projection_post", False))
    model.load_state_dict(state)
    model.eval()
    return model


def params_sha256(module: nn.Module) -> str:
    """Stable content hash over all named parameters and buffers."""
    h = hashlib.sha256()
    state = module.state_dict()
    for key in sorted(state):
        h.update(key.encode())
        h.update(state[key].detach().cpu().numpy().tobytes())
    return h.hexdigest()

"""Bridging helpers between ImageArray (numpy, HWC) and torch tensors (CHW)."""

from __future__ import annotations

import numpy as np
import torch

from .core import RANGE_BYTE, RANGE_UNIT_SIGNED, ImageArray, WatermarkPayload


def image_to_tensor(img: ImageArray, dtype=torch.float32) -> torch.Tensor:
    """ImageArray -> (3, H, W) tensor in unit-signed range."""
    u = img.to_unit_signed().data
    return torch.from_numpy(np.ascontiguousarray(u.transpose(2, 0, 1))).to(dtype)


def tensor_to_image(t: torch.Tensor, range_tag: str = RANGE_UNIT_SIGNED) -> ImageArray:
    """(3, H, W) unit-signed tensor -> ImageArray with the requested tag."""
    if t.dim() != 3 or t.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) tensor, got {tuple(t.shape)}")
    u = t.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)
    u = np.clip(u, -1.0, 1.0)  # guard against float round-off past the bound
    img = ImageArray(u, RANGE_UNIT_SIGNED)
    return img.to_byte() if range_tag == RANGE_BYTE else img


def payload_to_tensor(w: WatermarkPayload, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(w.bits.astype(np.float32)).to(dtype)


def tensor_to_payload(probs: torch.Tensor) -> WatermarkPayload:
    """Threshold a probability vector at 0.5 into a payload."""
    bits = (probs.detach().cpu().numpy() > 0.5).astype(np.uint8)
    return WatermarkPayload(bits)


def byte_to_unit(t: torch.Tensor) -> torch.Tensor:
    return t / 127.5 - 1.0


def unit_to_byte(t: torch.Tensor) -> torch.Tensor:
    return (t + 1.0) * 127.5

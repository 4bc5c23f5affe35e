"""Shared domain types, pixel-range conventions, and quality metrics.

Images travel between modules as :class:`ImageArray` values: H x W x 3 float
arrays with an explicit range tag (``byte`` for [0, 255], ``unit_signed`` for
[-1, 1]).  Payloads are :class:`WatermarkPayload` bit vectors.  Quality is
reported as PSNR/SSIM in the byte range and payload recovery as bit accuracy.

All functions here are pure and safe to call from parallel workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

RANGE_UNIT_SIGNED = "unit_signed"
RANGE_BYTE = "byte"

_RANGE_BOUNDS = {RANGE_UNIT_SIGNED: (-1.0, 1.0), RANGE_BYTE: (0.0, 255.0)}

# Finite stand-in used when writing the PSNR of identical images into report
# tables; the psnr() API itself returns math.inf for that case.
PSNR_IDENTICAL_SENTINEL_DB = 100.0

EVAL_CSV_HEADER = ["method_id", "noise_source", "severity", "psnr_db", "ssim", "bit_acc"]


@dataclass(frozen=True)
class ImageArray:
    """An H x W x 3 real-valued image with a declared pixel range.

    ``data`` is stored as float64 and must lie inside the declared range
    (inclusive).  Instances are treated as immutable: do not write into
    ``data`` after construction.
    """

    data: np.ndarray
    range_tag: str = RANGE_BYTE

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 image, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"empty image: shape {data.shape}")
        if self.range_tag not in _RANGE_BOUNDS:
            raise ValueError(f"unknown range_tag {self.range_tag!r}")
        lo, hi = _RANGE_BOUNDS[self.range_tag]
        if not np.isfinite(data).all():
            raise ValueError("image contains non-finite values")
        if data.min() < lo or data.max() > hi:
            raise ValueError(
                f"values [{data.min():.4f}, {data.max():.4f}] outside {self.range_tag} "
                f"range [{lo}, {hi}]"
            )
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_byte(self) -> "ImageArray":
        if self.range_tag == RANGE_BYTE:
            return self
        return ImageArray((self.data + 1.0) * 127.5, RANGE_BYTE)

    def to_unit_signed(self) -> "ImageArray":
        if self.range_tag == RANGE_UNIT_SIGNED:
            return self
        return ImageArray(self.data / 127.5 - 1.0, RANGE_UNIT_SIGNED)


def quantize_bytes(data: np.ndarray) -> np.ndarray:
    """Round byte-range values half away from zero and clip to [0, 255].

    This is the quantization applied whenever an image is written to disk;
    pinning the rounding rule keeps golden files bit-exact.
    """
    return np.clip(np.floor(np.asarray(data, dtype=np.float64) + 0.5), 0.0, 255.0)


@dataclass(frozen=True)
class WatermarkPayload:
    """A length-l binary secret embedded into / recovered from an image."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or bits.size < 1:
            raise ValueError(f"payload must be a non-empty 1-D vector, got shape {bits.shape}")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("payload bits must all be 0 or 1")
        object.__setattr__(self, "bits", bits.astype(np.uint8))

    def __len__(self) -> int:
        return int(self.bits.size)

    @classmethod
    def from_binary_string(cls, s: str) -> "WatermarkPayload":
        if not s or any(c not in "01" for c in s):
            raise ValueError(f"not a binary string: {s!r}")
        return cls(np.array([int(c) for c in s], dtype=np.uint8))

    @classmethod
    def from_hex(cls, s: str, bit_length: int | None = None) -> "WatermarkPayload":
        """Parse a hex string, 4 bits per digit, optionally truncated to bit_length."""
        s = s.lower().removeprefix("0x")
        if not s or any(c not in "0123456789abcdef" for c in s):
            raise ValueError(f"not a hex string: {s!r}")
        bits = []
        for c in s:
            v = int(c, 16)
            bits.extend((v >> k) & 1 for k in (3, 2, 1, 0))
        if bit_length is not None:
            if bit_length > len(bits):
                raise ValueError(f"hex string {s!r} provides {len(bits)} bits, need {bit_length}")
            bits = bits[:bit_length]
        return cls(np.array(bits, dtype=np.uint8))

    @classmethod
    def random(cls, bit_length: int, seed: int | np.random.Generator = 0) -> "WatermarkPayload":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(rng.integers(0, 2, size=bit_length, dtype=np.uint8))

    def complement(self) -> "WatermarkPayload":
        return WatermarkPayload(1 - self.bits)

    def to_binary_string(self) -> str:
        return "".join(str(int(b)) for b in self.bits)

    def to_hex(self) -> str:
        if len(self) % 4 != 0:
            raise ValueError("hex form requires a bit length divisible by 4")
        digits = []
        for i in range(0, len(self), 4):
            v = int(self.bits[i]) * 8 + int(self.bits[i + 1]) * 4 + int(self.bits[i + 2]) * 2 + int(self.bits[i + 3])
            digits.append(f"{v:x}")
        return "".join(digits)


@dataclass
class EvalRecord:
    """One row of a robustness/quality report table."""

    method_id: str
    noise_source: str
    severity: str
    psnr_db: float
    ssim: float
    bit_acc: float

    def __post_init__(self):
        if not (self.psnr_db >= 0.0 or math.isinf(self.psnr_db)):
            raise ValueError(f"psnr_db must be >= 0 or inf, got {self.psnr_db}")
        if not 0.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim must be in [0, 1], got {self.ssim}")
        if not 0.0 <= self.bit_acc <= 1.0:
            raise ValueError(f"bit_acc must be in [0, 1], got {self.bit_acc}")


def write_eval_records(path, records) -> None:
    """Write EvalRecords as CSV with the fixed header row.

    Infinite PSNR values are reported as the finite sentinel so that the
    tables stay numeric.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVAL_CSV_HEADER)
        for r in records:
            psnr_out = PSNR_IDENTICAL_SENTINEL_DB if math.isinf(r.psnr_db) else r.psnr_db
            w.writerow(
                [r.method_id, r.noise_source, r.severity,
                 f"{psnr_out:.6f}", f"{r.ssim:.6f}", f"{r.bit_acc:.6f}"]
            )


def read_eval_records(path) -> list[EvalRecord]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != EVAL_CSV_HEADER:
        raise ValueError(f"{path}: missing or wrong header row")
    return [
        EvalRecord(m, n, s, float(p), float(ss), float(a))
        for m, n, s, p, ss, a in rows[1:]
    ]


def _check_pair(a: ImageArray, b: ImageArray) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    if a.range_tag != b.range_tag:
        raise ValueError(f"range_tag mismatch: {a.range_tag} vs {b.range_tag}")


def psnr(a: ImageArray, b: ImageArray) -> float:
    """Peak signal-to-noise ratio in dB, computed in the byte range (MAX=255).

    MSE is taken jointly over all RGB values.  Returns math.inf when the
    images are identical; report writers substitute a finite sentinel.
    """
    _check_pair(a, b)
    da, db = a.to_byte().data, b.to_byte().data
    mse = float(np.mean((da - db) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _ssim_window(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable Gaussian correlation; border mode is irrelevant because the
    # caller crops back to windows fully inside the image.
    out = correlate1d(x, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")


def ssim(a: ImageArray, b: ImageArray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over Gaussian-weighted sliding windows, byte dynamic range.

    Only windows fully inside the image contribute.  Equals 1.0 exactly when
    the two images are identical; can be negative for anti-correlated images.
    """
    _check_pair(a, b)
    h, w = a.data.shape[:2]
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {window}")
    r = np.arange(window) - (window - 1) / 2.0
    kern = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    kern /= kern.sum()
    half = (window - 1) // 2
    c1 = (k1 * 255.0) ** 2
    c2 = (k2 * 255.0) ** 2

    vals = []
    da, db = a.to_byte().data, b.to_byte().data
    for ch in range(3):
        x, y = da[:, :, ch], db[:, :, ch]
        mu_x = _ssim_window(x, kern)
        mu_y = _ssim_window(y, kern)
        sxx = _ssim_window(x * x, kern) - mu_x * mu_x
        syy = _ssim_window(y * y, kern) - mu_y * mu_y
        sxy = _ssim_window(x * y, kern) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
        s = num / den
        vals.append(s[half:h - half, half:w - half])
    return float(np.mean(vals))


def bit_accuracy(w: WatermarkPayload, w_hat: WatermarkPayload) -> float:
    """Fraction of payload positions recovered correctly (0.5 = random guess)."""
    if len(w) != len(w_hat):
        raise ValueError(f"payload length mismatch: {len(w)} vs {len(w_hat)}")
    return float(np.mean(w.bits == w_hat.bits))


def load_image(path) -> ImageArray:
    """Read a PNG/JPEG file into a byte-range ImageArray."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return ImageArray(arr, RANGE_BYTE)


def save_image(img: ImageArray, path, jpeg_quality: int | None = None) -> None:
    """Write an image as PNG (default) or JPEG when the path says so."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = quantize_bytes(img.to_byte().data).astype(np.uint8)
    pil = Image.fromarray(arr)
    if path.suffix.lower() in (".jpg", ".jpeg"):
        pil.save(path, quality=jpeg_quality if jpeg_quality is not None else 95)
    else:
        pil.save(path)

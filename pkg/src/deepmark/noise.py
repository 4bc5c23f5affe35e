"""Differentiable perturbation pipeline applied between embedder and extractor.

Every training image passes through three always-on geometric transforms
(flip, crop, resize) followed by two transforms sampled without replacement
from fifteen optional sources.  All eighteen are differentiable with respect
to the image so recovery errors propagate back into the embedder; encoding
steps that are inherently discrete (JPEG quantization, posterize) run through
smooth rounding surrogates.

Images are unit-signed tensors; colour transforms operate internally in
[0, 1].  Outputs are clamped back to [-1, 1].
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
import yaml

from .core import ImageArray
from .tensors import image_to_tensor, tensor_to_image

BASE_TRANSFORMS = ("flip", "crop", "resize")
OPTIONAL_TRANSFORMS = (
    "jpeg", "brightness", "hue", "contrast", "sharpness", "color_jiggle",
    "rgb_shift", "saturation", "grayscale", "gaussian_blur", "median_blur",
    "box_blur", "motion_blur", "gaussian_noise", "posterize",
)
ALL_TRANSFORMS = BASE_TRANSFORMS + OPTIONAL_TRANSFORMS

SEVERITIES = ("off", "low", "medium", "high")

_LUMA = (0.299, 0.587, 0.114)


def _load_severity_tables() -> dict:
    text = importlib.resources.files("deepmark").joinpath("data/noise_severity.yaml").read_text()
    return yaml.safe_load(text)


@dataclass(frozen=True)
class NoiseSpec:
    """Severity preset: base geometric parameters plus the optional-transform table."""

    severity: str
    base: dict
    optional: dict

    def __post_init__(self):
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if self.severity == "off":
            return
        missing = set(OPTIONAL_TRANSFORMS) - set(self.optional)
        if missing:
            raise ValueError(f"severity table missing transforms: {sorted(missing)}")
        unknown = set(self.optional) - set(OPTIONAL_TRANSFORMS)
        if unknown:
            raise ValueError(f"unknown transforms in severity table: {sorted(unknown)}")
        for key in ("flip_prob", "crop_ratio", "resize_scale", "aspect_ratio"):
            if key not in self.base:
                raise ValueError(f"base table missing {key!r}")
        if not 0.0 < self.base["crop_ratio"] <= 1.0:
            raise ValueError("crop_ratio must be in (0, 1]")
        for name, params in self.optional.items():
            for k, v in params.items():
                if isinstance(v, (list, tuple)):
                    if len(v) != 2 or v[1] < v[0]:
                        raise ValueError(f"{name}.{k}: bad range {v}")

    @classmethod
    def from_severity(cls, severity: str, tables: dict | None = None) -> "NoiseSpec":
        if severity == "off":
            return cls("off", {}, {})
        tables = tables if tables is not None else _load_severity_tables()
        if severity not in tables:
            raise ValueError(f"severity {severity!r} not in tables")
        return cls(severity, dict(tables["base"]), {k: dict(v) for k, v in tables[severity].items()})


# --------------------------------------------------------------------------
# helpers

def _to01(y):
    return (y + 1.0) * 0.5


def _from01(u):
    return u * 2.0 - 1.0


def _clamp_out(y):
    return y.clamp(-1.0, 1.0)


def _luma(u):
    r, g, b = u[..., 0:1, :, :], u[..., 1:2, :, :], u[..., 2:3, :, :]
    return _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b


def _soft_round(v):
    # Smooth rounding surrogate: equals round() to within 1/8 of a step and is
    # differentiable away from half-integer boundaries.
    r = torch.round(v)
    return r + (v - r) ** 3


def _reflect_conv(u, kernel2d):
    """Depthwise 2-D convolution with reflect padding; kernel is (kh, kw)."""
    kh, kw = kernel2d.shape
    c = u.shape[-3]
    weight = kernel2d.to(u.dtype).expand(c, 1, kh, kw).contiguous()
    pad = (kw // 2, kw - 1 - kw // 2, kh // 2, kh - 1 - kh // 2)
    squeeze = u.dim() == 3
    x = u.unsqueeze(0) if squeeze else u
    x = F.pad(x, pad, mode="reflect")
    out = F.conv2d(x, weight, groups=c)
    return out.squeeze(0) if squeeze else out


def _rand_uniform(gen, lo, hi):
    return lo + (hi - lo) * torch.rand((), generator=gen).item()


def _rand_int(gen, lo, hi):
    # inclusive bounds
    return int(torch.randint(lo, hi + 1, (), generator=gen).item())


def _interpolate(y, size, antialias=False):
    squeeze = y.dim() == 3
    x = y.unsqueeze(0) if squeeze else y
    if tuple(x.shape[-2:]) != tuple(size):
        x = F.interpolate(x, size=size, mode="bilinear", align_corners=False,
                          antialias=antialias)
    return x.squeeze(0) if squeeze else x


# --------------------------------------------------------------------------
# geometric base transforms

def _t_flip(y, params, gen):
    apply = params.get("apply")
    if apply is None:
        apply = torch.rand((), generator=gen).item() < params.get("p", 0.5)
    return torch.flip(y, dims=[-1]) if apply else y


def _t_crop(y, params, gen):
    s = y.shape[-1]
    size = params.get("size")
    if size is None:
        size = max(1, round(s * params["ratio"]))
    if not 1 <= size <= s:
        raise ValueError(f"crop size {size} invalid for edge {s}")
    top = params.get("top")
    left = params.get("left")
    if top is None:
        top = _rand_int(gen, 0, y.shape[-2] - size)
    if left is None:
        left = _rand_int(gen, 0, s - size)
    out_size = params.get("out_size", (y.shape[-2], s))
    patch = y[..., top:top + size, left:left + size]
    return _interpolate(patch, out_size)


def _t_resize(y, params, gen):
    h0, w0 = y.shape[-2:]
    h, w = params.get("height"), params.get("width")
    if h is None or w is None:
        scale = _rand_uniform(gen, *params["scale"])
        aspect = _rand_uniform(gen, *params["aspect"])
        h = max(1, round(h0 * scale * math.sqrt(aspect)))
        w = max(1, round(w0 * scale / math.sqrt(aspect)))
    out_size = params.get("out_size", (h0, w0))
    shrunk = _interpolate(y, (h, w), antialias=(h < h0 or w < w0))
    return _interpolate(shrunk, out_size)


# --------------------------------------------------------------------------
# colour / tone transforms

def _t_brightness(y, params, gen):
    f = params["factor"]
    if isinstance(f, (list, tuple)):
        f = _rand_uniform(gen, *f)
    if f < 0:
        raise ValueError("brightness factor must be >= 0")
    return _from01((_to01(y) * f).clamp(0.0, 1.0))


def _t_contrast(y, params, gen):
    f = params["factor"]
    if isinstance(f, (list, tuple)):
        f = _rand_uniform(gen, *f)
    if f < 0:
        raise ValueError("contrast factor must be >= 0")
    u = _to01(y)
    mean = _luma(u).mean(dim=(-1, -2, -3), keepdim=True)
    return _from01((f * u + (1.0 - f) * mean).clamp(0.0, 1.0))


def _t_saturation(y, params, gen):
    f = params["factor"]
    if isinstance(f, (list, tuple)):
        f = _rand_uniform(gen, *f)
    if f < 0:
        raise ValueError("saturation factor must be >= 0")
    u = _to01(y)
    gray = _luma(u)
    return _from01((f * u + (1.0 - f) * gray).clamp(0.0, 1.0))


def _t_hue(y, params, gen):
    shift = params["shift"]
    if isinstance(shift, (list, tuple)):
        shift = _rand_uniform(gen, *shift)
    if abs(shift) > 0.5:
        raise ValueError("hue shift must be within [-0.5, 0.5] turns")
    return _hue_rotate(y, shift)


def _hue_rotate(y, shift):
    # Rotate the chroma plane of the YIQ representation; linear, hence smooth.
    u = _to01(y)
    r, g, b = u[..., 0:1, :, :], u[..., 1:2, :, :], u[..., 2:3, :, :]
    yy = 0.299 * r + 0.587 * g + 0.114 * b
    ii = 0.596 * r - 0.274 * g - 0.322 * b
    qq = 0.211 * r - 0.523 * g + 0.312 * b
    th = 2.0 * math.pi * shift
    ii2 = math.cos(th) * ii - math.sin(th) * qq
    qq2 = math.sin(th) * ii + math.cos(th) * qq
    r2 = yy + 0.956 * ii2 + 0.621 * qq2
    g2 = yy - 0.272 * ii2 - 0.647 * qq2
    b2 = yy - 1.106 * ii2 + 1.703 * qq2
    return _from01(torch.cat([r2, g2, b2], dim=-3).clamp(0.0, 1.0))


def _t_color_jiggle(y, params, gen):
    b = _rand_uniform(gen, 1.0 - params["brightness"], 1.0 + params["brightness"])
    c = _rand_uniform(gen, 1.0 - params["contrast"], 1.0 + params["contrast"])
    s = _rand_uniform(gen, 1.0 - params["saturation"], 1.0 + params["saturation"])
    h = _rand_uniform(gen, -params["hue"], params["hue"])
    y = _t_brightness(y, {"factor": b}, gen)
    y = _t_contrast(y, {"factor": c}, gen)
    y = _t_saturation(y, {"factor": s}, gen)
    return _hue_rotate(y, h)


def _t_rgb_shift(y, params, gen):
    lim = params["shift_limit"]
    if not 0.0 <= lim <= 1.0:
        raise ValueError("shift_limit must be in [0, 1]")
    shifts = params.get("shifts")
    if shifts is None:
        shifts = [_rand_uniform(gen, -lim, lim) for _ in range(3)]
    sh = torch.tensor(shifts, dtype=y.dtype).view(3, 1, 1)
    if y.dim() == 4:
        sh = sh.unsqueeze(0)
    return _from01((_to01(y) + sh).clamp(0.0, 1.0))


def _t_grayscale(y, params, gen):
    apply = params.get("apply")
    if apply is None:
        apply = torch.rand((), generator=gen).item() < params["p"]
    if not apply:
        return y
    u = _to01(y)
    return _from01(_luma(u).expand_as(u).clamp(0.0, 1.0))


def _t_sharpness(y, params, gen):
    strength = params["strength"]
    factor = params.get("factor")
    if factor is None:
        factor = _rand_uniform(gen, 0.0, strength)
    u = _to01(y)
    k = torch.tensor([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0
    blurred = _reflect_conv(u, k)
    return _from01((blurred + factor * (u - blurred)).clamp(0.0, 1.0))


# --------------------------------------------------------------------------
# blurs and noise

def _gaussian_kernel1d(size, sigma, dtype):
    r = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    k = torch.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _t_gaussian_blur(y, params, gen):
    k = int(params["kernel"])
    if k < 1 or k % 2 == 0:
        raise ValueError("gaussian blur kernel must be odd and >= 1")
    sigma = params["sigma"]
    if isinstance(sigma, (list, tuple)):
        sigma = _rand_uniform(gen, *sigma)
    k1 = _gaussian_kernel1d(k, sigma, y.dtype)
    return _clamp_out(_reflect_conv(y, torch.outer(k1, k1)))


def _t_box_blur(y, params, gen):
    k = int(params["kernel"])
    if k < 1:
        raise ValueError("box blur kernel must be >= 1")
    kern = torch.full((k, k), 1.0 / (k * k))
    return _clamp_out(_reflect_conv(y, kern))


def _t_median_blur(y, params, gen):
    k = int(params["kernel"])
    if k < 1 or k % 2 == 0:
        raise ValueError("median blur kernel must be odd and >= 1")
    squeeze = y.dim() == 3
    x = y.unsqueeze(0) if squeeze else y
    b, c, h, w = x.shape
    pad = k // 2
    x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    patches = x.unfold(-2, k, 1).unfold(-2, k, 1).reshape(b, c, h, w, k * k)
    # torch.median routes the gradient to the selected window element, which
    # matches finite differences away from ties.
    out = patches.median(dim=-1).values
    return out.squeeze(0) if squeeze else out


def _motion_kernel(k, angle_deg, direction, dtype):
    """Anti-aliased line kernel of length k rotated by angle_deg.

    `direction` in [-1, 1] skews the tap weights toward one end of the motion
    path (0 = uniform drag, +/-1 = weight concentrated at one edge).
    """
    if k < 3 or k % 2 == 0:
        raise ValueError("motion blur kernel must be odd and >= 3")
    if not -1.0 <= direction <= 1.0:
        raise ValueError("motion direction must be in [-1, 1]")
    taps = torch.linspace(-1.0, 1.0, k, dtype=dtype)
    weights = 1.0 + direction * taps  # linear taper along the path
    half = (k - 1) / 2.0
    coords = torch.arange(k, dtype=dtype) - half
    gy, gx = torch.meshgrid(coords, coords, indexing="ij")
    th = math.radians(angle_deg)
    # rotate each cell centre back onto the horizontal reference line
    xr = math.cos(th) * gx + math.sin(th) * gy
    yr = -math.sin(th) * gx + math.cos(th) * gy
    # bilinear footprint: linear interp of tap weights along x, tent in y
    pos = xr + half
    i0 = pos.floor().clamp(0, k - 1)
    i1 = (i0 + 1).clamp(0, k - 1)
    frac = (pos - i0).clamp(0.0, 1.0)
    w0 = weights[i0.long()]
    w1 = weights[i1.long()]
    along = torch.where((pos >= 0) & (pos <= k - 1), (1 - frac) * w0 + frac * w1,
                        torch.zeros_like(frac))
    across = (1.0 - yr.abs()).clamp(min=0.0)
    kern = along * across
    total = kern.sum()
    if total <= 0:
        raise ValueError("degenerate motion kernel")
    return kern / total


def _t_motion_blur(y, params, gen):
    k = params["kernel"]
    if isinstance(k, (list, tuple)):
        lo, hi = int(k[0]), int(k[1])
        k = _rand_int(gen, lo // 2, hi // 2) * 2 + 1  # odd sizes only
        k = max(3, min(k, hi if hi % 2 == 1 else hi - 1))
    angle = params["angle"]
    if isinstance(angle, (list, tuple)):
        angle = _rand_uniform(gen, *angle)
    direction = params["direction"]
    if isinstance(direction, (list, tuple)):
        direction = _rand_uniform(gen, *direction)
    kern = _motion_kernel(int(k), float(angle), float(direction), y.dtype)
    return _clamp_out(_reflect_conv(y, kern))


def _t_gaussian_noise(y, params, gen):
    std = float(params["std"])
    if std < 0:
        raise ValueError("noise std must be >= 0")
    noise = torch.randn(y.shape, generator=gen, dtype=y.dtype)
    # std follows the [0, 1] pixel convention; unit-signed doubles the span
    return _clamp_out(y + 2.0 * std * noise)


def _t_posterize(y, params, gen):
    bits = int(params["bits"])
    if not 1 <= bits <= 8:
        raise ValueError("posterize bits must be in [1, 8]")
    levels = float(2 ** bits - 1)
    u = _to01(y)
    return _from01((_soft_round(u * levels) / levels).clamp(0.0, 1.0))


# --------------------------------------------------------------------------
# JPEG compression surrogate

_Q_LUMA = torch.tensor([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=torch.float64)

_Q_CHROMA = torch.tensor([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=torch.float64)


def _dct_matrix(dtype):
    n = 8
    k = torch.arange(n, dtype=torch.float64).view(-1, 1)
    i = torch.arange(n, dtype=torch.float64).view(1, -1)
    m = torch.cos((2 * i + 1) * k * math.pi / (2 * n)) * math.sqrt(2.0 / n)
    m[0, :] = 1.0 / math.sqrt(n)
    return m.to(dtype)


def _quality_tables(quality, dtype):
    q = int(quality)
    if not 1 <= q <= 100:
        raise ValueError("jpeg quality must be in [1, 100]")
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    tabs = []
    for base in (_Q_LUMA, _Q_CHROMA):
        t = torch.floor((base * scale + 50.0) / 100.0).clamp(1.0, 255.0)
        tabs.append(t.to(dtype))
    return tabs


def _blockify(x):
    # (B, H, W) -> (B, nblocks, 8, 8)
    b, h, w = x.shape
    x = x.reshape(b, h // 8, 8, w // 8, 8).permute(0, 1, 3, 2, 4)
    return x.reshape(b, -1, 8, 8)


def _unblockify(x, h, w):
    b = x.shape[0]
    x = x.reshape(b, h // 8, w // 8, 8, 8).permute(0, 1, 3, 2, 4)
    return x.reshape(b, h, w)


def _t_jpeg(y, params, gen):
    quality = params.get("quality")
    if quality is None:
        quality = _rand_int(gen, int(params["min_quality"]), 100)
    squeeze = y.dim() == 3
    x = y.unsqueeze(0) if squeeze else y
    b, c, h, w = x.shape
    if c != 3:
        raise ValueError("jpeg surrogate expects 3 channels")
    pad_h = (8 - h % 8) % 8
    pad_w = (8 - w % 8) % 8
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
    hh, ww = x.shape[-2:]

    u = _to01(x) * 255.0
    r, g, bl = u[:, 0], u[:, 1], u[:, 2]
    yy = 0.299 * r + 0.587 * g + 0.114 * bl
    cb = -0.168736 * r - 0.331264 * g + 0.5 * bl + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * bl + 128.0

    dct = _dct_matrix(y.dtype)
    q_luma, q_chroma = _quality_tables(quality, y.dtype)
    planes = []
    for plane, table in ((yy, q_luma), (cb, q_chroma), (cr, q_chroma)):
        blocks = _blockify(plane - 128.0)
        coeff = dct @ blocks @ dct.T
        coeff = _soft_round(coeff / table) * table
        rec = dct.T @ coeff @ dct
        planes.append(_unblockify(rec, hh, ww) + 128.0)
    yy, cb, cr = planes

    cb = cb - 128.0
    cr = cr - 128.0
    r = yy + 1.402 * cr
    g = yy - 0.344136 * cb - 0.714136 * cr
    bl = yy + 1.772 * cb
    out = torch.stack([r, g, bl], dim=1) / 255.0
    out = _from01(out.clamp(0.0, 1.0))
    out = out[..., :h, :w]
    return out.squeeze(0) if squeeze else out


_TRANSFORM_FNS = {
    "flip": _t_flip,
    "crop": _t_crop,
    "resize": _t_resize,
    "jpeg": _t_jpeg,
    "brightness": _t_brightness,
    "hue": _t_hue,
    "contrast": _t_contrast,
    "sharpness": _t_sharpness,
    "color_jiggle": _t_color_jiggle,
    "rgb_shift": _t_rgb_shift,
    "saturation": _t_saturation,
    "grayscale": _t_grayscale,
    "gaussian_blur": _t_gaussian_blur,
    "median_blur": _t_median_blur,
    "box_blur": _t_box_blur,
    "motion_blur": _t_motion_blur,
    "gaussian_noise": _t_gaussian_noise,
    "posterize": _t_posterize,
}


def apply_single_tensor(y: torch.Tensor, name: str, params: dict,
                        rng_seed: int = 0) -> torch.Tensor:
    """Apply one named transform with explicit parameters to a unit-signed tensor.

    Stochastic details (sampled sub-parameters, noise realizations) derive
    from ``rng_seed`` so repeated calls are bit-identical.
    """
    if name not in _TRANSFORM_FNS:
        raise ValueError(f"unknown transform {name!r}")
    gen = torch.Generator().manual_seed(int(rng_seed))
    out = _TRANSFORM_FNS[name](y, params, gen)
    return _clamp_out(out)


def apply_single(y: ImageArray, name: str, params: dict, rng_seed: int = 0) -> ImageArray:
    """ImageArray wrapper around :func:`apply_single_tensor`."""
    t = image_to_tensor(y.to_unit_signed(), dtype=torch.float64)
    out = apply_single_tensor(t, name, params, rng_seed)
    return tensor_to_image(out)


def _sample_optional_params(name: str, table: dict, gen) -> dict:
    """Draw concrete parameters for perturb(); ranges become point samples."""
    params = dict(table)
    if name == "grayscale":
        params["apply"] = torch.rand((), generator=gen).item() < table["p"]
    elif name == "gaussian_noise":
        pass  # std fixed; realization drawn inside the transform
    return params


def perturb_tensor(y: torch.Tensor, spec: NoiseSpec, rng_seed: int,
                   return_info: bool = False):
    """Full noise pipeline on a unit-signed (3, H, W) or (B, 3, H, W) tensor.

    Severity ``off`` bypasses everything.  Otherwise: flip -> crop -> random
    resize (restored to native size), then two optional transforms sampled
    uniformly without replacement, composed in their sampled order.
    """
    if spec.severity == "off":
        return (y, {"transforms": []}) if return_info else y
    gen = torch.Generator().manual_seed(int(rng_seed))
    out_size = tuple(y.shape[-2:])
    info: dict = {"transforms": []}

    y = _t_flip(y, {"p": spec.base["flip_prob"]}, gen)
    y = _t_crop(y, {"ratio": spec.base["crop_ratio"], "out_size": out_size}, gen)
    y = _t_resize(y, {"scale": spec.base["resize_scale"],
                      "aspect": spec.base["aspect_ratio"],
                      "out_size": out_size}, gen)

    order = torch.randperm(len(OPTIONAL_TRANSFORMS), generator=gen)[:2]
    chosen = [OPTIONAL_TRANSFORMS[i] for i in order.tolist()]
    for name in chosen:
        params = _sample_optional_params(name, spec.optional[name], gen)
        seed = int(torch.randint(0, 2 ** 31 - 1, (), generator=gen).item())
        y = apply_single_tensor(y, name, params, rng_seed=seed)
        info["transforms"].append((name, params))
    y = _clamp_out(y)
    return (y, info) if return_info else y


def perturb(y: ImageArray, spec: NoiseSpec, rng_seed: int) -> ImageArray:
    """ImageArray wrapper around :func:`perturb_tensor` (native resolution in/out)."""
    t = image_to_tensor(y.to_unit_signed(), dtype=torch.float64)
    out = perturb_tensor(t, spec, rng_seed)
    return tensor_to_image(out)


def _midpoint_params(name: str, severity: str) -> dict:
    """Deterministic mid-range parameters for gradient checks."""
    if name == "flip":
        return {"apply": True}
    if name == "crop":
        return {"ratio": NoiseSpec.from_severity("low").base["crop_ratio"] if severity == "off"
                else NoiseSpec.from_severity(severity).base["crop_ratio"]}
    if name == "resize":
        base = NoiseSpec.from_severity("low" if severity == "off" else severity).base
        s = sum(base["resize_scale"]) / 2.0
        a = sum(base["aspect_ratio"]) / 2.0
        return {"scale": [s, s], "aspect": [a, a]}
    table = NoiseSpec.from_severity("low" if severity == "off" else severity).optional[name]
    params = {}
    for k, v in table.items():
        params[k] = (v[0] + v[1]) / 2.0 if isinstance(v, (list, tuple)) else v
    if name == "grayscale":
        params["apply"] = True
    if name == "jpeg":
        params["quality"] = int((table["min_quality"] + 100) // 2)
    if name == "motion_blur":
        params["kernel"] = 3
    if name == "sharpness":
        params["factor"] = params["strength"]
    return params


def gradient_flows(name: str, severity: str = "medium", size: int = 8,
                   rel_tol: float = 1e-2, seed: int = 7) -> bool:
    """True iff d(sum(transform(y)))/dy is nonzero and matches finite differences.

    Uses an 8x8 double-precision image and deterministic mid-range parameters.
    """
    if name not in _TRANSFORM_FNS:
        raise ValueError(f"unknown transform {name!r}")
    gen = torch.Generator().manual_seed(seed)
    # keep pixels away from the clamp boundaries and quantization edges
    y = (torch.rand((3, size, size), generator=gen, dtype=torch.float64) - 0.5) * 1.2
    params = _midpoint_params(name, severity)
    if name == "crop":
        params = dict(params, top=0, left=0, size=size - 1, out_size=(size, size))
    if name == "resize":
        params = dict(params, out_size=(size, size))

    def f(t):
        return apply_single_tensor(t, name, params, rng_seed=123)

    y = y.clone().requires_grad_(True)
    out = f(y).sum()
    grad = torch.autograd.grad(out, y)[0]
    if float(grad.norm()) == 0.0:
        return False

    eps = 1e-5
    fd = torch.zeros_like(y)
    with torch.no_grad():
        flat = y.detach().flatten()
        fd_flat = fd.flatten()
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = f(y.detach()).sum().item()
            flat[i] = orig - eps
            lo = f(y.detach()).sum().item()
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2 * eps)
    denom = max(float(grad.norm()), float(fd.norm()), 1e-12)
    return float((grad - fd).norm()) / denom <= rel_tol

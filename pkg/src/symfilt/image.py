# Grayscale image I/O, seeded Gaussian noise, and fidelity metrics.
#
# Images are 2-D float64 arrays with intensities on the [0, 1] scale
# (row-major, value = byte/255 for data loaded from 8-bit files). Noisy
# images may transiently leave [0, 1]; clamping happens only on save.
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """File exists but is not a format this library reads."""


class NotGrayscaleError(ImageFormatError):
    """File is a recognized image format but carries color data."""


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise: std dev on the [0,1] scale, 64-bit seed."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def _require_image(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {a.shape}")
    return a


def _read_pgm(raw: bytes, path) -> np.ndarray:
    if raw[:2] in (b"P3", b"P6"):
        raise NotGrayscaleError(f"{path}: color PPM content, grayscale required")
    if raw[:2] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")

    # Header tokens: width, height, maxval; '#' starts a comment to EOL.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval

    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval {maxval} unsupported, 8-bit only")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}")

    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise ImageFormatError(f"{path}: pixel payload shorter than header promises")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def _read_png(path) -> np.ndarray:
    try:
        from PIL import Image as PilImage
    except ImportError as exc:  # pragma: no cover - png extra not installed
        raise ImageFormatError(
            f"{path}: PNG support requires the 'png' extra (Pillow)"
        ) from exc
    with PilImage.open(path) as im:
        if im.mode != "L":
            if im.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
                raise NotGrayscaleError(f"{path}: mode {im.mode}, grayscale required")
            raise ImageFormatError(f"{path}: mode {im.mode} unsupported, 8-bit only")
        return np.asarray(im, dtype=np.uint8)


def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale PGM (P5) or PNG file, scaled to [0, 1].

    Raises FileNotFoundError for missing files, NotGrayscaleError for color
    content, and ImageFormatError for anything else this library cannot read.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such image file: {p}")
    if p.suffix.lower() == ".png":
        bytes_img = _read_png(p)
    else:
        bytes_img = _read_pgm(p.read_bytes(), p)
    return bytes_img.astype(np.float64) / 255.0


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize to the 8-bit grid: round(v * 255)."""
    a = _require_image(img)
    return np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp + quantize but stay on the [0, 1] float scale (save/load identity)."""
    return to_bytes(img).astype(np.float64) / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Write an image as binary 8-bit PGM (P5), or PNG if the path says so."""
    data = to_bytes(img)
    p = Path(path)
    if p.suffix.lower() == ".png":
        try:
            from PIL import Image as PilImage
        except ImportError as exc:  # pragma: no cover
            raise ImageFormatError(
                f"{p}: PNG support requires the 'png' extra (Pillow)"
            ) from exc
        PilImage.fromarray(data, mode="L").save(p)
        return
    h, w = data.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    p.write_bytes(header + data.tobytes())


# ---------------------------------------------------------------------------
# Seeded Gaussian noise.
#
# The generator is SplitMix64 (a 64-bit splittable PRNG with a public
# reference implementation); draw i is mix(seed + (i+1)*GOLDEN), so the whole
# stream is a pure function of (seed, i) and identical on every platform.
# Normal deviates come from the Box-Muller transform applied to consecutive
# uniform pairs, filling pixels in row-major order.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1


def _splitmix64(counters: np.ndarray) -> np.ndarray:
    z = counters.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX_A
    z ^= z >> np.uint64(27)
    z *= _MIX_B
    z ^= z >> np.uint64(31)
    return z


def _uniforms(seed: int, count: int) -> np.ndarray:
    """`count` uniforms in (0, 1], 53-bit mantissa, stream fixed by seed."""
    base = np.uint64(seed & _U64_MASK)
    idx = np.arange(1, count + 1, dtype=np.uint64)
    words = _splitmix64(base + idx * _GOLDEN)
    return ((words >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def gaussian_field(shape: tuple[int, int], seed: int) -> np.ndarray:
    """Standard-normal field via Box-Muller, pixels filled row-major."""
    n = int(shape[0]) * int(shape[1])
    pairs = (n + 1) // 2
    u = _uniforms(seed, 2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:n].reshape(shape)


def add_gaussian_noise(img: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """img + e with e ~ N(0, sigma^2) i.i.d.; output is NOT clipped."""
    a = _require_image(img)
    if spec.sigma == 0.0:
        return a.copy()
    return a + spec.sigma * gaussian_field(a.shape, spec.seed)


# ---------------------------------------------------------------------------
# Fidelity metrics on the [0, 1] scale (peak = 1.0, i.e. 255 on byte scale).


def mse(a: np.ndarray, b: np.ndarray) -> float:
    x = _require_image(a)
    y = _require_image(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) in dB; identical images report +inf."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)

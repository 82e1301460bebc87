# Deterministic synthetic test images.
#
# Standard photographic test sets cannot be redistributed here, so the
# benchmark and test suites run on these generated stand-ins. The textured
# set mimics natural-image statistics: broad shading gradients and smooth
# relief (which reward heavy averaging) carrying gentle aperiodic texture
# and a few edges (which create the diverse near-matches that patch filters
# trade in). The flat set is constant foreground on constant background.
# Everything is a pure function of the image size.
from __future__ import annotations

import numpy as np

from .image import gaussian_field
from .patches import patch_offsets


def _grid(size: int):
    ax = np.arange(size, dtype=np.float64)
    return np.meshgrid(ax, ax, indexing="ij")


def _rescale(a: np.ndarray, lo: float = 0.08, hi: float = 0.92) -> np.ndarray:
    amin, amax = float(a.min()), float(a.max())
    if amax == amin:
        return np.full_like(a, (lo + hi) / 2.0)
    return lo + (hi - lo) * (a - amin) / (amax - amin)


def _box_mean(a: np.ndarray, side: int) -> np.ndarray:
    """side x side periodic moving average (true box filter)."""
    out = np.zeros_like(a)
    for qr, qc in patch_offsets(side):
        out += np.roll(a, (-qr, -qc), axis=(0, 1))
    return out / (side * side)


def _relief(size: int, seed: int, side: int = 15, passes: int = 2) -> np.ndarray:
    """Smooth random relief: repeatedly box-filtered noise, unit std."""
    g = gaussian_field((size, size), seed)
    for _ in range(passes):
        g = _box_mean(g, side)
    return g / max(float(g.std()), 1e-12)


def _grain(size: int, seed: int, lo: int = 3, hi: int = 9) -> np.ndarray:
    """Band-pass texture: difference of two box scales, unit std."""
    g = gaussian_field((size, size), seed)
    t = _box_mean(g, lo) - _box_mean(g, hi)
    return t / max(float(t.std()), 1e-12)


def hills(size: int = 128) -> np.ndarray:
    return _rescale(_relief(size, 61) + 0.16 * _grain(size, 62))


def dome(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    s = size / 128.0
    bump = np.exp(-((rr - 50 * s) ** 2 + (cc - 70 * s) ** 2) / (2 * (42 * s) ** 2))
    ripple = 0.1 * np.sin(2 * np.pi * (cc + 8 * s * _relief(size, 64)) / (9 * s))
    return _rescale(2.2 * bump + 0.9 * _relief(size, 63) + ripple)


def dunes(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    s = size / 128.0
    long_waves = np.sin(2 * np.pi * (rr + 10 * s * _relief(size, 65)) / (44 * s))
    ripples = 0.15 * np.sin(2 * np.pi * (cc + 6 * s * _relief(size, 67)) / (8 * s))
    return _rescale(long_waves + 0.7 * _relief(size, 66) + ripples * (rr / size))


def valley(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    ramp = (rr + 0.6 * cc) / size
    seam = _grain(size, 69, 3, 7) * np.exp(-(((rr / size) - 0.63) / 0.24) ** 2)
    return _rescale(2.0 * ramp + 1.0 * _relief(size, 68) + 0.2 * seam)


def lagoon(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    s = size / 128.0
    pool = np.exp(-((rr - 90 * s) ** 2 + (cc - 40 * s) ** 2) / (2 * (50 * s) ** 2))
    chop = _grain(size, 71, 1, 5) * np.exp(-(((rr / size) - 0.23) / 0.2) ** 2)
    return _rescale(1.8 * pool + 0.9 * _relief(size, 70) + 0.18 * chop)


def town(size: int = 128) -> np.ndarray:
    """Shaded blocks on a sky gradient over a textured ground strip."""
    rr, cc = _grid(size)
    s = size / 128.0
    img = 1.3 - 0.7 * rr / size + 0.5 * _relief(size, 72)
    for r0, r1, c0, c1, v in [
        (66, 108, 14, 44, -0.4),
        (58, 108, 52, 86, -0.15),
        (74, 108, 94, 120, -0.55),
    ]:
        sl = np.s_[int(r0 * s) : int(r1 * s), int(c0 * s) : int(c1 * s)]
        img[sl] += v + 0.15 * (cc[sl] - c0 * s) / ((c1 - c0) * s)
    ground = slice(int(108 * s), size)
    img[ground, :] += 0.35 * _grain(size, 73)[ground, :]
    return _rescale(img)


def vineyard(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    s = size / 128.0
    rows_of_vines = np.sin(2 * np.pi * (0.7 * cc + 0.7 * rr + 12 * s * _relief(size, 75)) / (12 * s))
    return _rescale(2.4 * _relief(size, 74) + 0.5 * rows_of_vines)


def pond(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    s = size / 128.0
    basin = ((rr - 64 * s) ** 2 + (cc - 64 * s) ** 2) / (5000.0 * s * s)
    shimmer = _grain(size, 77, 1, 5) * np.exp(-(((rr / size) - 0.7) / 0.22) ** 2)
    return _rescale(basin + 1.6 * _relief(size, 76) + 0.22 * shimmer)


def slopes(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    s = size / 128.0
    terraces = 0.22 * np.sin(2 * np.pi * (rr + 9 * s * _relief(size, 79)) / (10 * s))
    mask = np.exp(-(((cc / size) - 0.7) / 0.27) ** 2)
    return _rescale(2.0 * np.maximum(rr, cc) / size + 1.4 * _relief(size, 78) + terraces * mask)


def mounds(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    bumps = sum(
        np.exp(-((rr - fr * size) ** 2 + (cc - fc * size) ** 2) / (2 * (w * size) ** 2))
        for fr, fc, w in [(0.25, 0.3, 0.2), (0.7, 0.75, 0.25), (0.8, 0.2, 0.14)]
    )
    return _rescale(2.0 * bumps + 0.8 * _relief(size, 80) + 0.12 * _grain(size, 81, 3, 7))


def textured_set(size: int = 128) -> dict[str, np.ndarray]:
    """Ten deterministic textured scenes used as the benchmark image set."""
    return {
        "hills": hills(size),
        "dome": dome(size),
        "dunes": dunes(size),
        "valley": valley(size),
        "lagoon": lagoon(size),
        "town": town(size),
        "vineyard": vineyard(size),
        "pond": pond(size),
        "slopes": slopes(size),
        "mounds": mounds(size),
    }


def house_like(size: int = 128) -> np.ndarray:
    """Piecewise-smooth building scene: sky, shaded facade, roof, windows."""
    rr, cc = _grid(size)
    s = size / 128.0
    img = 0.78 - 0.1 * rr / size + 0.04 * _relief(size, 11)

    def box(r0, r1, c0, c1, value):
        img[int(r0 * s) : int(r1 * s), int(c0 * s) : int(c1 * s)] = value

    facade = np.s_[int(48 * s) : int(120 * s), int(20 * s) : int(104 * s)]
    img[facade] = 0.47 + 0.06 * (cc[facade] / size)
    roof = (rr >= 24 * s) & (rr < 48 * s) & (np.abs(cc - 62 * s) <= (rr - 18 * s) * 1.15)
    img[roof] = 0.25
    for wr in (58, 84):
        for wc in (30, 56, 82):
            box(wr, wr + 14, wc, wc + 12, 0.15)
    box(100, 120, 56, 72, 0.3)
    box(120, 128, 0, 128, 0.55)
    return np.clip(img, 0.02, 0.98)


def speckle_texture(size: int = 128, seed: int = 314159) -> np.ndarray:
    """High-frequency fur-like texture (hard case: little smooth content)."""
    return _rescale(_box_mean(gaussian_field((size, size), seed), 3))


def disk_flat(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    inside = np.hypot(rr - size / 2.0, cc - size / 2.0) <= size * 0.28
    out = np.full((size, size), 0.8)
    out[inside] = 0.3
    return out


def square_flat(size: int = 128) -> np.ndarray:
    out = np.full((size, size), 0.25)
    q = size // 4
    out[q : size - q, q : size - q] = 0.7
    return out


def wedge_flat(size: int = 128) -> np.ndarray:
    rr, cc = _grid(size)
    out = np.full((size, size), 0.75)
    out[cc > rr * 1.4 + size * 0.1] = 0.35
    return out


def flat_two_region_set(size: int = 128) -> dict[str, np.ndarray]:
    """Constant foreground on constant background, no texture anywhere."""
    return {
        "disk": disk_flat(size),
        "square": square_flat(size),
        "wedge": wedge_flat(size),
    }

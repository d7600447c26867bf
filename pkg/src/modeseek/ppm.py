"""Dependency-free binary PPM (P6) heatmap rendering.

Conversion to PNG is left to external tooling (the companion trainer package
bundles a converter script).
"""

import numpy as np

__all__ = ["write_ppm", "colorize"]

# compact viridis-like ramp, interpolated linearly
_STOPS = np.array([
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
], dtype=float)


def colorize(values: np.ndarray, vmin=None, vmax=None) -> np.ndarray:
    """Map a 2D scalar array to uint8 RGB via the built-in color ramp."""
    v = np.asarray(values, dtype=float)
    lo = np.nanmin(v) if vmin is None else vmin
    hi = np.nanmax(v) if vmax is None else vmax
    if hi <= lo:
        hi = lo + 1.0
    t = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    pos = t * (len(_STOPS) - 1)
    i0 = np.clip(pos.astype(int), 0, len(_STOPS) - 2)
    frac = (pos - i0)[..., None]
    rgb = _STOPS[i0] * (1 - frac) + _STOPS[i0 + 1] * frac
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def write_ppm(path, values: np.ndarray, vmin=None, vmax=None, flip_y=True):
    """Write a scalar field as a binary P6 image (row 0 at the top).

    flip_y renders increasing y upward, matching plot conventions.
    """
    rgb = colorize(values, vmin, vmax)
    if flip_y:
        rgb = rgb[::-1]
    ny, nx = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{nx} {ny}\n255\n".encode())
        f.write(rgb.tobytes())

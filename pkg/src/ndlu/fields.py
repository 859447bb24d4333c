"""Coefficient fields for the PDE assembly: constants, 2x2 tensors, and the
thresholded random high-contrast field."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = ["CoefficientField", "make_contrast_field"]


class CoefficientField:
    """Scalar or 2x2-tensor coefficient sampled at points of the domain."""

    def __init__(self, kind, eval_fn, params=None):
        self.kind = kind
        self._eval = eval_fn
        self.params = params or {}

    def __call__(self, points):
        return self._eval(np.asarray(points, dtype=np.float64))

    @property
    def is_tensor(self):
        return self.kind == "tensor"

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", lambda p: np.full(len(p), float(value)),
                   {"value": value})

    @classmethod
    def tensor(cls, d):
        d = np.asarray(d, dtype=np.float64)
        if d.shape != (2, 2):
            raise ConfigError("tensor coefficient must be 2x2")
        return cls("tensor", lambda p: d, {"d": d})


def make_contrast_field(rho, seed, smoothing_radius=0.1,
                        bbox=(-1.0, 1.0, 0.0, 1.0)):
    """Two-valued field: rho where a smoothed noise field exceeds 1/2, else 1/rho.

    Noise is white on a coarse lattice of spacing smoothing_radius, box-blurred
    once with a 3x3 stencil, then interpolated bilinearly; threshold at 0.5.
    rho = 1 yields the constant-1 field. Deterministic per seed.
    """
    if rho < 1:
        raise ConfigError("contrast rho must be >= 1")
    if rho == 1:
        return CoefficientField.constant(1.0)

    x0, x1, y0, y1 = bbox
    nx = max(4, int(np.ceil((x1 - x0) / smoothing_radius)) + 1)
    ny = max(4, int(np.ceil((y1 - y0) / smoothing_radius)) + 1)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), nx, ny]))
    noise = rng.random((ny, nx))

    # one pass of a 3x3 box blur with edge replication
    padded = np.pad(noise, 1, mode="edge")
    smooth = np.zeros_like(noise)
    for dy in range(3):
        for dx in range(3):
            smooth += padded[dy : dy + ny, dx : dx + nx]
    smooth /= 9.0

    lo, hi = 1.0 / rho, float(rho)

    def eval_fn(points):
        gx = np.clip((points[:, 0] - x0) / (x1 - x0) * (nx - 1), 0, nx - 1)
        gy = np.clip((points[:, 1] - y0) / (y1 - y0) * (ny - 1), 0, ny - 1)
        ix = np.minimum(gx.astype(np.int64), nx - 2)
        iy = np.minimum(gy.astype(np.int64), ny - 2)
        fx, fy = gx - ix, gy - iy
        v = (
            smooth[iy, ix] * (1 - fx) * (1 - fy)
            + smooth[iy, ix + 1] * fx * (1 - fy)
            + smooth[iy + 1, ix] * (1 - fx) * fy
            + smooth[iy + 1, ix + 1] * fx * fy
        )
        return np.where(v > 0.5, hi, lo)

    return CoefficientField("contrast", eval_fn,
                            {"rho": rho, "seed": seed,
                             "smoothing_radius": smoothing_radius})

"""Local binary pattern texture maps.

The trainable path uses a sigmoid relaxation of the classic 3x3 code so
the map is differentiable in the input image; the hard-threshold variant
exists only as a test oracle. Neighbors are taken at radius 1, clockwise
from the top-left, and the 8-bit code is divided by 255 so the map lives
in [0,1] like its sibling channels.

Borders are handled by mirror padding (reflection about the edge, output
stays H x W). Replicating the edge pixel instead would make every border
pixel compare against a copy of itself, forcing a tie whose soft/hard
conventions (0.5 per bit vs 1) can never agree.
"""

import numpy as np

from . import engine
from .engine import Tensor

# clockwise from the top-left neighbor; bit k carries weight 2**k
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _padded(g):
    if g.ndim != 2 or g.shape[0] < 2 or g.shape[1] < 2:
        raise ValueError(f"LBP expects an HxW image with H,W >= 2, got {g.shape}")
    return np.pad(g, 1, mode="reflect")


def _neighbor_views(padded, h, w):
    for di, dj in NEIGHBOR_OFFSETS:
        yield padded[1 + di:1 + di + h, 1 + dj:1 + dj + w]


def soft_lbp(gray, tau=0.05):
    """Differentiable LBP map: sum_k sigmoid((g_k - g_c)/tau) * 2^k / 255.

    Smaller tau sharpens toward the hard code; at exact value ties each bit
    contributes 0.5 regardless of tau.
    """
    if tau <= 0:
        raise ValueError(f"soft_lbp requires tau > 0, got {tau}")
    g = gray.data if isinstance(gray, Tensor) else np.asarray(gray, dtype=np.float64)
    h, w = g.shape if g.ndim == 2 else (0, 0)
    padded = _padded(g)

    sigmas = []
    out = np.zeros_like(g)
    for k, nb in enumerate(_neighbor_views(padded, h, w)):
        s = engine._stable_sigmoid((nb - g) / tau)
        sigmas.append(s)
        out += s * (2 ** k)
    out /= 255.0

    if not isinstance(gray, Tensor):
        return Tensor(out)

    def bwd(grad_out):
        gg = np.zeros_like(g)
        gpad = np.zeros((h + 2, w + 2), dtype=g.dtype)
        for k, (di, dj) in enumerate(NEIGHBOR_OFFSETS):
            s = sigmas[k]
            coef = grad_out * s * (1.0 - s) * ((2 ** k) / (255.0 * tau))
            gg -= coef                                   # d/d(center)
            gpad[1 + di:1 + di + h, 1 + dj:1 + dj + w] += coef  # d/d(neighbor source)
        # fold mirror-padded borders back onto their reflected source pixels
        inner = gpad[1:-1, 1:-1].copy()
        inner[1, :] += gpad[0, 1:-1]
        inner[-2, :] += gpad[-1, 1:-1]
        inner[:, 1] += gpad[1:-1, 0]
        inner[:, -2] += gpad[1:-1, -1]
        inner[1, 1] += gpad[0, 0]
        inner[1, -2] += gpad[0, -1]
        inner[-2, 1] += gpad[-1, 0]
        inner[-2, -2] += gpad[-1, -1]
        return (gg + inner,)

    return engine.custom_op(out, (gray,), bwd, "soft_lbp")


def hard_lbp_oracle(gray):
    """Classic thresholded LBP (bit k set iff neighbor >= center), code/255.

    Non-differentiable; test oracle for the tau -> 0 limit of soft_lbp.
    """
    g = gray.data if isinstance(gray, Tensor) else np.asarray(gray, dtype=np.float64)
    padded = _padded(g)
    h, w = g.shape
    code = np.zeros_like(g)
    for k, nb in enumerate(_neighbor_views(padded, h, w)):
        code += (nb >= g) * (2 ** k)
    return Tensor(code / 255.0)

"""Deterministic noise-image control contexts.

The noise context replaces the real image with Gaussian pixels at the same
resolution: structurally a valid image, semantically empty. Pixels are i.i.d.
per channel with mean 0.5 and sigma 0.25 on the [0, 1] scale, clipped to
[0, 1], then encoded as PNG so the payload is lossless and bit-stable.

Generation is a pure function of (run seed, resolution): the same seed always
yields the same bytes, which keeps probe runs reproducible and resumable.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from ..errors import PreconditionError
from .types import ContextKind, VisualContext

NOISE_MEAN = 0.5
NOISE_SIGMA = 0.25


def noise_pixels(run_seed: int, width: int, height: int) -> np.ndarray:
    """Clipped-Gaussian RGB pixel array in [0, 1], shape (height, width, 3)."""
    rng = np.random.default_rng(np.random.SeedSequence([run_seed & 0xFFFFFFFF, width, height]))
    pixels = rng.normal(NOISE_MEAN, NOISE_SIGMA, size=(height, width, 3))
    return np.clip(pixels, 0.0, 1.0)


def make_noise_context(real: VisualContext, run_seed: int = 0) -> VisualContext:
    """Build the noise counterpart of a real image context.

    Resolution is copied from ``real``; payload is a PNG of seeded Gaussian
    noise. Raises :class:`PreconditionError` for non-real inputs.
    """
    if real.kind is not ContextKind.REAL:
        raise PreconditionError(f"noise context requires a real context, got {real.kind.value}")
    assert real.resolution is not None
    width, height = real.resolution
    pixels = noise_pixels(run_seed, width, height)
    img = Image.fromarray(np.round(pixels * 255.0).astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return VisualContext(
        kind=ContextKind.NOISE,
        image_payload=buf.getvalue(),
        media_type="image/png",
        resolution=(width, height),
    )

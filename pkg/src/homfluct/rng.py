"""Counter-based Gaussian streams for reproducible parallel sampling.

Every consumer draws from a Philox stream addressed by ``(seed, stream)``;
position ``i`` of a stream always yields the same 64-bit word, so value ``i``
(one word per variate, inverse-CDF transform) is a pure function of
``(seed, stream, i)``.  Fields sampled this way are bit-for-bit reproducible
regardless of how the work is scheduled.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["gaussian_stream", "uniform_stream"]


def _bit_generator(seed: int, stream: tuple[int, ...]):
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Philox(ss)


def uniform_stream(seed: int, n: int, stream: tuple[int, ...] = ()) -> np.ndarray:
    """First ``n`` uniforms in (0, 1) of the (seed, stream) Philox stream."""
    raw = _bit_generator(seed, stream).random_raw(int(n))
    # 53-bit mantissa, offset keeps values strictly inside (0, 1)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def gaussian_stream(seed: int, n: int, stream: tuple[int, ...] = ()) -> np.ndarray:
    """First ``n`` i.i.d. standard normals of the (seed, stream) stream."""
    return ndtri(uniform_stream(seed, n, stream))

"""Counter-based random substreams for reproducible Monte Carlo.

Every sampler draw gets its own generator keyed by ``(seed, stream, index)``.
The key is a pure function of those three integers, so draw ``index`` sees
identical randomness whether the sampler runs sequentially, chunked, or on a
thread pool — parallel and sequential execution cannot diverge.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep the sampling phases on disjoint Philox keys.
PILOT_STREAM = 0
MAIN_STREAM = 1
PREDICTIVE_STREAM = 2

_MASK64 = (1 << 64) - 1
_INDEX_BITS = 56


def substream(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent generator for one draw of one sampling phase."""
    if index < 0 or index >= (1 << _INDEX_BITS):
        raise ValueError(f"draw index out of range: {index}")
    if stream < 0 or stream >= (1 << (64 - _INDEX_BITS)):
        raise ValueError(f"stream tag out of range: {stream}")
    key = np.array(
        [seed & _MASK64, (stream << _INDEX_BITS) | index], dtype=np.uint64
    )
    return np.random.Generator(np.random.Philox(key=key))

"""Counter-based random streams.

Every stochastic component draws from a Philox generator keyed by
(seed, stream tag), so each (seed, step, draw position) triple maps to a
fixed value regardless of execution order or parallel schedule.  Stream
tags partition the key space:

  step m of the collision loop      tag = m
  initial ensemble sampling         tag = INIT_TAG
  adjoint nonlocal sampling, slice m  tag = ADJOINT_TAG + m
"""

from __future__ import annotations

import numpy as np

INIT_TAG = 1 << 62
ADJOINT_TAG = (1 << 62) + (1 << 61)

_MASK = (1 << 64) - 1


def stream(seed: int, tag: int) -> np.random.Generator:
    """Generator for the (seed, tag) stream."""
    return np.random.Generator(np.random.Philox(key=[seed & _MASK, tag & _MASK]))

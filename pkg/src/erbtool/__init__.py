"""Reward-distribution-preserving compression of experience replay buffers.

Modules: :mod:`replay` (buffers and the ERB-JSONL format), :mod:`cluster1d`
(1-D k-means), :mod:`compressors`, :mod:`gridworld`, :mod:`agent` (linear
Q-learning with replay across tasks), :mod:`metrics` and :mod:`cli`.
"""

from .compressors import CompressionSpec, compress, unpack
from .replay import CompressedERB, Experience, ReplayBuffer, load, save

__all__ = ["CompressedERB", "CompressionSpec", "Experience", "ReplayBuffer", "compress", "load", "save", "unpack"]
__version__ = "0.1.0"

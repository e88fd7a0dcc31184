"""Deterministic random stream derivation.

Every stochastic choice in a run (camera poses, diffusion timesteps, noise
draws, extension sampling, seg-logit init) pulls from a stream derived from
the single 64-bit run seed plus a label path. Streams are independent
counter-based Philox generators, so any stage of a run can be replayed
without replaying the draws that preceded it.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream"]


def _path_words(path: tuple) -> tuple[int, ...]:
    """Map a label path to uint32 words for SeedSequence's spawn key."""
    words: list[int] = []
    for part in path:
        if isinstance(part, (int, np.integer)):
            if part < 0:
                raise ValueError(f"negative path element: {part!r}")
            words.extend((int(part) & 0xFFFFFFFF, (int(part) >> 32) & 0xFFFFFFFF))
        elif isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            words.extend(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
        else:
            raise TypeError(f"stream path elements must be str or int, got {type(part)!r}")
    return tuple(words)


def stream(seed: int, *path: str | int) -> np.random.Generator:
    """Return the generator for (seed, *path).

    The same (seed, path) always yields an identical generator, and distinct
    paths yield statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=_path_words(path))
    return np.random.Generator(np.random.Philox(seq))

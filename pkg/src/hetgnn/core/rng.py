"""Counter-based random streams keyed by (seed, labels...).

Every stochastic site asks for its own generator instead of sharing one, so
results do not depend on call order or on how work is split across threads.
"""

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def _label_words(label) -> list[int]:
    if isinstance(label, np.integer):
        label = int(label)
    h = fnv1a64(repr(label).encode("utf-8"))
    return [h & 0xFFFFFFFF, h >> 32]


def stream(seed: int, *labels) -> np.random.Generator:
    """Returns a Philox generator unique to `seed` and the label path."""
    words: list[int] = []
    for label in labels:
        words.extend(_label_words(label))
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(words))
    return np.random.Generator(np.random.Philox(seq))

"""
Random Stream Factory
Derives independent, order-free random streams from one root seed.
"""

import hashlib
from typing import Dict, Tuple

import numpy as np


def _purpose_words(purpose: str) -> Tuple[int, int]:
    digest = hashlib.sha256(purpose.encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'little'), int.from_bytes(digest[4:8], 'little')


class StreamFactory:
    """Counter-based streams keyed by (root seed, purpose, keys)

    The same (purpose, keys) always yields the same stream, no matter
    which process asks for it or in what order, so replications can be
    scheduled in parallel without changing any draw.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)

    def seed_sequence(self, purpose: str, *keys: int) -> np.random.SeedSequence:
        entropy = [self.seed & 0xFFFFFFFF, (self.seed >> 32) & 0xFFFFFFFF, *_purpose_words(purpose)]
        entropy.extend(int(k) & 0xFFFFFFFF for k in keys)
        return np.random.SeedSequence(entropy)

    def generator(self, purpose: str, *keys: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence(purpose, *keys)))

    def child(self, purpose: str, *keys: int) -> 'StreamFactory':
        """A factory rooted at a derived seed, for handing to a sub-experiment"""
        state = self.seed_sequence(purpose, *keys).generate_state(2, dtype=np.uint32)
        return StreamFactory(int(state[0]) | (int(state[1]) << 32))

    def __getstate__(self) -> Dict[str, int]:
        return {'seed': self.seed}

    def __setstate__(self, state: Dict[str, int]):
        self.seed = state['seed']

    def __repr__(self) -> str:
        return f"StreamFactory(seed={self.seed})"

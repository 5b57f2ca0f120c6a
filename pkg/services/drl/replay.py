from dataclasses import dataclass

import numpy as np


@dataclass
class TransitionBatch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.a)


class ReplayBuffer:
    """定长环形经验池，写满后覆盖最旧的转移"""

    def __init__(self, capacity: int, state_dim: int = 3):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros(capacity)
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, state_dim))
        self._done = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a: float, r: float, s2, done: bool) -> None:
        i = self._next
        self._s[i] = s
        self._a[i] = a
        self._r[i] = r
        self._s2[i] = s2
        self._done[i] = done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if batch > self.size:
            raise ValueError(f"cannot draw {batch} distinct transitions from {self.size}")
        return rng.choice(self.size, size=batch, replace=False)

    def sample(self, batch: int, rng: np.random.Generator) -> TransitionBatch:
        idx = self.sample_indices(batch, rng)
        return TransitionBatch(
            s=self._s[idx], a=self._a[idx], r=self._r[idx], s2=self._s2[idx], done=self._done[idx],
        )

"""
Sampling boxes and reproducible random streams.
"""
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySamplingBox


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for (seed, stream...) so parallel workers never share state."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


@dataclass(frozen=True)
class SamplingBox:
    """Axis-aligned region of phase space: q_i in [q_low, q_high], p_i in [p_low, p_high]."""
    q_low: float = 0.2
    q_high: float = 1.5
    p_low: float = -1.0
    p_high: float = 1.0

    def __post_init__(self):
        if not (self.q_low < self.q_high and self.p_low < self.p_high):
            raise EmptySamplingBox(
                f"empty sampling box q=[{self.q_low}, {self.q_high}] p=[{self.p_low}, {self.p_high}]"
            )

    def sample(self, N: int, count: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform points of shape (count, 2N) laid out as [q..., p...]."""
        qs = rng.uniform(self.q_low, self.q_high, size=(count, N))
        ps = rng.uniform(self.p_low, self.p_high, size=(count, N))
        return np.hstack([qs, ps])

    def contains(self, x: Sequence[float]) -> bool:
        arr = np.asarray(x, dtype=float)
        N = arr.size // 2
        qs, ps = arr[:N], arr[N:]
        return bool(
            np.all((qs >= self.q_low) & (qs <= self.q_high))
            and np.all((ps >= self.p_low) & (ps <= self.p_high))
        )

    def center(self, N: int) -> np.ndarray:
        qs = np.full(N, 0.5 * (self.q_low + self.q_high))
        ps = np.full(N, 0.5 * (self.p_low + self.p_high))
        return np.concatenate([qs, ps])

    def with_q(self, q_low: Optional[float] = None, q_high: Optional[float] = None) -> "SamplingBox":
        return replace(
            self,
            q_low=self.q_low if q_low is None else q_low,
            q_high=self.q_high if q_high is None else q_high,
        )

    def with_p(self, p_low: Optional[float] = None, p_high: Optional[float] = None) -> "SamplingBox":
        return replace(
            self,
            p_low=self.p_low if p_low is None else p_low,
            p_high=self.p_high if p_high is None else p_high,
        )

    @classmethod
    def from_config(cls, config) -> "SamplingBox":
        return cls(config.q_low, config.q_high, config.p_low, config.p_high)


DEFAULT_BOX = SamplingBox()

"""Per-run random state, split per consumer.

One seed produces independent generators for initialization, dropout, and
data shuffling, so toggling dropout (or reshuffling) never perturbs the
weight initialization stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RunRng:
    init: np.random.Generator
    dropout: np.random.Generator
    shuffle: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RunRng":
        children = np.random.SeedSequence(seed).spawn(3)
        return cls(
            init=np.random.default_rng(children[0]),
            dropout=np.random.default_rng(children[1]),
            shuffle=np.random.default_rng(children[2]),
        )

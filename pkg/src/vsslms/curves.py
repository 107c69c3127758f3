"""Learning-curve container shared by the theory engine and the simulator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def from_db(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


@dataclass(frozen=True, eq=False)
class LearningCurve:
    iters: np.ndarray
    msd_db: np.ndarray
    emse_db: np.ndarray
    mu_mean: np.ndarray
    source: str
    rule: str

    def __post_init__(self):
        n = len(self.iters)
        if not (len(self.msd_db) == len(self.emse_db) == len(self.mu_mean) == n):
            raise ValueError("learning-curve series must have equal lengths")
        if self.source not in ("theory", "simulation"):
            raise ValueError(f"source must be 'theory' or 'simulation', got {self.source!r}")

    def __len__(self):
        return len(self.iters)

    @property
    def msd(self):
        return from_db(self.msd_db)

    @classmethod
    def from_linear(cls, iters, msd, emse, mu_mean, source, rule):
        return cls(np.asarray(iters), to_db(np.asarray(msd, dtype=float)),
                   to_db(np.asarray(emse, dtype=float)), np.asarray(mu_mean, dtype=float),
                   source, rule)

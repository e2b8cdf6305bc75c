"""Log-odds occupancy arithmetic.

Cells accumulate ``ln(p / (1 - p))`` evidence: a hit adds ``l_hit``, a
traversal adds ``l_miss`` (negative).  Values are clamped to
``[l_min, l_max]`` so belief can be revised after the scene changes.
Classification thresholds are kept in probability space.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


def logodds(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    return math.log(p / (1.0 - p))


def prob(l: float) -> float:
    # shares prob_array's arithmetic so scalar and vector classification agree
    return float(prob_array(np.float64(l)))


def prob_array(l: np.ndarray) -> np.ndarray:
    """Numerically stable logistic, elementwise."""
    l = np.asarray(l, dtype=np.float64)
    e = np.exp(-np.abs(l))
    return np.where(l >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Occupancy(enum.Enum):
    OCCUPIED = "occupied"
    FREE = "free"
    UNKNOWN = "unknown"


_EPS = 1e-6


@dataclass(frozen=True)
class OccupancyParams:
    """Sensor model and classification thresholds.

    Defaults: ``p_hit = 0.7``, ``p_miss = 0.4``, clamp ``[-2, 3.5]`` and
    thresholds one micro-unit either side of 0.5.
    """

    l_hit: float = logodds(0.7)
    l_miss: float = logodds(0.4)
    l_min: float = -2.0
    l_max: float = 3.5
    phi_occ: float = 0.5 + _EPS
    phi_free: float = 0.5 - _EPS

    def __post_init__(self):
        if not self.l_hit > 0:
            raise ValueError("l_hit must be positive")
        if not self.l_miss < 0:
            raise ValueError("l_miss must be negative")
        if not self.l_min < 0 < self.l_max:
            raise ValueError("need l_min < 0 < l_max")
        if not 0 < self.phi_free < self.phi_occ < 1:
            raise ValueError("need 0 < phi_free < phi_occ < 1")

    @classmethod
    def from_probabilities(cls, p_hit: float = 0.7, p_miss: float = 0.4, **kw) -> OccupancyParams:
        return cls(l_hit=logodds(p_hit), l_miss=logodds(p_miss), **kw)


def update_hit(v: float, params: OccupancyParams) -> float:
    return min(v + params.l_hit, params.l_max)


def update_miss(v: float, params: OccupancyParams) -> float:
    return max(v + params.l_miss, params.l_min)


def classify(v: float, observed: bool, params: OccupancyParams) -> Occupancy:
    if not observed:
        return Occupancy.UNKNOWN
    p = prob(v)
    if p > params.phi_occ:
        return Occupancy.OCCUPIED
    if p < params.phi_free:
        return Occupancy.FREE
    return Occupancy.UNKNOWN


def occupied_mask(values: np.ndarray, params: OccupancyParams) -> np.ndarray:
    """Vectorized ``classify(...) is OCCUPIED`` for observed voxels."""
    return prob_array(values) > params.phi_occ


def free_mask(values: np.ndarray, params: OccupancyParams) -> np.ndarray:
    return prob_array(values) < params.phi_free

"""Latin hypercube designs and the nested two-fidelity design."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc


@dataclass(frozen=True)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("lower must be strictly below upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> BoxDomain:
        return cls(np.zeros(d), np.ones(d))

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def from_unit(self, x: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(x) * self.width

    def to_unit(self, u: np.ndarray) -> np.ndarray:
        return (np.asarray(u) - self.lower) / self.width


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def lhs(n: int, domain: BoxDomain, seed=None) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in ``domain``.

    Each coordinate has exactly one point in each of the ``n`` equal-width
    strata; positions inside a stratum are uniform.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    sampler = qmc.LatinHypercube(d=domain.d, seed=_rng(seed))
    return domain.from_unit(sampler.random(n))


@dataclass(frozen=True)
class NestedDoe:
    """HF design ``u1`` and LF design ``u2`` with ``u1`` forming the first rows of ``u2``."""

    u1: np.ndarray
    u2: np.ndarray
    seed: int | None = None

    @property
    def n1(self) -> int:
        return self.u1.shape[0]

    @property
    def n2(self) -> int:
        return self.u2.shape[0]


def remove_nearest(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Drop, for each target in turn, the closest remaining point.

    Distances are Euclidean; ties go to the lowest remaining row index.
    Returns the surviving points in their original order.
    """
    keep = np.ones(points.shape[0], dtype=bool)
    for t in targets:
        d2 = np.sum((points - t) ** 2, axis=1)
        d2[~keep] = np.inf
        keep[int(np.argmin(d2))] = False
    return points[keep]


def nested_lhs(n1: int, n2: int, domain: BoxDomain, seed=None) -> NestedDoe:
    """Nested design with ``u1`` (n1 rows) contained in ``u2`` (n2 rows).

    A second LHS of ``n2`` points is drawn and, for each HF point, its
    nearest remaining neighbour is removed; the survivors are appended to
    ``u1``. Distances are measured in the unit-scaled box.
    """
    if n1 < 1:
        raise ValueError(f"n1 must be >= 1, got {n1}")
    if n2 < n1:
        raise ValueError(f"n2 ({n2}) must be >= n1 ({n1})")
    rng = _rng(seed)
    u1 = lhs(n1, domain, rng)
    if n2 == n1:
        return NestedDoe(u1, u1.copy(), seed if isinstance(seed, (int, np.integer)) else None)
    x2 = qmc.LatinHypercube(d=domain.d, seed=rng).random(n2)
    rest = remove_nearest(x2, domain.to_unit(u1))
    u2 = np.vstack([u1, domain.from_unit(rest)])
    return NestedDoe(u1, u2, seed if isinstance(seed, (int, np.integer)) else None)

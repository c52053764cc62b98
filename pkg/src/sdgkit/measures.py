"""Distributions over finite domains, sampling and the integral probability metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sdgkit.concept import ConceptClass, symmetrize

NEGATIVE_TOL = 1e-12
TIE_TOL = 1e-12


class Distribution:
    """Probability vector over ``range(n_points)``; renormalized on construction."""

    __slots__ = ("weights",)

    def __init__(self, weights):
        w = np.array(weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValueError("distribution needs at least one point")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < -NEGATIVE_TOL):
            raise ValueError(f"negative weight {w.min():.3g}")
        w = np.clip(w, 0.0, None)
        total = w.sum()
        if total <= 0:
            raise ValueError("weights sum to zero")
        w = w / total
        w.setflags(write=False)
        self.weights = w

    @classmethod
    def uniform(cls, n):
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point(cls, n, index):
        w = np.zeros(n)
        w[index] = 1.0
        return cls(w)

    @property
    def n_points(self):
        return self.weights.size

    def support(self):
        return np.flatnonzero(self.weights > 0)

    def isclose(self, other, tol=1e-12):
        return self.n_points == other.n_points and bool(
            np.max(np.abs(self.weights - other.weights)) <= tol
        )

    def tolist(self):
        return [float(v) for v in self.weights]

    def __repr__(self):
        return f"Distribution({np.array2string(self.weights, precision=4)})"


@dataclass(frozen=True)
class Sample:
    points: np.ndarray
    n_points: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1)
        if pts.size and (pts.min() < 0 or pts.max() >= self.n_points):
            raise IndexError("sample point outside the domain")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.size

    def head(self, k):
        return Sample(self.points[:k], self.n_points)


@dataclass(frozen=True)
class LabeledSample:
    points: np.ndarray
    labels: np.ndarray
    n_points: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if pts.size != labels.size:
            raise ValueError("points and labels differ in length")
        if pts.size and (pts.min() < 0 or pts.max() >= self.n_points):
            raise IndexError("sample point outside the domain")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be bits")
        pts.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.points.size

    def unlabeled(self):
        return Sample(self.points, self.n_points)


def empirical(s: Sample) -> Distribution:
    if len(s) == 0:
        raise ValueError("empirical distribution of an empty sample")
    counts = np.bincount(s.points, minlength=s.n_points)
    return Distribution(counts / len(s))


def expect(p: Distribution, d) -> float:
    """p(d): mass that ``p`` puts on the points where ``d`` is 1."""
    d = np.asarray(d)
    if d.shape[-1] != p.n_points:
        raise ValueError(f"hypothesis has length {d.shape[-1]}, domain has {p.n_points}")
    return float(p.weights @ d.astype(float))


def expect_all(c: ConceptClass, p: Distribution) -> np.ndarray:
    """Vector of p(d) over the rows of ``c``."""
    if c.n_points != p.n_points:
        raise ValueError(f"class has {c.n_points} points, distribution {p.n_points}")
    return c.table.astype(float) @ p.weights


def first_argmax(values, tol=TIE_TOL):
    values = np.asarray(values)
    top = values.max()
    return int(np.flatnonzero(values >= top - tol)[0])


def ipm(c: ConceptClass, p: Distribution, q: Distribution):
    """Return ``(value, witness)`` with value = max_d p(d) - q(d).

    The maximum runs over the class closed under complement, so the value is
    the largest absolute gap.  ``witness`` indexes ``symmetrize(c)``; ties go to
    the lowest row.
    """
    sym = c if c.is_symmetric() else symmetrize(c)
    gaps = expect_all(sym, p) - expect_all(sym, q)
    witness = first_argmax(gaps)
    return max(float(gaps[witness]), 0.0), witness


def draw_sample(p: Distribution, m: int, rng) -> Sample:
    if m < 1:
        raise ValueError("sample size must be positive")
    cdf = np.cumsum(p.weights)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(m), side="right")
    return Sample(np.minimum(idx, p.n_points - 1), p.n_points)


def m_emp_bound(eps: float, delta: float, vc: int, constant: float = 8.0) -> int:
    """Sample size making the empirical measure eps-close in IPM w.p. 1-delta."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    return math.ceil(constant * (vc + math.log(1 / delta)) / eps**2)


def parse_distribution(text: str) -> Distribution:
    tokens = text.split()
    if not tokens:
        raise ValueError("distribution file is empty")
    return Distribution([float(t) for t in tokens])


def load_distribution(path) -> Distribution:
    return parse_distribution(Path(path).read_text())


def save_distribution(p: Distribution, path) -> None:
    Path(path).write_text(" ".join(repr(float(v)) for v in p.weights) + "\n")

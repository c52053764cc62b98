"""No-regret learners over the dual of a concept class.

The learner's hypotheses are the domain points x (columns of the class
table) and its queries are the distinguishers d (rows).  An example is a
finitely supported mixture over rows with a binary label; a point x pays
``|sum_d w_d * x(d) - y|`` on it.

Two engines share one interface:

* ``MWState``: multiplicative weights over the points.  Its predictor is the
  expectation under the normalized weights, so it is proper over mixtures of
  points and the mixture is exposed as ``Predictor.mix``.
* ``AgnosticSOAState``: Hedge over the experts "SOA with forced flips on a
  set of at most l rounds", where l is the dual Littlestone dimension.
  Experts with the same past (flips used, version space, loss) are grouped and
  counted exactly, and mixture examples are handled by tracking every
  realized sequence of rows ("worlds") with its probability, so the returned
  predictor is the exact expectation rather than a sampled one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from sdgkit.concept import BitLdim, ConceptClass, column_masks, dual_littlestone_dimension
from sdgkit.measures import Distribution, expect_all

WEIGHT_TOL = 1e-9
DEFAULT_EXPERT_CAP = 10**6
MW = "MW"
AGNOSTIC_SOA = "AgnosticSOA"


class HorizonExhausted(RuntimeError):
    pass


class ExpertCapError(ValueError):
    pass


# ---------------------------------------------------------------- examples and predictors


@dataclass(frozen=True)
class DistExample:
    """Label plus a mixture over rows, stored as ((row, weight), ...)."""

    support: tuple
    label: int

    def __post_init__(self):
        merged = {}
        for row, weight in self.support:
            row, weight = int(row), float(weight)
            if row < 0:
                raise IndexError(f"negative row index {row}")
            if weight < -WEIGHT_TOL:
                raise ValueError(f"negative support weight {weight}")
            merged[row] = merged.get(row, 0.0) + max(weight, 0.0)
        pairs = tuple(sorted((r, w) for r, w in merged.items() if w > 0))
        if not pairs:
            raise ValueError("support must be nonempty")
        total = sum(w for _, w in pairs)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"support weights sum to {total}, not 1")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "support", pairs)
        object.__setattr__(self, "label", int(self.label))

    @classmethod
    def dirac(cls, row, label):
        return cls(((row, 1.0),), label)

    @classmethod
    def from_distribution(cls, dist: Distribution, label):
        return cls(tuple((int(i), float(dist.weights[i])) for i in dist.support()), label)

    @property
    def rows(self):
        return np.array([r for r, _ in self.support], dtype=np.int64)

    @property
    def weights(self):
        return np.array([w for _, w in self.support])

    def average(self, values) -> float:
        """Linear extension: sum of weight * values[row]."""
        values = np.asarray(values, dtype=float)
        return float(self.weights @ values[self.rows])

    def to_dict(self):
        return {"support": [[r, w] for r, w in self.support], "label": self.label}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple((r, w) for r, w in data["support"]), data["label"])


@dataclass(frozen=True)
class Predictor:
    """Values in [0, 1] (to 1e-12) over the rows; ``mix`` is set when the
    values are an expectation under a distribution over points."""

    values: np.ndarray
    mix: Optional[Distribution] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("predictor values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, example: DistExample) -> float:
        return example.average(self.values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class RegretLedger:
    examples: tuple = ()
    predictions: tuple = ()

    def __len__(self):
        return len(self.examples)

    @property
    def losses(self):
        return tuple(abs(p - ex.label) for p, ex in zip(self.predictions, self.examples))

    def append(self, example: DistExample, prediction: float) -> "RegretLedger":
        return RegretLedger(self.examples + (example,), self.predictions + (float(prediction),))

    def to_jsonl(self) -> str:
        lines = []
        for t, (ex, pred) in enumerate(zip(self.examples, self.predictions), start=1):
            row = {"t": t, **ex.to_dict(), "prediction": pred, "loss": abs(pred - ex.label)}
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "RegretLedger":
        ledger = cls()
        for line in text.splitlines():
            if line.strip():
                row = json.loads(line)
                ledger = ledger.append(DistExample.from_dict(row), row["prediction"])
        return ledger


def comparator_losses(ledger: RegretLedger, c: ConceptClass) -> np.ndarray:
    """Cumulative loss of every fixed point x over the ledger's stream."""
    table = c.table.astype(float)
    total = np.zeros(c.n_points)
    for ex in ledger.examples:
        total += np.abs(ex.weights @ table[ex.rows] - ex.label)
    return total


def regret_of(ledger: RegretLedger, c: ConceptClass) -> float:
    if len(ledger) == 0:
        return 0.0
    return float(sum(ledger.losses) - comparator_losses(ledger, c).min())


# ---------------------------------------------------------------- multiplicative weights


def _check_horizon(horizon):
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
    return int(horizon)


def _check_example(c, example):
    if example.rows.max() >= c.n_rows:
        raise IndexError(f"example row {example.rows.max()} outside class of {c.n_rows} rows")


@dataclass(frozen=True)
class MWState:
    c: ConceptClass
    horizon: int
    eta: float
    log_weights: np.ndarray
    round: int = 0
    ledger: RegretLedger = RegretLedger()

    kind = MW

    @property
    def weights(self):
        """Unnormalized weights, starting at 1 for every point."""
        return np.exp(self.log_weights)

    @property
    def mix(self) -> Distribution:
        lw = self.log_weights
        return Distribution(np.exp(lw - lw.max()))

    def predict(self) -> Predictor:
        if self.round >= self.horizon:
            raise HorizonExhausted(f"all {self.horizon} rounds used")
        p = self.mix
        return Predictor(expect_all(self.c, p), mix=p)

    def update(self, example: DistExample) -> "MWState":
        _check_example(self.c, example)
        prediction = self.predict()(example)
        table = self.c.table.astype(float)
        losses = np.abs(example.weights @ table[example.rows] - example.label)
        lw = self.log_weights - self.eta * losses
        lw.setflags(write=False)
        return replace(
            self,
            log_weights=lw,
            round=self.round + 1,
            ledger=self.ledger.append(example, prediction),
        )


def mw_learner(c: ConceptClass, horizon: int) -> MWState:
    horizon = _check_horizon(horizon)
    lw = np.zeros(c.n_points)
    lw.setflags(write=False)
    return MWState(c=c, horizon=horizon, eta=math.sqrt(8 * math.log(c.n_points) / horizon), log_weights=lw)


# ---------------------------------------------------------------- SOA


class SOARule:
    """SOA over version spaces of points; a version space is an int bitmask.

    Query row d is predicted 0 exactly when restricting to the points with
    x(d) = 0 keeps the Littlestone dimension, and 1 otherwise.
    """

    def __init__(self, c: ConceptClass):
        if c.is_empty():
            raise ValueError("SOA needs a nonempty class")
        self.c = c
        self.ones = column_masks(c.table.T)
        self.everything = (1 << c.n_points) - 1
        self.ldim = BitLdim(self.ones)
        self._predictions = {}
        self._steps = {}

    def predict(self, members: Optional[int] = None) -> np.ndarray:
        """0/1 prediction per row for version space ``members`` (default: all points)."""
        if members is None:
            members = self.everything
        hit = self._predictions.get(members)
        if hit is None:
            base = self.ldim(members)
            hit = np.array(
                [0 if self.ldim(members & ~mask) == base else 1 for mask in self.ones],
                dtype=np.int8,
            )
            hit.setflags(write=False)
            self._predictions[members] = hit
        return hit

    def restrict(self, members: int, row: int, label: int) -> int:
        mask = self.ones[row]
        return members & mask if label else members & ~mask & self.everything

    def step(self, members: int, row: int):
        """(s, version space after label s, version space after label 1 - s)."""
        hit = self._steps.get((members, row))
        if hit is None:
            s = int(self.predict(members)[row])
            hit = (s, self.restrict(members, row, s), self.restrict(members, row, 1 - s))
            self._steps[members, row] = hit
        return hit

    def __call__(self, members: Optional[int] = None) -> Predictor:
        return Predictor(self.predict(members))


def soa_rule(c: ConceptClass) -> SOARule:
    return SOARule(c)


@lru_cache(maxsize=None)
def future_count(flips_left: int, remaining: int) -> int:
    """Number of ways to place at most ``flips_left`` flips in ``remaining`` rounds."""
    if flips_left < 0:
        return 0
    return sum(math.comb(remaining, i) for i in range(min(flips_left, remaining) + 1))


def _future_counts(flips_left, remaining):
    lowest = int(flips_left.min())
    table = np.array([float(future_count(k, remaining)) for k in range(lowest, int(flips_left.max()) + 1)])
    return table[flips_left - lowest]


@dataclass(frozen=True)
class AgnosticSOAState:
    """Worlds are (probability, groups); groups map (flips, members, loss) to a
    multiplicity of past flip patterns."""

    c: ConceptClass
    horizon: int
    flips: int
    eta: float
    worlds: tuple
    cap: int
    round: int = 0
    ledger: RegretLedger = RegretLedger()
    rule: SOARule = field(default=None, compare=False, repr=False)
    _memo: dict = field(default_factory=dict, init=False, compare=False, repr=False)

    kind = AGNOSTIC_SOA

    @property
    def n_experts(self):
        return future_count(self.flips, self.horizon)

    @property
    def materialized(self):
        return sum(len(groups) for _, groups in self.worlds)

    def predict(self) -> Predictor:
        if self.round >= self.horizon:
            raise HorizonExhausted(f"all {self.horizon} rounds used")
        if "predictor" not in self._memo:
            self._memo["predictor"] = Predictor(np.clip(self._values(), 0.0, 1.0))
        return self._memo["predictor"]

    def _values(self):
        """Exact average over worlds of the Hedge-weighted expert predictions.

        Within a group, experts not flipping this round predict s (the SOA
        prediction for the group's version space) and the others 1 - s.
        """
        remaining = self.horizon - self.round
        sizes, probs, used, losses, mults, slots = [], [], [], [], [], []
        position = {}
        for prob, groups in self.worlds:
            sizes.append(len(groups))
            probs.append(prob)
            for (u, members, loss), mult in groups:
                used.append(u)
                losses.append(loss)
                mults.append(mult)
                slots.append(position.setdefault(members, len(position)))
        sizes = np.array(sizes)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        world = np.repeat(np.arange(sizes.size), sizes)
        used = np.array(used)
        losses = np.array(losses, dtype=float)
        lowest = np.minimum.reduceat(losses, starts)
        scale = np.array(mults, dtype=float) * np.exp(-self.eta * (losses - lowest[world]))
        left = self.flips - used
        stay = scale * _future_counts(left, remaining - 1)
        flip = scale * _future_counts(left - 1, remaining - 1)
        total = np.add.reduceat(scale * _future_counts(left, remaining), starts)
        share = np.array(probs) / total
        per_slot = np.bincount(slots, weights=share[world] * (stay - flip), minlength=len(position))
        table = np.array([self.rule.predict(m) for m in position], dtype=float)
        return per_slot @ table + float(share @ np.add.reduceat(flip, starts))

    def _split(self, groups, row, label):
        out = {}
        for (used, members, loss), mult in groups:
            s, kept, flipped = self.rule.step(members, row)
            key = (used, kept, loss + (s != label))
            out[key] = out.get(key, 0) + mult
            if used < self.flips:
                key = (used + 1, flipped, loss + (s == label))
                out[key] = out.get(key, 0) + mult
        return tuple(sorted(out.items()))

    def update(self, example: DistExample) -> "AgnosticSOAState":
        _check_example(self.c, example)
        prediction = self.predict()(example)
        merged = {}
        for prob, groups in self.worlds:
            for row, weight in example.support:
                key = self._split(groups, row, example.label)
                merged[key] = merged.get(key, 0.0) + prob * weight
        worlds = tuple((prob, groups) for groups, prob in merged.items())
        size = sum(len(groups) for _, groups in worlds)
        if size > self.cap:
            raise ExpertCapError(
                f"{size} expert groups across {len(worlds)} worlds exceed the cap of {self.cap}; "
                "use the MW learner for this instance"
            )
        return replace(
            self,
            worlds=worlds,
            round=self.round + 1,
            ledger=self.ledger.append(example, prediction),
        )

    def expert_groups(self):
        """Flattened (probability, flips, members, loss, multiplicity) records."""
        return [
            (prob, used, members, loss, mult)
            for prob, groups in self.worlds
            for (used, members, loss), mult in groups
        ]


def agnostic_soa_learner(
    c: ConceptClass,
    horizon: int,
    flips: Optional[int] = None,
    cap: int = DEFAULT_EXPERT_CAP,
) -> AgnosticSOAState:
    """``flips`` defaults to the dual Littlestone dimension of ``c``."""
    horizon = _check_horizon(horizon)
    if flips is None:
        flips = dual_littlestone_dimension(c)
    n_experts = future_count(flips, horizon)
    if n_experts > cap:
        raise ExpertCapError(
            f"{n_experts} experts (horizon {horizon}, {flips} flips) exceed the cap of {cap}; "
            "use the MW learner for this instance"
        )
    rule = SOARule(c)
    eta = math.sqrt(8 * math.log(n_experts) / horizon)
    start = (((0, rule.everything, 0), 1),)
    return AgnosticSOAState(
        c=c, horizon=horizon, flips=flips, eta=eta, worlds=((1.0, start),), cap=cap, rule=rule
    )


# ---------------------------------------------------------------- common interface


def make_learner(kind: str, c: ConceptClass, horizon: int, **options):
    if kind == MW:
        return mw_learner(c, horizon)
    if kind == AGNOSTIC_SOA:
        return agnostic_soa_learner(c, horizon, **options)
    raise ValueError(f"unknown learner kind {kind!r}; expected {MW!r} or {AGNOSTIC_SOA!r}")


def learner_predict(state) -> Predictor:
    return state.predict()


def learner_update(state, example: DistExample):
    return state.update(example)

"""The sequential fooling game.

Each round the generator submits a distribution over the domain and the
discriminator replies ``WIN`` or a distinguisher d (a row of the symmetric
class) with p_real(d) - p_t(d) > eps.

``FoolingGenerator`` drives a dual online learner: if its predictor f_t is
within eps/2 of some mixture p_t over points it submits p_t and feeds the
returned distinguisher back with label 1; otherwise the minimax dual gives a
mixture of distinguishers separating f_t from every point, which is fed back
with label 0 while the previous distribution is resubmitted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sdgkit.concept import (
    ConceptClass,
    dual_littlestone_dimension,
    dual_representatives,
    dualize,
    shattered_tree,
)
from sdgkit.games import Proper, amenability_check, certificate_holds
from sdgkit.measures import Distribution, expect_all
from sdgkit.online import (
    AGNOSTIC_SOA,
    MW,
    DistExample,
    ExpertCapError,
    agnostic_soa_learner,
    learner_predict,
    learner_update,
    mw_learner,
)

STRICT_TOL = 1e-12


class ProtocolViolation(RuntimeError):
    pass


class GeneratorError(RuntimeError):
    """No separating mixture although the predictor is not fooled."""


def fooling_horizon(ell: int, eps: float) -> int:
    """ceil(a ln a) with a = 4 ell / eps^2; one round when ell = 0."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if ell < 0:
        raise ValueError("dual Littlestone dimension must be non-negative")
    if ell == 0:
        return 1
    a = 4 * ell / eps**2
    return max(1, math.ceil(a * math.log(a)))


@dataclass(frozen=True)
class FoolingParams:
    eps: float
    ell: int
    horizon: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "horizon", fooling_horizon(self.ell, self.eps))

    @classmethod
    def for_class(cls, c: ConceptClass, eps: float):
        return cls(eps, dual_littlestone_dimension(c))


@dataclass(frozen=True)
class Win:
    def to_json(self):
        return "win"


@dataclass(frozen=True)
class Distinguisher:
    index: int

    def to_json(self):
        return int(self.index)


WIN = Win()


def _require_symmetric(c):
    if not c.is_symmetric():
        raise ValueError("the game runs over a symmetric class; symmetrize it first")


# ---------------------------------------------------------------- discriminators


class HonestDiscriminator:
    """Replies WIN iff IPM(p_t, p_real) <= eps, else the lowest-index row
    with p_real(d) - p_t(d) > eps."""

    def __init__(self, c: ConceptClass, p_real: Distribution, eps: float):
        _require_symmetric(c)
        self.c, self.target, self.eps = c, p_real, eps
        self._real = expect_all(c, p_real)

    def __call__(self, p: Distribution):
        gaps = self._real - expect_all(self.c, p)
        hits = np.flatnonzero(gaps > self.eps + STRICT_TOL)
        return WIN if hits.size == 0 else Distinguisher(int(hits[0]))


def honest_discriminator(c: ConceptClass, p_real: Distribution, eps: float) -> HonestDiscriminator:
    return HonestDiscriminator(c, p_real, eps)


class TreeAdversary:
    """Lower-bound discriminator walking one root-to-leaf path of a shattered
    dual mistake tree; the target is the point mass on the leaf's point."""

    def __init__(self, c: ConceptClass, eps: float, leaf: int):
        _require_symmetric(c)
        self.c, self.eps = c, eps
        self.ell = dual_littlestone_dimension(c)
        self.tree = shattered_tree(dualize(c), self.ell)
        if not 0 <= leaf < 1 << self.ell:
            raise ValueError(f"leaf {leaf} outside a tree of depth {self.ell}")
        self.leaf = leaf
        self.point = int(dual_representatives(c)[self.tree.leaves[leaf]])
        self.path = [row for row, _ in self.tree.path(leaf)]
        self.target = Distribution.point(c.n_points, self.point)
        self.complement = c.complement_index()
        self.last = -1

    def __call__(self, p: Distribution):
        for i in range(self.last + 1, len(self.path)):
            row = self.path[i]
            gap = float(self.c.table[row, self.point]) - float(self.c.table[row] @ p.weights)
            if abs(gap) > self.eps + STRICT_TOL:
                self.last = i
                return Distinguisher(row if gap > 0 else int(self.complement[row]))
        return WIN


def tree_adversary(c: ConceptClass, eps: float, rng):
    """Draw a uniform leaf; return ``(oracle, hidden target)``."""
    ell = dual_littlestone_dimension(c)
    leaf = int(rng.integers(1 << ell))
    oracle = TreeAdversary(c, eps, leaf)
    return oracle, oracle.target


# ---------------------------------------------------------------- generators


class FoolingGenerator:
    def __init__(self, c: ConceptClass, eps: float, learner):
        _require_symmetric(c)
        if learner.c != c:
            raise ValueError("learner and generator must use the same class")
        self.c, self.eps, self.learner = c, eps, learner
        self.previous = Distribution.uniform(c.n_points)
        self.pending = None

    @property
    def output(self) -> Distribution:
        return self.previous

    def propose(self) -> Distribution:
        f = learner_predict(self.learner)
        if self.learner.kind == MW:
            self.pending = {"branch": "if", "p": f.mix, "predictor": f}
            return f.mix
        result = amenability_check(f.values, self.c, self.eps)
        if not certificate_holds(result, f.values, self.c, self.eps):
            raise GeneratorError("amenability certificate failed")
        if isinstance(result, Proper):
            self.pending = {"branch": "if", "p": result.p, "predictor": f}
            return result.p
        self.pending = {
            "branch": "else",
            "p": self.previous,
            "predictor": f,
            "example": DistExample.from_distribution(result.dbar, 0),
        }
        return self.previous

    def observe(self, reply):
        step, self.pending = self.pending, None
        if step["branch"] == "if":
            self.previous = step["p"]
            if isinstance(reply, Win):
                return step
            step["example"] = DistExample.dirac(reply.index, 1)
        elif isinstance(reply, Win):
            return step
        self.learner = learner_update(self.learner, step["example"])
        return step


class FixedGenerator:
    """Submits the same distribution every round."""

    def __init__(self, p: Distribution):
        self.p = p

    @property
    def output(self):
        return self.p

    def propose(self):
        return self.p

    def observe(self, reply):
        return {"branch": None}


def default_learner(c: ConceptClass, horizon: int, kind: str = "auto", **options):
    """``auto`` picks AgnosticSOA when its expert count fits the cap, else MW."""
    if kind == MW:
        return mw_learner(c, horizon)
    if kind == AGNOSTIC_SOA:
        return agnostic_soa_learner(c, horizon, **options)
    if kind != "auto":
        raise ValueError(f"unknown learner kind {kind!r}")
    try:
        return agnostic_soa_learner(c, horizon, **options)
    except ExpertCapError:
        return mw_learner(c, horizon)


# ---------------------------------------------------------------- transcripts


@dataclass(frozen=True)
class RoundRecord:
    t: int
    submitted: tuple
    reply: object
    branch: Optional[str] = None
    dbar: Optional[tuple] = None
    label: Optional[int] = None
    predictor: Optional[tuple] = None
    ipm_to_target: Optional[float] = None

    def to_dict(self):
        return {
            "t": self.t,
            "submitted": list(self.submitted),
            "reply": self.reply.to_json(),
            "branch": self.branch,
            "dbar": None if self.dbar is None else [list(pair) for pair in self.dbar],
            "label": self.label,
            "predictor": None if self.predictor is None else list(self.predictor),
            "ipm_to_target": self.ipm_to_target,
        }


@dataclass
class Transcript:
    rounds: list
    outcome: str
    output: Distribution
    horizon: int
    fingerprint: str
    final_ipm: Optional[float] = None
    dishonest: bool = False
    seed: Optional[int] = None
    learner: Optional[str] = None

    @property
    def won(self):
        return self.outcome == "won"

    @property
    def n_rounds(self):
        return len(self.rounds)

    def summary(self):
        return {
            "outcome": self.outcome,
            "rounds": self.n_rounds,
            "final_ipm": self.final_ipm,
            "horizon": self.horizon,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "dishonest_win": self.dishonest,
            "learner": self.learner,
            "else_rounds": sum(r.branch == "else" for r in self.rounds),
        }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.rounds)


def _gap_to_target(c, target, p):
    gaps = expect_all(c, target) - expect_all(c, p)
    return max(float(gaps.max()), 0.0), gaps


def play_game(
    generator,
    discriminator,
    max_rounds: int,
    c: Optional[ConceptClass] = None,
    target: Optional[Distribution] = None,
    eps: Optional[float] = None,
    seed: Optional[int] = None,
) -> Transcript:
    """Run the protocol for at most ``max_rounds`` rounds.

    The class, target and eps default to the discriminator's own, when it has
    them; with a known target every distinguisher is checked for an advantage
    above eps, and a WIN on a distribution farther than eps is flagged.
    """
    c = c if c is not None else getattr(discriminator, "c", None)
    target = target if target is not None else getattr(discriminator, "target", None)
    eps = eps if eps is not None else getattr(discriminator, "eps", None)
    checking = c is not None and target is not None and eps is not None
    rounds, outcome, dishonest, final_ipm = [], "lost", False, None
    for t in range(1, max_rounds + 1):
        p = generator.propose()
        reply = discriminator(p)
        distance = None
        if checking:
            distance, gaps = _gap_to_target(c, target, p)
            if isinstance(reply, Distinguisher) and not gaps[reply.index] > eps:
                raise ProtocolViolation(
                    f"round {t}: distinguisher {reply.index} has advantage {gaps[reply.index]:.6g} <= eps {eps}"
                )
        step = generator.observe(reply)
        example = step.get("example")
        predictor = step.get("predictor")
        rounds.append(
            RoundRecord(
                t=t,
                submitted=tuple(p.tolist()),
                reply=reply,
                branch=step.get("branch"),
                dbar=None if example is None else example.support,
                label=None if example is None else example.label,
                predictor=None if predictor is None else tuple(predictor.values.tolist()),
                ipm_to_target=distance,
            )
        )
        if isinstance(reply, Win):
            outcome = "won"
            if checking:
                final_ipm = distance
                dishonest = distance > eps + STRICT_TOL
            break
    if outcome == "lost" and checking:
        final_ipm = _gap_to_target(c, target, generator.output)[0]
    return Transcript(
        rounds=rounds,
        outcome=outcome,
        output=generator.output,
        horizon=max_rounds,
        fingerprint=c.fingerprint() if c is not None else "",
        final_ipm=final_ipm,
        dishonest=dishonest,
        seed=seed,
        learner=getattr(getattr(generator, "learner", None), "kind", None),
    )


def generator_strategy(
    c: ConceptClass,
    params: FoolingParams,
    learner,
    discriminator,
    target: Optional[Distribution] = None,
    seed: Optional[int] = None,
) -> Transcript:
    generator = FoolingGenerator(c, params.eps, learner)
    return play_game(generator, discriminator, params.horizon, c=c, target=target, eps=params.eps, seed=seed)


def regret_growth(record: RoundRecord, c: ConceptClass, target: Distribution) -> float:
    """Per-round regret increase against the target:
    E[p_real(d) - f(d)] on label 1, E[f(d) - p_real(d)] on label 0."""
    if record.label is None:
        raise ValueError("round fed nothing to the learner")
    real = expect_all(c, target)
    f = np.asarray(record.predictor)
    rows = np.array([r for r, _ in record.dbar])
    w = np.array([w for _, w in record.dbar])
    gap = float(w @ (real[rows] - f[rows]))
    return gap if record.label == 1 else -gap

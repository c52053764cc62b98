"""Differential-privacy primitives and (alpha, beta) bookkeeping.

Privacy parameters compose additively.  Alphas may be ``Fraction`` so that
ledger totals re-derive exactly; betas are floats.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Callable, Optional

import numpy as np

from sdgkit.concept import ConceptClass
from sdgkit.measures import LabeledSample

TOP = True
BOTTOM = False


@dataclass(frozen=True)
class PrivacyParams:
    alpha: float | Fraction = 0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")

    def __add__(self, other):
        return PrivacyParams(self.alpha + other.alpha, min(1.0, self.beta + other.beta))

    def scale(self, k):
        return PrivacyParams(self.alpha * k, min(1.0, self.beta * k))

    def to_dict(self):
        return {"alpha": _alpha_out(self.alpha), "alpha_float": float(self.alpha), "beta": float(self.beta)}

    @classmethod
    def from_dict(cls, data):
        return cls(_alpha_in(data["alpha"]), float(data["beta"]))


def _alpha_out(alpha):
    return str(alpha) if isinstance(alpha, Fraction) else float(alpha)


def _alpha_in(raw):
    return Fraction(raw) if isinstance(raw, str) else float(raw)


ZERO = PrivacyParams(Fraction(0), 0.0)


def compose(items) -> PrivacyParams:
    """Basic composition: componentwise sum of params or ledger entries."""
    total = ZERO
    for item in items:
        total = total + (item.params if isinstance(item, LedgerEntry) else item)
    return total


def subsample_amplify(p: PrivacyParams, u: int, v: int) -> PrivacyParams:
    """Privacy of running a (alpha, beta) mechanism on u of v records drawn
    with replacement: (6 alpha u / v, exp(6 alpha u / v) (4u/v) beta)."""
    if p.alpha > 1:
        raise ValueError(f"amplification needs alpha <= 1, got {float(p.alpha)}")
    if not v > 2 * u:
        raise ValueError(f"amplification needs v > 2u, got u={u}, v={v}")
    ratio = Fraction(u, v)
    if isinstance(p.alpha, Fraction):
        alpha = 6 * p.alpha * ratio
    else:
        alpha = 6 * p.alpha * u / v
    beta = math.exp(float(alpha)) * 4 * u / v * p.beta
    return PrivacyParams(alpha, min(1.0, beta))


def sanitizer_amplify(p: PrivacyParams) -> PrivacyParams:
    """Halving subsample of a fooling run: (12 alpha, exp(12 alpha) 8 beta)."""
    alpha = 12 * p.alpha
    return PrivacyParams(alpha, min(1.0, math.exp(float(alpha)) * 8 * p.beta))


# ---------------------------------------------------------------- ledger


ATOMIC = "atomic"
COMPOSED = "composed"
AMPLIFIED = "amplified"
POSTPROCESSED = "postprocessed"


@dataclass(frozen=True)
class LedgerEntry:
    tag: str
    params: PrivacyParams
    derivation: str
    base: Optional[PrivacyParams] = None
    u: Optional[int] = None
    v: Optional[int] = None
    count: Optional[int] = None
    rule: Optional[str] = None
    note: str = ""
    detail: Optional[dict] = None

    def to_dict(self):
        out = {"tag": self.tag, "derivation": self.derivation, "params": self.params.to_dict()}
        for name in ("u", "v", "count", "rule"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.base is not None:
            out["base"] = self.base.to_dict()
        if self.note:
            out["note"] = self.note
        if self.detail is not None:
            out["detail"] = self.detail
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(
            tag=data["tag"],
            params=PrivacyParams.from_dict(data["params"]),
            derivation=data["derivation"],
            base=PrivacyParams.from_dict(data["base"]) if "base" in data else None,
            u=data.get("u"),
            v=data.get("v"),
            count=data.get("count"),
            rule=data.get("rule"),
            note=data.get("note", ""),
            detail=data.get("detail"),
        )


def rederive(entry: LedgerEntry) -> PrivacyParams:
    """Recompute an entry's params from its stored provenance alone."""
    if entry.derivation == ATOMIC:
        return entry.params
    if entry.derivation == POSTPROCESSED:
        return ZERO
    if entry.derivation == COMPOSED:
        return entry.base.scale(entry.count)
    if entry.derivation == AMPLIFIED:
        if entry.rule == "sanitizer":
            return sanitizer_amplify(entry.base)
        return subsample_amplify(entry.base, entry.u, entry.v)
    raise ValueError(f"unknown derivation {entry.derivation!r}")


def _same(a: PrivacyParams, b: PrivacyParams) -> bool:
    if isinstance(a.alpha, Fraction) and isinstance(b.alpha, Fraction):
        alpha_ok = a.alpha == b.alpha
    else:
        alpha_ok = math.isclose(float(a.alpha), float(b.alpha), rel_tol=1e-12, abs_tol=1e-12)
    return alpha_ok and math.isclose(a.beta, b.beta, rel_tol=1e-12, abs_tol=1e-300)


@dataclass
class PrivacyLedger:
    entries: list = field(default_factory=list)

    def add(self, entry: LedgerEntry) -> LedgerEntry:
        self.entries.append(entry)
        return entry

    def atomic(self, tag, params, note=""):
        return self.add(LedgerEntry(tag, params, ATOMIC, note=note))

    def amplified(self, tag, base, u, v, rule="subsample", detail=None):
        entry = LedgerEntry(tag, ZERO, AMPLIFIED, base=base, u=u, v=v, rule=rule, detail=detail)
        return self.add(_with_params(entry, rederive(entry)))

    def composed(self, tag, base, count, note=""):
        entry = LedgerEntry(tag, base.scale(count), COMPOSED, base=base, count=count, note=note)
        return self.add(entry)

    def postprocessed(self, tag, note=""):
        return self.add(LedgerEntry(tag, ZERO, POSTPROCESSED, note=note))

    def total(self) -> PrivacyParams:
        return compose(self.entries)

    def verify(self) -> bool:
        """True iff every entry re-derives from its provenance."""
        return all(_same(rederive(e), e.params) for e in self.entries)

    def to_dict(self):
        return {"entries": [e.to_dict() for e in self.entries], "total": self.total().to_dict()}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data):
        return cls([LedgerEntry.from_dict(e) for e in data["entries"]])


def _with_params(entry, params):
    return LedgerEntry(**{**entry.__dict__, "params": params})


# ---------------------------------------------------------------- mechanisms


def laplace_noise(scale: float, rng, size=None):
    """Laplace(0, scale) by inverting the CDF of one uniform draw per value."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = rng.random(size) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def thresh(sigma, c: float, n_margin: float, rng, size=None):
    """Noisy threshold test on the mean of ``sigma``.

    Returns ``TOP`` when mean + Lap(1/n_margin) exceeds ``c``.  With values in
    [0, 1] the mean moves by at most 1/len(sigma) per record, so one call is
    (n_margin/len(sigma), 0)-private.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0:
        raise ValueError("sigma must be nonempty")
    if n_margin < 1:
        raise ValueError("margin parameter must be at least 1")
    noisy = sigma.mean() + laplace_noise(1.0 / n_margin, rng, size)
    if size is None:
        return bool(noisy > c)
    return noisy > c


def thresh_params(n_margin, n_values) -> PrivacyParams:
    return PrivacyParams(Fraction(n_margin, n_values), 0.0)


def empirical_errors(c: ConceptClass, s: LabeledSample) -> np.ndarray:
    """Misclassification counts of every row of ``c`` on ``s``."""
    ones = np.bincount(s.points[s.labels == 1], minlength=c.n_points)
    zeros = np.bincount(s.points[s.labels == 0], minlength=c.n_points)
    return c.table.astype(np.int64) @ (zeros - ones) + ones.sum()


def exp_mech_probabilities(c: ConceptClass, s: LabeledSample, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    scores = -float(alpha) * empirical_errors(c, s) / 2.0
    weights = np.exp(scores - scores.max())
    return weights / weights.sum()


def exp_mech_learner(c: ConceptClass, s: LabeledSample, alpha: float, rng, size=None):
    """Exponential-mechanism ERM: pick row d w.p. prop. to exp(-alpha err_S(d) / 2).

    Error counts have sensitivity 1, so the choice is (alpha, 0)-private.
    """
    if len(s) == 0:
        raise ValueError("sample must be nonempty")
    probs = exp_mech_probabilities(c, s, alpha)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    idx = np.minimum(idx, c.n_rows - 1)
    return int(idx) if size is None else idx


@dataclass(frozen=True)
class LearnerSpec:
    """Private agnostic learner with a closed-form sample-size rule."""

    alpha: float = 1.0
    n_hypotheses: int = 2
    constant: float = 8.0

    def params(self):
        return PrivacyParams(_as_fraction(self.alpha), 0.0)


def _as_fraction(x):
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**9)


def learner_sample_complexity(spec: LearnerSpec, eps: float, delta: float) -> int:
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    log_term = math.log(spec.n_hypotheses) + math.log(1 / delta)
    return math.ceil(spec.constant * log_term * (1 / (spec.alpha * eps) + 1 / eps**2))


def laplace_counter(s: LabeledSample, rng, count_scale: float = 0.5) -> float:
    """Fraction of label-1 pairs plus Lap(count_scale) noise on the count.

    The count has sensitivity 1, so this is (1/count_scale, 0)-private; see
    ``laplace_counter_params``.
    """
    if len(s) == 0:
        raise ValueError("sample must be nonempty")
    fraction = float(np.mean(s.labels))
    return fraction + float(laplace_noise(count_scale, rng)) / len(s)


def laplace_counter_params(count_scale: float = 0.5) -> PrivacyParams:
    return PrivacyParams(1 / _as_fraction(count_scale), 0.0)


def randomized_response(bit: int, keep: float, rng, size=None):
    """Report ``bit`` w.p. ``keep`` and its flip otherwise."""
    flip = rng.random(size) >= keep
    return np.where(flip, 1 - bit, bit) if size is not None else int(bit ^ bool(flip))


# ---------------------------------------------------------------- audit


def wilson_interval(successes, trials, z):
    if trials == 0:
        return 0.0, 1.0
    phat = successes / trials
    denom = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class AuditReport:
    estimate: float
    lower: float
    worst_event: Optional[str]
    declared_alpha: Optional[float]
    slack: float
    trials: int
    confidence: float
    events: list
    excluded: list

    @property
    def violation(self):
        if self.declared_alpha is None:
            return False
        return self.lower > self.declared_alpha + self.slack

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "lower": self.lower,
            "worst_event": self.worst_event,
            "declared_alpha": self.declared_alpha,
            "slack": self.slack,
            "trials": self.trials,
            "confidence": self.confidence,
            "violation": self.violation,
            "events": self.events,
            "excluded": self.excluded,
        }


def dp_audit(
    mechanism: Callable,
    neighbors,
    trials: int,
    rng,
    events: Optional[Callable] = None,
    declared_alpha: Optional[float] = None,
    slack: float = 0.0,
    confidence: float = 0.95,
    batched: bool = False,
) -> AuditReport:
    """Monte-Carlo estimate of max_E |ln P(M(a) in E) / P(M(b) in E)|.

    ``mechanism(input, rng)`` returns one output, or an array of ``trials``
    outputs when ``batched`` is set.  ``events`` maps an output to its event
    label; by default every distinct output is its own event.  Singleton
    events suffice for pure DP, since a union's ratio never exceeds its
    largest member's.
    """
    first, second = neighbors
    z = NormalDist().inv_cdf(0.5 + confidence / 2)

    def run(data, tag):
        sub = np.random.Generator(np.random.PCG64(rng.integers(0, 2**63)))
        if batched:
            outs = list(np.asarray(mechanism(data, sub, trials)).tolist())
        else:
            outs = [mechanism(data, sub) for _ in range(trials)]
        if events is not None:
            outs = [events(o) for o in outs]
        labels, counts = np.unique(np.asarray([str(o) for o in outs]), return_counts=True)
        return dict(zip(labels.tolist(), counts.tolist()))

    counts_a = run(first, "a")
    counts_b = run(second, "b")
    rows, excluded = [], []
    best, best_lower, worst = 0.0, 0.0, None
    for event in sorted(set(counts_a) | set(counts_b)):
        na, nb = counts_a.get(event, 0), counts_b.get(event, 0)
        if na == 0 or nb == 0:
            excluded.append(event)
            continue
        lo_a, hi_a = wilson_interval(na, trials, z)
        lo_b, hi_b = wilson_interval(nb, trials, z)
        ratio = math.log(na / nb)
        lower = max(math.log(lo_a / hi_b) if lo_a > 0 else -math.inf,
                    math.log(lo_b / hi_a) if lo_b > 0 else -math.inf)
        rows.append({"event": event, "count_a": na, "count_b": nb, "log_ratio": ratio, "lower": lower})
        if abs(ratio) > best:
            best, worst = abs(ratio), event
        best_lower = max(best_lower, lower)
    if excluded:
        warnings.warn(f"audit excluded {len(excluded)} zero-count event(s): {excluded[:5]}")
    return AuditReport(
        estimate=best,
        lower=best_lower,
        worst_event=worst,
        declared_alpha=declared_alpha,
        slack=slack,
        trials=trials,
        confidence=confidence,
        events=rows,
        excluded=excluded,
    )


# ---------------------------------------------------------------- worst-case neighbours


def exp_mech_neighbors(extra_points: int = 2):
    """Class and neighbouring one-record samples where the exponential
    mechanism's log-ratio approaches its full alpha.

    Point 0 and point 1 carry the records; the favourite row is 0 on both
    records' labels in the first sample and wrong in the second, while
    2^extra_points rivals move the opposite way.
    """
    n = 2 + extra_points
    rows = [[0, 1] + [0] * extra_points]
    for code in range(1 << extra_points):
        rows.append([1, 0] + [(code >> i) & 1 for i in range(extra_points)])
    c = ConceptClass(rows)
    first = LabeledSample([0], [0], n)
    second = LabeledSample([1], [0], n)
    return c, first, second


def audit_exp_mech(alpha: float, trials: int, rng, extra_points: int = 2, confidence: float = 0.95) -> AuditReport:
    c, first, second = exp_mech_neighbors(extra_points)
    return dp_audit(
        lambda s, sub, n: exp_mech_learner(c, s, alpha, sub, size=n),
        (first, second),
        trials,
        rng,
        declared_alpha=float(alpha),
        confidence=confidence,
        batched=True,
    )


def audit_thresh(n_values: int, n_margin: int, trials: int, rng, confidence: float = 0.95) -> AuditReport:
    """Neighbours differ in one value; the threshold sits at the larger mean,
    where the Laplace tail ratio is exactly exp(n_margin / n_values)."""
    first = np.zeros(n_values)
    first[0] = 1.0
    second = np.zeros(n_values)
    c = 1.0 / n_values
    return dp_audit(
        lambda sigma, sub, n: thresh(sigma, c, n_margin, sub, size=n),
        (first, second),
        trials,
        rng,
        declared_alpha=n_margin / n_values,
        confidence=confidence,
        batched=True,
    )

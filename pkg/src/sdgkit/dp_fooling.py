"""Private fooling and what follows from it.

The chain runs: a private discriminator built from a private agnostic
learner and a noisy threshold test; a fooling pipeline that plays the
sequential generator against it; a sanitizer that runs the pipeline on a
half-size subsample; private uniform convergence of 0/1 losses from two
sanitizer calls and a noisy label count; and private ERM on top of that.

The proof-level sample sizes are far beyond desk scale.  Every entry point
computes them, reports the shortfall, and refuses to run unless the failing
checks are overridden by name (or all at once with ``overrides=True``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from sdgkit.concept import ConceptClass, dual_littlestone_dimension, symmetrize, vc_dimension
from sdgkit.measures import Distribution, LabeledSample, Sample, empirical, expect_all, ipm, m_emp_bound
from sdgkit.online import mw_learner
from sdgkit.privacy import (
    LearnerSpec,
    PrivacyLedger,
    PrivacyParams,
    exp_mech_learner,
    laplace_counter,
    laplace_counter_params,
    learner_sample_complexity,
    subsample_amplify,
    thresh,
    thresh_params,
)
from sdgkit.sequential import WIN, Distinguisher, FoolingGenerator, fooling_horizon, play_game

UNIFORM_CONVERGENCE = "uniform_convergence"
LEARNER_SIZE = "learner_sample"
THRESH_SIZE = "thresh_margin"
ROUNDS = "rounds"
SIZE_CHECKS = (UNIFORM_CONVERGENCE, LEARNER_SIZE, THRESH_SIZE, ROUNDS)


class SizeCheckError(ValueError):
    def __init__(self, failed):
        self.failed = failed
        super().__init__(
            "sample too small: "
            + "; ".join(f"{c.name} needs {c.required}, have {c.actual}" for c in failed)
            + " (override to run at desk scale)"
        )


class LabelImbalance(RuntimeError):
    pass


@dataclass(frozen=True)
class SizeCheck:
    name: str
    required: int
    actual: int
    overridden: bool = False

    @property
    def satisfied(self):
        return self.actual >= self.required

    @property
    def passed(self):
        return self.satisfied or self.overridden

    def to_dict(self):
        return {
            "name": self.name,
            "required": self.required,
            "actual": self.actual,
            "satisfied": self.satisfied,
            "overridden": self.overridden,
        }


def _override_set(overrides):
    if overrides is True:
        return frozenset(SIZE_CHECKS)
    unknown = set(overrides or ()) - set(SIZE_CHECKS)
    if unknown:
        raise ValueError(f"unknown size checks {sorted(unknown)}; known: {SIZE_CHECKS}")
    return frozenset(overrides or ())


def enforce(checks):
    failed = [c for c in checks if not c.passed]
    if failed:
        raise SizeCheckError(failed)
    return checks


def _learner_for(c, learner):
    return replace(learner, n_hypotheses=c.n_rows)


# ---------------------------------------------------------------- discriminator


@dataclass(frozen=True)
class DiscriminatorConfig:
    eps: float
    delta: float
    tau: float

    def __post_init__(self):
        if not 0 < self.eps < 1 or not 0 < self.delta < 1:
            raise ValueError("eps and delta must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")

    def learner_size(self, n):
        """Size of the labelled subsample handed to the learner."""
        size = math.ceil(self.tau * n)
        if size < 1:
            raise ValueError(f"tau * |S| = {self.tau * n} is below one record")
        return size


def discriminator_size_checks(c, n, cfg: DiscriminatorConfig, learner: LearnerSpec, overrides=()):
    overrides = _override_set(overrides)
    spec = _learner_for(c, learner)
    confidence = cfg.tau * cfg.delta / 2
    needed = learner_sample_complexity(spec, cfg.eps / 8, confidence)
    margin = 64 * math.log(1 / confidence) / (cfg.eps * cfg.tau)
    return [
        SizeCheck(LEARNER_SIZE, needed, cfg.learner_size(n), LEARNER_SIZE in overrides),
        SizeCheck(THRESH_SIZE, math.ceil(margin), n, THRESH_SIZE in overrides),
    ]


def discriminator_params(learner: LearnerSpec, u: int, v: int):
    """(learner entry params, threshold params) for u learner records out of v."""
    base = learner.params()
    learner_part = subsample_amplify(base, u, v) if v > 2 * u else base
    return learner_part, thresh_params(u, v)


def _book_round(ledger, learner, u, v, t):
    base = learner.params()
    if v > 2 * u:
        ledger.amplified("dp_discriminator/learner", base, u, v, detail={"round": t})
    else:
        ledger.atomic("dp_discriminator/learner", base, note=f"round {t}: v <= 2u, no amplification")
    ledger.atomic("dp_discriminator/thresh", thresh_params(u, v), note=f"round {t}")


def lossy_mixture(s: Sample, p_t: Distribution, size: int, rng) -> LabeledSample:
    """Labels uniform; label 0 draws from the sample, label 1 from ``p_t``."""
    labels = rng.integers(0, 2, size)
    from_sample = s.points[rng.integers(0, len(s), size)]
    cdf = np.cumsum(p_t.weights)
    cdf[-1] = 1.0
    from_candidate = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), p_t.n_points - 1)
    return LabeledSample(np.where(labels == 0, from_sample, from_candidate), labels, s.n_points)


def mixture_loss(c: ConceptClass, p_sample: Distribution, p_t: Distribution) -> np.ndarray:
    """Exact 0/1 loss of every row on the mixture drawn by ``lossy_mixture``."""
    zero_side = expect_all(c, p_sample)
    one_side = 1 - expect_all(c, p_t)
    return (zero_side + one_side) / 2


class DPDiscriminator:
    """Private replies against the empirical distribution of ``s``.

    The learner minimizes mixture loss, which is (1 + p_S(d) - p_t(d)) / 2,
    so its pick has the smallest advantage; the reply is the complement of
    the pick, whose advantage is the negation.
    """

    def __init__(self, c, s: Sample, cfg: DiscriminatorConfig, learner: LearnerSpec, rng,
                 ledger: Optional[PrivacyLedger] = None, overrides=()):
        if not c.is_symmetric():
            raise ValueError("the discriminator needs a class closed under complement")
        self.cls, self.sample, self.cfg, self.rng = c, s, cfg, rng
        self.learner = _learner_for(c, learner)
        self.ledger = ledger if ledger is not None else PrivacyLedger()
        self.checks = enforce(discriminator_size_checks(c, len(s), cfg, learner, overrides))
        self.u, self.v = cfg.learner_size(len(s)), len(s)
        self.complement = c.complement_index()
        self.p_sample = empirical(s)
        self.calls = 0
        self.last_pick = None

    def __call__(self, p_t: Distribution):
        self.calls += 1
        mixture = lossy_mixture(self.sample, p_t, self.u, self.rng)
        pick = exp_mech_learner(self.cls, mixture, self.learner.alpha, self.rng)
        d = int(self.complement[pick])
        self.last_pick = d
        values = self.cls.table[d, self.sample.points].astype(float)
        threshold = float(self.cls.table[d].astype(float) @ p_t.weights) + 5 * self.cfg.eps / 8
        top = thresh(values, threshold, self.u, self.rng)
        _book_round(self.ledger, self.learner, self.u, self.v, self.calls)
        return Distinguisher(d) if top else WIN


def dp_discriminator(c, s: Sample, p_t: Distribution, cfg: DiscriminatorConfig, learner: LearnerSpec,
                     rng, ledger: Optional[PrivacyLedger] = None, overrides=()):
    """One private reply: ``WIN`` or a ``Distinguisher``."""
    return DPDiscriminator(c, s, cfg, learner, rng, ledger, overrides)(p_t)


# ---------------------------------------------------------------- fooling pipeline


@dataclass(frozen=True)
class PipelineConfig:
    eps0: float
    delta0: float
    kappa: float
    learner: LearnerSpec = LearnerSpec()
    overrides: frozenset = frozenset()

    def __post_init__(self):
        if not 0 < self.eps0 < 1 or not 0 < self.delta0 < 1:
            raise ValueError("eps0 and delta0 must lie in (0, 1)")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        object.__setattr__(self, "overrides", _override_set(self.overrides))

    def rounds(self, n, ell):
        """T0 = min(floor(n^kappa), T(eps0 / 4))."""
        return max(1, min(math.floor(n**self.kappa), fooling_horizon(ell, self.eps0 / 4)))

    def discriminator(self, n, ell):
        return DiscriminatorConfig(self.eps0 / 2, self.delta0 / 2, 1 / self.rounds(n, ell))


def pipeline_size_checks(c: ConceptClass, n: int, cfg: PipelineConfig):
    sym = c if c.is_symmetric() else symmetrize(c)
    ell = dual_littlestone_dimension(sym)
    checks = [
        SizeCheck(
            UNIFORM_CONVERGENCE,
            m_emp_bound(cfg.eps0 / 2, cfg.delta0 / 2, vc_dimension(c)),
            n,
            UNIFORM_CONVERGENCE in cfg.overrides,
        )
    ]
    checks += discriminator_size_checks(sym, n, cfg.discriminator(n, ell), cfg.learner, cfg.overrides)
    checks.append(
        SizeCheck(ROUNDS, fooling_horizon(ell, cfg.eps0 / 4), math.floor(n**cfg.kappa), ROUNDS in cfg.overrides)
    )
    return checks


def pipeline_min_size(c: ConceptClass, cfg: PipelineConfig, limit: int = 10**300) -> int:
    """Smallest |S| meeting every pipeline size check (overrides ignored)."""
    strict = replace(cfg, overrides=frozenset())

    def ok(n):
        return all(chk.satisfied for chk in pipeline_size_checks(c, n, strict))

    hi = 1
    while not ok(hi):
        hi *= 2
        if hi > limit:
            raise ValueError("no sample size below the search limit meets the checks")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


@dataclass
class FoolingRun:
    p_syn: Distribution
    transcript: object
    ledger: PrivacyLedger
    rounds: int
    discriminator: DiscriminatorConfig
    checks: list
    closed_form: PrivacyParams

    def __iter__(self):
        return iter((self.p_syn, self.transcript, self.ledger))

    def report(self, p_sample: Optional[Distribution] = None, p_real: Optional[Distribution] = None, c=None):
        out = {
            "rounds_budget": self.rounds,
            "rounds_played": self.transcript.n_rounds,
            "outcome": self.transcript.outcome,
            "discriminator": {"eps": self.discriminator.eps, "delta": self.discriminator.delta,
                              "tau": self.discriminator.tau},
            "size_checks": [chk.to_dict() for chk in self.checks],
            "ledger": self.ledger.to_dict(),
            "closed_form": self.closed_form.to_dict(),
        }
        if c is not None and p_sample is not None:
            out["ipm_to_sample"] = ipm(c, self.p_syn, p_sample)[0]
        if c is not None and p_real is not None:
            out["ipm_to_real"] = ipm(c, self.p_syn, p_real)[0]
        return out


def closed_form_privacy(learner: LearnerSpec, u: int, v: int, rounds: int) -> PrivacyParams:
    learner_part, thresh_part = discriminator_params(learner, u, v)
    return (learner_part + thresh_part).scale(rounds)


def dp_fool(c: ConceptClass, s: Sample, cfg: PipelineConfig, rng) -> FoolingRun:
    """Private synthetic distribution for the sample ``s``.

    A multiplicative-weights generator (error eps0/4 in its own bookkeeping)
    plays at most T0 rounds against the private discriminator with
    parameters (eps0/2, delta0/2, 1/T0).  Rounds not played are booked as
    if played, so the ledger total never depends on the data.
    """
    sym = c if c.is_symmetric() else symmetrize(c)
    if s.n_points != c.n_points:
        raise ValueError("sample and class disagree on the domain")
    ell = dual_littlestone_dimension(sym)
    checks = enforce(pipeline_size_checks(c, len(s), cfg))
    rounds = cfg.rounds(len(s), ell)
    disc_cfg = cfg.discriminator(len(s), ell)
    ledger = PrivacyLedger()
    oracle = DPDiscriminator(sym, s, disc_cfg, cfg.learner, rng, ledger, overrides=True)
    generator = FoolingGenerator(sym, cfg.eps0 / 4, mw_learner(sym, rounds))
    transcript = play_game(generator, oracle, rounds, c=sym)
    spare = rounds - oracle.calls
    if spare:
        learner_part, thresh_part = discriminator_params(oracle.learner, oracle.u, oracle.v)
        ledger.composed("dp_discriminator/padding", learner_part + thresh_part, spare,
                        note="rounds not played, booked at full cost")
    return FoolingRun(
        p_syn=generator.output,
        transcript=transcript,
        ledger=ledger,
        rounds=rounds,
        discriminator=disc_cfg,
        checks=checks,
        closed_form=closed_form_privacy(oracle.learner, oracle.u, oracle.v, rounds),
    )


# ---------------------------------------------------------------- sanitizer


@dataclass
class SanitizerOutput:
    est: np.ndarray
    p_syn: Distribution
    ledger: PrivacyLedger
    run: Optional[FoolingRun] = None

    def __call__(self, d: int) -> float:
        return float(self.est[d])


def sanitizer_size_checks(c: ConceptClass, n: int, cfg: PipelineConfig):
    if n % 2:
        raise ValueError(f"the sanitizer needs an even sample size, got {n}")
    return pipeline_size_checks(c, n // 2, cfg)


def sanitize(c: ConceptClass, s: Sample, eps: float, delta: float, kappa: float, rng,
             learner: LearnerSpec = LearnerSpec(), overrides=(), noiseless: bool = False) -> SanitizerOutput:
    """Estimates of p_s(d) for every row d of ``c``.

    Runs the fooling pipeline on |s|/2 points drawn with replacement from
    ``s``.  ``noiseless`` skips all of that and uses p_s itself, which is
    useful only for checking the estimate formula; it is not private.
    """
    if len(s) == 0 or len(s) % 2:
        raise ValueError(f"the sanitizer needs a nonempty even sample, got {len(s)}")
    ledger = PrivacyLedger()
    if noiseless:
        p_syn = empirical(s)
        ledger.atomic("sanitizer/noiseless", PrivacyParams(math.inf, 1.0), note="debug mode, not private")
        return SanitizerOutput(expect_all(c, p_syn), p_syn, ledger)
    cfg = PipelineConfig(eps, delta, kappa, learner, _override_set(overrides))
    half = len(s) // 2
    sub = Sample(s.points[rng.integers(0, len(s), half)], s.n_points)
    run = dp_fool(c, sub, cfg, rng)
    ledger.amplified("sanitizer", run.ledger.total(), half, len(s), rule="sanitizer")
    return SanitizerOutput(expect_all(c, run.p_syn), run.p_syn, ledger, run)


# ---------------------------------------------------------------- private uniform convergence


def draw_labeled(joint, m: int, rng) -> LabeledSample:
    """``m`` pairs from ``joint[x, y]``, an array of shape (points, 2)."""
    joint = np.asarray(joint, dtype=float)
    flat = joint.reshape(-1)
    if np.any(flat < 0) or abs(flat.sum() - 1) > 1e-9:
        raise ValueError("joint must be a distribution over (point, label) pairs")
    cdf = np.cumsum(flat)
    cdf[-1] = 1.0
    idx = np.minimum(np.searchsorted(cdf, rng.random(m), side="right"), flat.size - 1)
    return LabeledSample(idx // 2, idx % 2, joint.shape[0])


def true_losses(c: ConceptClass, joint) -> np.ndarray:
    """P(d(x) != y) for every row d."""
    joint = np.asarray(joint, dtype=float)
    table = c.table.astype(float)
    return table @ joint[:, 0] + (1 - table) @ joint[:, 1]


def conditional_parts(c: ConceptClass, joint, sigma: int):
    """(P(d(x)=sigma), P(y=sigma), P(d(x)=sigma | y=sigma)) for every row."""
    joint = np.asarray(joint, dtype=float)
    hit = c.table.astype(float) if sigma else 1 - c.table.astype(float)
    marginal = joint.sum(axis=1)
    p_label = float(joint[:, sigma].sum())
    conditional = hit @ joint[:, sigma] / p_label if p_label > 0 else np.zeros(c.n_rows)
    return hit @ marginal, p_label, conditional


def combine_losses(est, p_sigma, est_sigma):
    return np.asarray(est) + p_sigma - 2 * p_sigma * np.asarray(est_sigma)


@dataclass
class PucReport:
    sigma: int
    p_sigma: float
    est: np.ndarray
    est_sigma: np.ndarray
    l_hat: np.ndarray
    ledger: PrivacyLedger
    noisy_fraction: float
    block: int
    checks: list = field(default_factory=list)

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "p_sigma": self.p_sigma,
            "noisy_fraction": self.noisy_fraction,
            "block": self.block,
            "est": self.est.tolist(),
            "est_sigma": self.est_sigma.tolist(),
            "l_hat": self.l_hat.tolist(),
            "size_checks": [chk.to_dict() for chk in self.checks],
            "ledger": self.ledger.to_dict(),
        }


def puc_size_checks(c: ConceptClass, n: int, eps: float, delta: float, kappa: float,
                    learner: LearnerSpec = LearnerSpec(), overrides=()):
    overrides = _override_set(overrides)
    sanitizer_need = 2 * pipeline_min_size(c, PipelineConfig(eps / 18, delta / 6, kappa, learner))
    uniform = m_emp_bound(eps / 18, delta / 6, vc_dimension(c))
    return [
        SizeCheck(LEARNER_SIZE, 16 * sanitizer_need, n, LEARNER_SIZE in overrides),
        SizeCheck(UNIFORM_CONVERGENCE, 16 * uniform, n, UNIFORM_CONVERGENCE in overrides),
    ]


def private_uniform_convergence(c: ConceptClass, s: LabeledSample, eps: float, delta: float, rng,
                                kappa: float = 0.5, learner: LearnerSpec = LearnerSpec(),
                                overrides=(), noiseless: bool = False) -> PucReport:
    """Private estimates l_hat(d) of P(d(x) != y) for every row d.

    Works in blocks of m = |s| // 16 (rounded down to even): the first m
    points, unlabelled, are sanitized at eps/6 to estimate P(d(x) = 0); a
    noisy count picks the label sigma with estimated frequency at least 1/8;
    the first m sigma-labelled points are sanitized at eps/12 to estimate
    P(d(x) = sigma | y = sigma).
    """
    checks = enforce(puc_size_checks(c, len(s), eps, delta, kappa, learner, overrides))
    block = (len(s) // 16) & ~1
    if block < 2:
        raise ValueError(f"sample of {len(s)} pairs is too small to split into blocks")
    ledger = PrivacyLedger()
    options = dict(kappa=kappa, learner=learner, overrides=overrides, noiseless=noiseless)

    first = sanitize(c, Sample(s.points[:block], s.n_points), eps / 6, delta / 6, rng=rng, **options)
    ledger.entries.extend(first.ledger.entries)
    zero_rate = 1 - first.est

    noisy = laplace_counter(s, rng)
    ledger.atomic("laplace_counter", laplace_counter_params())
    sigma = 1 if noisy >= 1 / 8 else 0
    p_sigma = noisy if sigma else 1 - noisy
    est = zero_rate if sigma == 0 else 1 - zero_rate

    chosen = np.flatnonzero(s.labels == sigma)[:block]
    if chosen.size < block:
        raise LabelImbalance(
            f"label imbalance beyond guarantee: {chosen.size} pairs labelled {sigma}, need {block}"
        )
    second = sanitize(c, Sample(s.points[chosen], s.n_points), eps / 12, delta / 6, rng=rng, **options)
    ledger.entries.extend(second.ledger.entries)
    est_sigma = second.est if sigma else 1 - second.est

    l_hat = np.clip(combine_losses(est, p_sigma, est_sigma), 0.0, 1.0)
    return PucReport(sigma, p_sigma, est, est_sigma, l_hat, ledger, noisy, block, checks)


def lowest_argmin(values) -> int:
    values = np.asarray(values)
    return int(np.flatnonzero(values == values.min())[0])


@dataclass
class PrivateErm:
    index: int
    report: PucReport


def pap_pac_from_puc(c: ConceptClass, s: LabeledSample, eps: float, delta: float, rng, **options) -> PrivateErm:
    """Row of ``c`` with the smallest private loss estimate (lowest index on ties)."""
    report = private_uniform_convergence(c, s, eps, delta, rng, **options)
    report.ledger.postprocessed("erm/argmin")
    return PrivateErm(lowest_argmin(report.l_hat), report)

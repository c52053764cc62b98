import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sdgkit.dp_fooling as dpf
from sdgkit.concept import class_from_strings, class_zoo, symmetrize
from sdgkit.dp_fooling import (
    DiscriminatorConfig,
    LabelImbalance,
    PipelineConfig,
    SizeCheckError,
    combine_losses,
    conditional_parts,
    discriminator_size_checks,
    dp_discriminator,
    dp_fool,
    draw_labeled,
    lossy_mixture,
    lowest_argmin,
    mixture_loss,
    pap_pac_from_puc,
    pipeline_min_size,
    pipeline_size_checks,
    private_uniform_convergence,
    sanitize,
    true_losses,
)
from sdgkit.measures import Distribution, LabeledSample, Sample, draw_sample, empirical, expect_all, ipm
from sdgkit.privacy import (
    AMPLIFIED,
    ATOMIC,
    COMPOSED,
    LearnerSpec,
    PrivacyLedger,
    empirical_errors,
    sanitizer_amplify,
)
from sdgkit.rng import stream
from sdgkit.sequential import WIN, Distinguisher

SINGLETONS = symmetrize(class_zoo("singletons", 4))
THRESHOLDS = symmetrize(class_zoo("thresholds", 7))
CONSTANTS = class_from_strings(["000", "111"])


# ------------------------------------------------------------ mixture loss


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mixture_loss_is_half_one_plus_advantage(seed):
    rng = stream(seed)
    p_s, p_t = (Distribution(rng.dirichlet(np.ones(7))) for _ in range(2))
    advantage = expect_all(THRESHOLDS, p_s) - expect_all(THRESHOLDS, p_t)
    np.testing.assert_allclose(mixture_loss(THRESHOLDS, p_s, p_t), (1 + advantage) / 2, atol=1e-12)


def test_sampled_mixture_matches_exact_loss():
    rng = stream(5)
    s = draw_sample(Distribution(rng.dirichlet(np.ones(7))), 5000, rng)
    p_t = Distribution(rng.dirichlet(np.ones(7)))
    mixture = lossy_mixture(s, p_t, 200_000, rng)
    sampled = empirical_errors(THRESHOLDS, mixture) / len(mixture)
    assert np.max(np.abs(sampled - mixture_loss(THRESHOLDS, empirical(s), p_t))) < 0.01


# ------------------------------------------------------------ discriminator


def test_discriminator_config_validation():
    with pytest.raises(ValueError):
        DiscriminatorConfig(0.4, 0.1, 0)
    with pytest.raises(ValueError):
        DiscriminatorConfig(1.2, 0.1, 0.5)
    assert DiscriminatorConfig(0.4, 0.1, 1e-6).learner_size(10) == 1


def test_discriminator_size_checks_enforced():
    s = Sample(np.zeros(100, dtype=int), 4)
    cfg = DiscriminatorConfig(0.4, 0.1, 0.1)
    with pytest.raises(SizeCheckError) as info:
        dp_discriminator(SINGLETONS, s, Distribution.uniform(4), cfg, LearnerSpec(), stream(0))
    assert {c.name for c in info.value.failed} == {dpf.LEARNER_SIZE, dpf.THRESH_SIZE}
    with pytest.raises(SizeCheckError):
        dp_discriminator(SINGLETONS, s, Distribution.uniform(4), cfg, LearnerSpec(), stream(0),
                         overrides=[dpf.LEARNER_SIZE])
    reply = dp_discriminator(SINGLETONS, s, Distribution.uniform(4), cfg, LearnerSpec(), stream(0),
                             overrides=[dpf.LEARNER_SIZE, dpf.THRESH_SIZE])
    assert reply is WIN or isinstance(reply, Distinguisher)
    with pytest.raises(ValueError):
        discriminator_size_checks(SINGLETONS, 100, cfg, LearnerSpec(), overrides=["everything"])


def test_thresh_margin_reads_log_of_inverse():
    cfg = DiscriminatorConfig(0.4, 0.1, 0.1)
    checks = {c.name: c for c in discriminator_size_checks(SINGLETONS, 1000, cfg, LearnerSpec())}
    assert checks[dpf.THRESH_SIZE].required == math.ceil(64 * math.log(2 / 0.01) / 0.04)
    assert checks[dpf.LEARNER_SIZE].actual == 100


def test_discriminator_needs_symmetric_class():
    s = Sample(np.zeros(10, dtype=int), 7)
    with pytest.raises(ValueError):
        dp_discriminator(class_zoo("thresholds", 7), s, Distribution.uniform(7),
                         DiscriminatorConfig(0.4, 0.1, 0.1), LearnerSpec(), stream(0), overrides=True)


def desk_discriminator(c, s, p_t, rng, ledger=None):
    return dp_discriminator(c, s, p_t, DiscriminatorConfig(0.4, 0.1, 0.1), LearnerSpec(), rng,
                            ledger=ledger, overrides=True)


def test_identical_distributions_mostly_win():
    wins = 0
    for trial in range(200):
        rng = stream(trial, "same")
        s = draw_sample(Distribution(rng.dirichlet(np.ones(4))), 4000, rng)
        wins += desk_discriminator(SINGLETONS, s, empirical(s), rng) is WIN
    assert wins / 200 >= 1 - 0.1 * 0.1 - 2 * math.sqrt(0.01 * 0.99 / 200)


def test_disjoint_supports_give_a_strong_distinguisher():
    s = Sample(np.zeros(4000, dtype=int), 4)
    p_t = Distribution.point(4, 2)
    good = 0
    for trial in range(100):
        reply = desk_discriminator(SINGLETONS, s, p_t, stream(trial, "disjoint"))
        if isinstance(reply, Distinguisher):
            advantage = expect_all(SINGLETONS, empirical(s))[reply.index] - expect_all(SINGLETONS, p_t)[reply.index]
            good += advantage >= 0.2
    assert good >= 98


def test_discriminator_ledger_per_call():
    ledger = PrivacyLedger()
    s = Sample(np.arange(4000) % 4, 4)
    desk_discriminator(SINGLETONS, s, Distribution.uniform(4), stream(1), ledger)
    learner, threshold = ledger.entries
    assert learner.derivation == AMPLIFIED and (learner.u, learner.v) == (400, 4000)
    assert learner.params.alpha == Fraction(6, 10)
    assert threshold.derivation == ATOMIC and threshold.params.alpha == Fraction(1, 10)
    assert ledger.verify()


def test_large_tau_books_the_learner_unamplified():
    ledger = PrivacyLedger()
    s = Sample(np.arange(400) % 4, 4)
    dp_discriminator(SINGLETONS, s, Distribution.uniform(4), DiscriminatorConfig(0.4, 0.1, 0.75),
                     LearnerSpec(), stream(2), ledger=ledger, overrides=True)
    learner, threshold = ledger.entries
    assert learner.derivation == ATOMIC and learner.params.alpha == 1
    assert threshold.params.alpha == Fraction(3, 4)


# ------------------------------------------------------------ pipeline


def test_pipeline_rounds_and_tau():
    cfg = PipelineConfig(0.4, 0.2, 0.4)
    assert cfg.rounds(20000, 2) == math.floor(20000**0.4) == 52
    assert cfg.rounds(10**12, 2) == 5348
    disc = cfg.discriminator(20000, 2)
    assert (disc.eps, disc.delta, disc.tau) == (0.2, 0.1, 1 / 52)
    with pytest.raises(ValueError):
        PipelineConfig(0.4, 0.2, 1.0)


def test_pipeline_size_checks_report_shortfall():
    checks = pipeline_size_checks(class_zoo("thresholds", 7), 20000, PipelineConfig(0.4, 0.2, 0.4))
    assert [c.name for c in checks] == [dpf.UNIFORM_CONVERGENCE, dpf.LEARNER_SIZE, dpf.THRESH_SIZE, dpf.ROUNDS]
    rounds = checks[-1]
    assert rounds.required == 5348 and rounds.actual == 52 and not rounds.passed
    with pytest.raises(SizeCheckError):
        dp_fool(class_zoo("thresholds", 7), Sample(np.zeros(20000, dtype=int), 7),
                PipelineConfig(0.4, 0.2, 0.4), stream(0))


def test_pipeline_min_size_is_minimal():
    c = class_from_strings(["01", "10"])
    cfg = PipelineConfig(0.5, 0.3, 0.9)
    n = pipeline_min_size(c, cfg)
    assert all(chk.satisfied for chk in pipeline_size_checks(c, n, cfg))
    assert not all(chk.satisfied for chk in pipeline_size_checks(c, n - 1, cfg))


def test_constant_class_wins_at_once():
    s = Sample(np.array([0, 1, 2, 2] * 500), 3)
    run = dp_fool(CONSTANTS, s, PipelineConfig(0.4, 0.2, 0.4, overrides=True), stream(3))
    assert run.transcript.won and run.transcript.n_rounds == 1
    assert ipm(CONSTANTS, run.p_syn, empirical(s))[0] == 0
    # dual dimension 0: one round budget, nothing to pad
    assert run.rounds == 1 and len(run.ledger.entries) == 2


def test_unplayed_rounds_are_padded():
    s = Sample(np.arange(20000) % 7, 7)
    run = dp_fool(class_zoo("thresholds", 7), s, PipelineConfig(0.4, 0.2, 0.4, overrides=True), stream(6))
    assert run.transcript.n_rounds < run.rounds
    padding = run.ledger.entries[-1]
    assert padding.derivation == COMPOSED and padding.count == run.rounds - run.transcript.n_rounds
    assert len(run.ledger.entries) == 2 * run.transcript.n_rounds + 1


def test_ledger_total_has_closed_form():
    s = draw_sample(Distribution(stream(8).dirichlet(np.ones(7))), 20000, stream(9))
    cfg = PipelineConfig(0.4, 0.2, 0.4, overrides=True)
    p_syn, transcript, ledger = run = dp_fool(class_zoo("thresholds", 7), s, cfg, stream(10))
    ratio = Fraction(math.ceil(20000 / 52), 20000)
    assert ledger.total().alpha == 52 * (6 * ratio + ratio)
    assert ledger.total() == run.closed_form
    assert ledger.verify()


def test_pipeline_fools_the_sample():
    c = class_zoo("thresholds", 7)
    failures = 0
    for trial in range(40):
        rng = stream(trial, "fool")
        s = draw_sample(Distribution(rng.dirichlet(np.ones(7))), 20000, rng)
        run = dp_fool(c, s, PipelineConfig(0.4, 0.2, 0.4, overrides=True), rng)
        failures += run.report(p_sample=empirical(s), c=c)["ipm_to_sample"] > 0.2
        assert run.transcript.n_rounds <= run.rounds
    assert failures / 40 <= 0.2 + 2 * math.sqrt(0.2 * 0.8 / 40)


def test_pipeline_is_deterministic():
    s = Sample(np.arange(20000) % 7, 7)
    cfg = PipelineConfig(0.4, 0.2, 0.4, overrides=True)
    a = dp_fool(class_zoo("thresholds", 7), s, cfg, stream(4))
    b = dp_fool(class_zoo("thresholds", 7), s, cfg, stream(4))
    assert a.p_syn.tolist() == b.p_syn.tolist()
    assert a.ledger.to_json() == b.ledger.to_json()


# ------------------------------------------------------------ sanitizer


def test_sanitizer_on_constants_is_exact():
    s = Sample(np.arange(4000) % 3, 3)
    out = sanitize(CONSTANTS, s, 0.4, 0.2, 0.4, stream(0), overrides=True)
    assert out.est.tolist() == [0.0, 1.0]


def test_noiseless_sanitizer_reproduces_frequencies():
    rng = stream(7)
    s = draw_sample(Distribution(rng.dirichlet(np.ones(7))), 1000, rng)
    out = sanitize(THRESHOLDS, s, 0.3, 0.2, 0.4, rng, noiseless=True)
    per_point = np.array([np.mean(THRESHOLDS.table[d, s.points]) for d in range(THRESHOLDS.n_rows)])
    np.testing.assert_allclose(out.est, per_point, atol=1e-12)
    assert math.isinf(out.ledger.total().alpha)


def test_sanitizer_est_is_linear_in_output():
    rng = stream(11)
    s = draw_sample(Distribution(rng.dirichlet(np.ones(7))), 20000, rng)
    out = sanitize(THRESHOLDS, s, 0.4, 0.2, 0.4, rng, overrides=True)
    by_point = np.array([sum(w for x, w in enumerate(out.p_syn.weights) if THRESHOLDS.table[d, x])
                         for d in range(THRESHOLDS.n_rows)])
    np.testing.assert_allclose(out.est, by_point, atol=1e-12)
    assert out(3) == out.est[3]


def test_sanitizer_ledger_is_the_halving_rule():
    s = Sample(np.arange(20000) % 7, 7)
    out = sanitize(THRESHOLDS, s, 0.4, 0.2, 0.4, stream(1), overrides=True)
    (entry,) = out.ledger.entries
    assert entry.rule == "sanitizer" and (entry.u, entry.v) == (10000, 20000)
    inner = out.run.ledger.total()
    assert entry.params == sanitizer_amplify(inner)
    assert entry.params.alpha == 12 * inner.alpha
    assert out.ledger.verify()


def test_sanitizer_rejects_odd_sizes():
    with pytest.raises(ValueError):
        sanitize(THRESHOLDS, Sample(np.zeros(11, dtype=int), 7), 0.4, 0.2, 0.4, stream(0), overrides=True)


def test_sanitizer_accuracy_on_singletons():
    failures = 0
    for trial in range(40):
        rng = stream(trial, "sanitize")
        s = draw_sample(Distribution(rng.dirichlet(np.ones(4))), 20000, rng)
        out = sanitize(SINGLETONS, s, 0.3, 0.2, 0.4, rng, overrides=True)
        failures += np.max(np.abs(out.est - expect_all(SINGLETONS, empirical(s)))) > 0.3
    assert failures / 40 <= 0.2 + 2 * math.sqrt(0.2 * 0.8 / 40)


# ------------------------------------------------------------ private uniform convergence


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.sampled_from([0, 1]))
def test_combination_identity(n, seed, sigma):
    rng = stream(seed, "joint")
    c = class_zoo("random", n, min(4, 2**n), seed=seed % 1000)
    joint = rng.dirichlet(np.ones(2 * n)).reshape(n, 2)
    hit, p_label, conditional = conditional_parts(c, joint, sigma)
    np.testing.assert_allclose(combine_losses(hit, p_label, conditional), true_losses(c, joint), atol=1e-12)


def test_true_losses_by_hand():
    c = class_from_strings(["01"])
    joint = np.array([[0.1, 0.2], [0.3, 0.4]])
    # errors: x=0 labelled 1, x=1 labelled 0
    assert true_losses(c, joint)[0] == pytest.approx(0.2 + 0.3)


def test_draw_labeled_frequencies():
    joint = np.array([[0.1, 0.2], [0.3, 0.4]])
    s = draw_labeled(joint, 100_000, stream(0))
    counts = np.zeros((2, 2))
    np.add.at(counts, (s.points, s.labels), 1)
    np.testing.assert_allclose(counts / len(s), joint, atol=0.01)
    with pytest.raises(ValueError):
        draw_labeled([[0.5, 0.6]], 10, stream(0))


def puc(c, s, rng, **options):
    return private_uniform_convergence(c, s, 0.3, 0.2, rng, kappa=0.4, overrides=True, **options)


def test_puc_size_check():
    s = draw_labeled(np.full((7, 2), 1 / 14), 1600, stream(0))
    with pytest.raises(SizeCheckError):
        private_uniform_convergence(class_zoo("thresholds", 7), s, 0.3, 0.2, stream(0))


def test_puc_report_follows_the_combination():
    rng = stream(2)
    joint = rng.dirichlet(np.ones(14)).reshape(7, 2)
    c = class_zoo("thresholds", 7)
    report = puc(c, draw_labeled(joint, 320_000, rng), rng)
    raw = report.est + report.p_sigma - 2 * report.p_sigma * report.est_sigma
    np.testing.assert_array_equal(report.l_hat, np.clip(raw, 0, 1))
    assert report.sigma == int(report.noisy_fraction >= 1 / 8)
    assert report.block == 20000
    assert np.max(np.abs(report.l_hat - true_losses(c, joint))) <= 0.3
    tags = [e.tag for e in report.ledger.entries]
    assert tags == ["sanitizer", "laplace_counter", "sanitizer"]
    assert report.ledger.verify()


def test_puc_all_zero_labels():
    c = class_zoo("thresholds", 7)
    zero = c.index_of(np.zeros(7, dtype=bool))
    assert zero is not None
    rng = stream(3)
    s = LabeledSample(rng.integers(0, 7, 320_000), np.zeros(320_000, dtype=int), 7)
    report = puc(c, s, rng)
    assert report.sigma == 0
    assert report.l_hat[zero] <= 0.3


def test_puc_constant_one_tracks_label_rate():
    c = class_from_strings(["111"])
    failures = 0
    for trial in range(20):
        rng = stream(trial, "const")
        q = rng.uniform(0.2, 0.8)
        joint = np.column_stack([np.full(3, (1 - q) / 3), np.full(3, q / 3)])
        report = puc(c, draw_labeled(joint, 32_000, rng), rng)
        failures += abs(report.l_hat[0] - (1 - q)) > 0.3
    assert failures <= 20 * 0.2


def test_puc_label_imbalance(monkeypatch):
    monkeypatch.setattr(dpf, "laplace_counter", lambda s, rng: 0.5)
    s = LabeledSample(np.arange(3200) % 7, np.zeros(3200, dtype=int), 7)
    with pytest.raises(LabelImbalance, match="label imbalance"):
        puc(class_zoo("thresholds", 7), s, stream(0))


def test_noiseless_puc_is_nearly_exact():
    rng = stream(4)
    joint = rng.dirichlet(np.ones(14)).reshape(7, 2)
    c = class_zoo("thresholds", 7)
    report = puc(c, draw_labeled(joint, 320_000, rng), rng, noiseless=True)
    assert np.max(np.abs(report.l_hat - true_losses(c, joint))) <= 0.02


# ------------------------------------------------------------ private ERM


def test_lowest_argmin_breaks_ties_low():
    assert lowest_argmin([0.3, 0.3, 0.3]) == 0
    assert lowest_argmin([0.5, 0.1, 0.1]) == 1


def test_erm_on_realizable_data():
    c = class_zoo("thresholds", 7)
    target = 3
    failures = 0
    for trial in range(10):
        rng = stream(trial, "erm")
        marginal = rng.dirichlet(np.ones(7))
        joint = np.zeros((7, 2))
        joint[np.arange(7), c.table[target].astype(int)] = marginal
        result = pap_pac_from_puc(c, draw_labeled(joint, 320_000, rng), 0.3, 0.2, rng,
                                  kappa=0.4, overrides=True)
        failures += true_losses(c, joint)[result.index] > 2 * 0.3
        assert result.report.ledger.entries[-1].tag == "erm/argmin"
    assert failures <= 2

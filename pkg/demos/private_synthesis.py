"""Private synthetic data for thresholds on seven points.

The discriminator only sees the sample through an exponential-mechanism
learner on a small subsample and a noisy threshold test, so every round has
a price; the ledger adds the prices up.

    python3 demos/private_synthesis.py
"""

import numpy as np

from sdgkit.concept import class_zoo
from sdgkit.dp_fooling import PipelineConfig, dp_fool, sanitize
from sdgkit.measures import Distribution, draw_sample, empirical, expect_all, ipm
from sdgkit.rng import stream

rng = stream(5, "demo")
c = class_zoo("thresholds", 7)
real = Distribution(rng.dirichlet(np.ones(7)))
s = draw_sample(real, 20_000, rng)

run = dp_fool(c, s, PipelineConfig(0.4, 0.2, 0.4, overrides=True), rng)
print("size checks (required vs actual):")
for check in run.checks:
    print(f"  {check.name:20s} {check.required:>14,} {check.actual:>8,}  {'ok' if check.satisfied else 'overridden'}")

print(f"\n{run.transcript.outcome} after {run.transcript.n_rounds} of {run.rounds} rounds")
print("real      ", np.round(real.weights, 3))
print("sample    ", np.round(empirical(s).weights, 3))
print("synthetic ", np.round(run.p_syn.weights, 3))
print(f"IPM to sample {ipm(c, run.p_syn, empirical(s))[0]:.3f}, to the real distribution {ipm(c, run.p_syn, real)[0]:.3f}")

total = run.ledger.total()
print(f"privacy: alpha = {total.alpha} (~{float(total.alpha):.3f}), beta = {total.beta:.2e}; "
      f"closed form agrees: {total == run.closed_form}")

out = sanitize(c, s, 0.4, 0.2, 0.4, rng, overrides=True)
error = np.max(np.abs(out.est - expect_all(c, empirical(s))))
print(f"\nsanitizer: worst threshold-frequency error {error:.3f}, alpha {float(out.ledger.total().alpha):.2f}")

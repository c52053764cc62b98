"""Private agnostic learning by way of private uniform convergence.

Labels come from a noisy threshold rule.  Every hypothesis gets a private
loss estimate built from two sanitizer runs and one noisy counter; the
learner returns the argmin.

    python3 demos/private_learning.py
"""

import numpy as np

from sdgkit.concept import class_zoo
from sdgkit.dp_fooling import draw_labeled, pap_pac_from_puc, true_losses
from sdgkit.rng import stream

rng = stream(8, "demo")
c = class_zoo("thresholds", 7)
marginal = rng.dirichlet(np.ones(7))
p_one = np.clip(c.table[3] * 0.85 + 0.075, 0, 1)  # threshold 3 with 7.5% label noise
joint = np.stack([marginal * (1 - p_one), marginal * p_one], axis=1)

s = draw_labeled(joint, 320_000, rng)
result = pap_pac_from_puc(c, s, 0.3, 0.2, rng, kappa=0.4, overrides=True)
report = result.report
losses = true_losses(c, joint)

print(f"sigma = {report.sigma}, noisy label fraction {report.noisy_fraction:.3f}, block size {report.block}")
print(" row  true loss  private estimate")
for d, (truth, est) in enumerate(zip(losses, report.l_hat)):
    mark = "  <- chosen" if d == result.index else ""
    print(f" {d:3d}  {truth:9.3f}  {est:16.3f}{mark}")
print(f"excess loss {losses[result.index] - losses.min():.3f}; alpha spent {float(report.ledger.total().alpha):.2f}")

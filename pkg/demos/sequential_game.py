"""A generator learns to fool thresholds on seven points.

Each round the generator proposes a distribution; an honest discriminator
either accepts it or names a threshold whose mass is off by more than eps.
Then a tree adversary shows the other side: some targets force many rounds.

    python3 demos/sequential_game.py
"""

import numpy as np

from sdgkit.concept import class_zoo, dual_littlestone_dimension, symmetrize
from sdgkit.measures import Distribution
from sdgkit.rng import stream
from sdgkit.sequential import (
    FoolingParams,
    default_learner,
    generator_strategy,
    honest_discriminator,
    tree_adversary,
)

c = symmetrize(class_zoo("thresholds", 7))
eps = 0.2
params = FoolingParams.for_class(c, eps)
print(f"thresholds(7): dual Littlestone dimension {dual_littlestone_dimension(c)}, round budget {params.horizon}")

target = Distribution(stream(3, "demo").dirichlet(np.full(7, 0.5)))
print("hidden target:", np.round(target.weights, 3))

learner = default_learner(c, params.horizon)
game = generator_strategy(c, params, learner, honest_discriminator(c, target, eps), target=target)
for record in game.rounds:
    shown = np.round(record.submitted, 3)
    print(f"  round {record.t:2d} [{record.branch:6s}] submitted {shown} -> {record.reply}")
print(f"{game.outcome} after {game.n_rounds} rounds, final IPM {game.final_ipm:.3f} (learner {game.learner})")

cube = symmetrize(class_zoo("cube", 3))
params = FoolingParams.for_class(cube, 0.4)
rounds = []
for draw in range(200):
    oracle, hidden = tree_adversary(cube, 0.4, stream(draw, "demo-tree"))
    tr = generator_strategy(cube, params, default_learner(cube, params.horizon), oracle, target=hidden)
    rounds.append(tr.n_rounds)
print(f"\ncube(3) against the tree adversary: mean {np.mean(rounds):.2f} rounds over 200 leaves "
      f"(dimension {params.ell})")

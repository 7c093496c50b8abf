"""How the three prior buffers hand perturbations across batches and epochs.

Run:  python demos/03_prior_buffers.py
"""

import numpy as np

from fatlab import AttackConfig, BatchPrior, EpochPrior, MomentumEpochPrior
from fatlab.models import init_model
from fatlab.priors import bp_round, ep_round, mep_round

rng = np.random.default_rng(0)
model = init_model({"kind": "mlp", "in_dim": 6, "hidden": 12, "classes": 3}, seed=0)
cfg = AttackConfig(epsilon=0.1, alpha=0.1, init="zero", clamp_input=False)
x = rng.uniform(0, 1, (4, 6))
y = np.array([0, 1, 2, 0])

print("=" * 64)
print("Batch prior: this batch's deltas seed the next batch")
print("=" * 64)
bp = BatchPrior(epsilon=0.1, dtype=np.float64)
adv1, pgi1 = bp_round(model, x, y, bp, cfg, rng)
adv2, pgi2 = bp_round(model, rng.uniform(0, 1, (4, 6)), y, bp, cfg, rng)
print("first-batch init was zero:", not pgi1.any())
print("second-batch init equals first batch's delta:", np.array_equal(pgi2, adv1))

print()
print("=" * 64)
print("Epoch prior: one slot per sample id, refreshed on every visit")
print("=" * 64)
ep = EpochPrior(8, (6,), epsilon=0.1, rng=rng, dtype=np.float64)
ids = np.array([0, 3, 5, 7])
adv1, pgi1 = ep_round(model, x, y, ids, ep, cfg)
adv2, pgi2 = ep_round(model, x, y, ids, ep, cfg)
print("second visit starts from first visit's output:", np.array_equal(pgi2, adv1))
print("untouched slots keep their uniform init:     ",
      float(np.abs(ep.delta[[1, 2, 4, 6]]).max()) <= 0.1)

print()
print("=" * 64)
print("Momentum prior: g <- mu*g + sign(grad) accumulates to sign/(1-mu)")
print("=" * 64)
mu = 0.3
mep = MomentumEpochPrior(4, (6,), epsilon=0.1, mu=mu, rng=rng, dtype=np.float64)
print(f"{'round':>5} {'|g| max':>10} {'limit':>10}")
for t in range(12):
    mep_round(model, x, y, np.arange(4), mep, cfg)
    print(f"{t:5d} {np.abs(mep.g).max():10.6f} {1 / (1 - mu):10.6f}")
print("\n(the bound 1/(1-mu) is the geometric series of +/-1 gradient signs)")

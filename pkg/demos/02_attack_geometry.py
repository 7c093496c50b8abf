"""FGSM and PGD on a model where the optimum is known in closed form.

For a linear objective w.(x+d) over the L-inf ball ||d||_inf <= eps, the
maximizer is d* = eps * sign(w) with gain eps * ||w||_1. A single FGSM
step with alpha = eps lands exactly there, and no number of smaller PGD
steps can beat it.

Run:  python demos/02_attack_geometry.py
"""

import numpy as np

from fatlab import AttackConfig, fgsm_step, pgd_attack, project_linf, sign_fn
from fatlab.models import Model
from fatlab.tensor import Tensor, linear

rng = np.random.default_rng(7)
w = rng.normal(size=8)
eps = 0.2


class LinearObjective(Model):
    def forward(self, x):
        return linear(x, self.params["w"], Tensor(np.zeros(1)))


model = LinearObjective({"kind": "mlp", "in_dim": 8, "hidden": 1, "classes": 1},
                        {"w": Tensor(w.reshape(-1, 1), requires_grad=True)})
objective = lambda logits, y: logits.sum()

x = rng.normal(size=(1, 8))
print("w       =", np.round(w, 3))
print("sign(w) =", sign_fn(w))

print("\nOne full-step FGSM (alpha = eps):")
cfg = AttackConfig(epsilon=eps, alpha=eps, clamp_input=False)
delta = fgsm_step(model, x, None, np.zeros_like(x), cfg, loss_fn=objective)
gain = ((x + delta) @ w - x @ w).item()
print(f"  gain  = {gain:.12f}")
print(f"  bound = {eps * np.abs(w).sum():.12f}   (eps * ||w||_1)")

print("\nPGD with 10 smaller steps reaches the same point:")
cfg10 = AttackConfig(epsilon=eps, alpha=eps / 5, steps=10, init="zero", clamp_input=False)
delta10 = pgd_attack(model, x, None, cfg10, loss_fn=objective)
print(f"  gain  = {(((x + delta10) @ w) - x @ w).item():.12f}")

print("\n1000 random in-ball perturbations never beat FGSM:")
best = max(float((x + rng.uniform(-eps, eps, x.shape)) @ w) for _ in range(1000))
print(f"  best random objective {best:.6f} vs FGSM {float((x + delta) @ w):.6f}")

print("\nProjection is an elementwise clamp and idempotent:")
d = rng.normal(size=5)
print("  raw     :", np.round(d, 3))
print("  project :", np.round(project_linf(d, 0.5), 3))
print("  again   :", np.round(project_linf(project_linf(d, 0.5), 0.5), 3))

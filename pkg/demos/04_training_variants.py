"""All six training variants on one small problem, same seed and budget.

Run:  python demos/04_training_variants.py     (about a minute on CPU)
"""

import numpy as np

from fatlab import TrainConfig, init_model, make_sgd, run_training, synth_blobs
from fatlab.attacks import pgd10_config

train = synth_blobs(600, d=16, k=4, spread=0.05, seed=0)
test = synth_blobs(300, d=16, k=4, spread=0.05, seed=1)
EPS = 0.08

print(f"blobs: d=16, 4 classes, eps={EPS}  (PGD-5 evaluation)\n")
print(f"{'variant':<22} {'clean':>7} {'robust':>7} {'asr(fin)':>9} {'loss':>8}")

for variant, reg in [("fgsm_at", False), ("fgsm_rs", False), ("pgd_at", False),
                     ("fgsm_bp", False), ("fgsm_ep", False), ("fgsm_mep", False),
                     ("fgsm_mep", True)]:
    cfg = TrainConfig(variant=variant, use_regularizer=reg, lam=10.0, epsilon=EPS,
                      epochs=10, batch_size=32, seed=0, pgd_k=2,
                      eval_attack=pgd10_config(EPS, steps=5))
    model = init_model({"kind": "mlp", "in_dim": 16, "hidden": 32, "classes": 4}, seed=0)
    optim = make_sgd(lr=0.1, epochs=cfg.epochs)
    result = run_training(model, train, test, cfg, optim)
    final = result.history[-1]
    name = variant + (" + regularizer" if reg else "")
    print(f"{name:<22} {final.clean_acc:7.3f} {final.robust_acc_pgd10:7.3f} "
          f"{final.asr_train:9.3f} {final.loss:8.4f}")

print("\nEvery variant emits (delta_adv, delta_pgi); the regularizer pulls the")
print("predictions at the two perturbations together (squared L2 on logits).")
print("\nNote: fgsm_ep and fgsm_mep coincide whenever mu < 0.5 and no gradient")
print("coordinate is exactly zero — |mu*g| <= mu/(1-mu) < 1 can never flip the")
print("sign of the current +-1 gradient, so the momentum only matters where the")
print("instantaneous gradient vanishes.")

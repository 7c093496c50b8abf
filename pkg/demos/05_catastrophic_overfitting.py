"""Catastrophic overfitting, live: FGSM-AT collapses, FGSM-MEP holds.

Trains two small CNNs on the stroke-glyph dataset with a large
perturbation budget. Plain FGSM-AT first gains genuine multi-step
robustness, then suddenly loses it while its own single-step training
examples stop fooling it (the attack success rate collapses together
with the PGD robust accuracy). FGSM-MEP with the prior-guided
initialization and the paired-prediction regularizer trains through the
same schedule without the collapse.

This is the same experiment the acceptance suite runs (criteria 6/7);
here with a reduced epoch count so it finishes in a few minutes.

Run:  python demos/05_catastrophic_overfitting.py
"""

from test_acceptance import EXPERIMENT  # single source of truth for the setup

raise SystemExit("placeholder until the experiment config is pinned")

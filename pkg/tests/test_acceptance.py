"""Acceptance gate: one test per criterion, one printed verdict line each.

Criteria 6 and 7 train four desk-scale models on the self-contained
stroke-glyph dataset (the stand-in used because no real MNIST/CIFAR
files ship with the repo); the runs are shared through a module-scoped
fixture. Run with ``pytest tests/test_acceptance.py -v -s`` to see the
per-criterion lines and the training trajectories.
"""

import json
import time
from dataclasses import asdict, replace

import numpy as np
import pytest

from fatlab.attacks import AttackConfig, admissible, fgsm_step, pgd10_config, pgd_attack, random_init
from fatlab.cli import main as cli_main
from fatlab.data import Dataset, load_cifar_binary, load_idx, synth_blobs, synth_shapes, write_cifar_binary, write_idx
from fatlab.errors import FormatError, LengthError
from fatlab.models import init_model, param_shapes
from fatlab.optim import make_sgd
from fatlab.priors import BatchPrior, EpochPrior, MomentumEpochPrior, bp_round, ep_round, mep_round
from fatlab.tensor import Tensor, finite_difference_gradient, one_hot, softmax_cross_entropy
from fatlab.trainer import TrainConfig, run_training

from test_attacks import linear_objective_model, sum_loss


def verdict(criterion: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f" — {detail}" if detail else "")
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# criterion 1: gradient oracle
# ---------------------------------------------------------------------------


class TestCriterion1GradientOracle:
    def test_autodiff_matches_finite_differences_on_20_models(self):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = 0.0
        checked = 0
        for trial in range(20):
            if trial % 2 == 0:
                desc = {"kind": "mlp", "in_dim": int(rng.integers(4, 10)),
                        "hidden": int(rng.integers(6, 16)), "classes": int(rng.integers(2, 5))}
                x0 = rng.uniform(-1, 1, size=(2, desc["in_dim"]))
            else:
                desc = {"kind": "smallcnn", "in_channels": 1, "image_hw": [8, 8],
                        "channels": [int(rng.integers(2, 4)), int(rng.integers(2, 5))],
                        "fc_dim": int(rng.integers(4, 10)), "classes": int(rng.integers(2, 5))}
                x0 = rng.uniform(-1, 1, size=(2, 1, 8, 8))
            model = init_model(desc, seed=int(rng.integers(0, 1 << 31)))
            assert model.param_count() <= 10_000
            labels = one_hot(rng.integers(0, desc["classes"], size=2), desc["classes"])

            def loss_value():
                logits = model.forward(Tensor(x0))
                return softmax_cross_entropy(logits, labels)

            x_t = Tensor(x0, requires_grad=True)
            loss = softmax_cross_entropy(model.forward(x_t), labels)
            loss.backward()

            def rel_err(analytic, numeric):
                return np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-10)

            fd_x = finite_difference_gradient(
                lambda v: softmax_cross_entropy(model.forward(Tensor(v)), labels).item(), x0)
            worst = max(worst, rel_err(x_t.grad, fd_x))
            checked += 1

            for name, p in model.named_parameters().items():
                got = p.grad

                def f(v, p=p):
                    saved = p.data
                    p.data = v
                    try:
                        return loss_value().item()
                    finally:
                        p.data = saved

                fd = finite_difference_gradient(f, p.data)
                worst = max(worst, rel_err(got, fd))
                checked += 1
        elapsed = time.perf_counter() - t0
        verdict("criterion 1 (gradient oracle, 20 models)",
                worst <= 1e-4 and elapsed <= 60.0,
                f"worst rel err {worst:.2e} over {checked} tensors in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2: linear-ball optimality
# ---------------------------------------------------------------------------


class TestCriterion2LinearOptimality:
    def test_fgsm_attains_analytic_linf_maximum(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=10)
        eps = 0.13
        model = linear_objective_model(w)
        x = rng.normal(size=(1, 10))
        cfg = AttackConfig(epsilon=eps, alpha=eps, clamp_input=False)
        delta = fgsm_step(model, x, None, np.zeros_like(x), cfg, loss_fn=sum_loss)
        gain = ((x + delta) @ w - x @ w).item()
        target = eps * np.abs(w).sum()
        beaten = all(((x + rng.uniform(-eps, eps, x.shape)) @ w).item()
                     <= ((x + delta) @ w).item() for _ in range(1000))
        verdict("criterion 2 (linear-ball optimality)",
                abs(gain - target) <= 1e-10 and beaten,
                f"|gain - eps*||w||_1| = {abs(gain - target):.2e}; beats 1000 random draws")


# ---------------------------------------------------------------------------
# criterion 3: constraint invariants under fuzz
# ---------------------------------------------------------------------------


class TestCriterion3ConstraintFuzz:
    def test_100k_rounds_zero_violations(self):
        rng = np.random.default_rng(99)
        model = init_model({"kind": "mlp", "in_dim": 4, "hidden": 5, "classes": 2}, seed=1)
        ep_prior = EpochPrior(8, (4,), epsilon=0.3, rng=rng)
        mep_prior = MomentumEpochPrior(8, (4,), epsilon=0.3, mu=0.3, rng=rng)
        bp_prior = BatchPrior(epsilon=0.3)
        violations = 0
        rounds = 0
        t0 = time.perf_counter()
        while rounds < 100_000:
            eps = float(rng.uniform(0.0, 0.5))
            alpha = float(rng.uniform(1e-4, 0.7))
            clamp = bool(rng.integers(0, 2))
            batch = int(rng.integers(1, 4))
            x = rng.uniform(0, 1, size=(batch, 4))
            y = rng.integers(0, 2, size=batch)
            kind = rounds % 10
            cfg = AttackConfig(epsilon=eps, alpha=alpha, init="random_uniform",
                               clamp_input=clamp)
            if kind < 6:
                init = random_init(x.shape, eps, rng)
                deltas = [fgsm_step(model, x, y, init, cfg)]
                rounds += 1
            elif kind < 7:
                steps = int(rng.integers(1, 4))
                deltas = [pgd_attack(model, x, y, replace(cfg, steps=steps), rng=rng)]
                rounds += steps
            elif kind < 8:
                ep_prior.epsilon = eps  # reuse buffers across eps draws
                ep_prior.delta = np.clip(ep_prior.delta, -eps, eps).astype(np.float32)
                ids = rng.choice(8, size=batch, replace=False)
                deltas = list(ep_round(model, x, y, ids, ep_prior, cfg))
                rounds += 1
            elif kind < 9:
                mep_prior.epsilon = eps
                mep_prior.eta = np.clip(mep_prior.eta, -eps, eps).astype(np.float32)
                ids = rng.choice(8, size=batch, replace=False)
                deltas = list(mep_round(model, x, y, ids, mep_prior, cfg))
                rounds += 1
            else:
                bp_prior.epsilon = eps
                if bp_prior.delta is not None:
                    bp_prior.delta = np.clip(bp_prior.delta, -eps, eps).astype(np.float32)
                deltas = list(bp_round(model, x, y, bp_prior, cfg, rng))
                rounds += 1
            for delta in deltas:
                if np.abs(delta).max() > eps:
                    violations += 1
                if clamp and (((x + delta) < 0).any() or ((x + delta) > 1).any()):
                    violations += 1
        verdict("criterion 3 (constraint fuzz, 1e5 rounds)", violations == 0,
                f"{rounds} rounds, {violations} violations, {time.perf_counter()-t0:.0f}s")


# ---------------------------------------------------------------------------
# criterion 4: buffer recurrences
# ---------------------------------------------------------------------------


class TestCriterion4BufferRecurrences:
    def test_momentum_closed_form_T50(self):
        rng = np.random.default_rng(11)
        mu = 0.3
        prior = MomentumEpochPrior(1, (5,), epsilon=0.2, mu=mu,
                                   rng=rng, dtype=np.float64)
        x = np.zeros((1, 5))
        cfg = AttackConfig(epsilon=0.2, alpha=0.01, clamp_input=False)
        signs = []
        for _ in range(50):
            w = rng.normal(size=5)
            signs.append(np.sign(w))
            mep_round(linear_objective_model(w), x, None, np.array([0]), prior, cfg,
                      loss_fn=sum_loss)
        closed = np.zeros(5)
        for t, s in enumerate(signs):
            closed += mu ** (len(signs) - 1 - t) * s
        err = np.abs(prior.g[0] - closed).max()
        verdict("criterion 4a (momentum closed form, T=50)", err <= 1e-9,
                f"max abs err {err:.2e}")

    def test_handoff_sequences(self):
        model = init_model({"kind": "mlp", "in_dim": 4, "hidden": 6, "classes": 3}, seed=0)
        rng = np.random.default_rng(12)
        cfg = AttackConfig(epsilon=0.1, alpha=0.1, init="zero", clamp_input=False)
        bp = BatchPrior(epsilon=0.1, dtype=np.float64)
        x1, x2 = rng.uniform(0, 1, (3, 4)), rng.uniform(0, 1, (3, 4))
        y = np.array([0, 1, 2])
        adv1, pgi1 = bp_round(model, x1, y, bp, cfg, rng)
        adv2, pgi2 = bp_round(model, x2, y, bp, cfg, rng)
        bp_ok = (not pgi1.any()) and pgi2.tobytes() == adv1.tobytes()

        ep = EpochPrior(4, (4,), epsilon=0.1, rng=rng, dtype=np.float64)
        ids = np.array([1, 3])
        first = ep.delta[ids].copy()
        adv_a, pgi_a = ep_round(model, x1[:2], y[:2], ids, ep, cfg)
        _, pgi_b = ep_round(model, x1[:2], y[:2], ids, ep, cfg)
        ep_ok = pgi_a.tobytes() == first.tobytes() and pgi_b.tobytes() == adv_a.tobytes()
        verdict("criterion 4b (bp/ep handoff sequences)", bp_ok and ep_ok)

    def test_mu_zero_bit_exact_vs_fgsm(self):
        model = init_model({"kind": "mlp", "in_dim": 4, "hidden": 6, "classes": 3}, seed=2)
        rng = np.random.default_rng(13)
        prior = MomentumEpochPrior(3, (4,), epsilon=0.1, mu=0.0, rng=rng)
        prior.eta[:] = 0.0
        x = rng.uniform(0, 1, (3, 4))
        y = np.array([0, 1, 2])
        cfg = AttackConfig(epsilon=0.1, alpha=0.1, clamp_input=True)
        adv, _ = mep_round(model, x, y, np.arange(3), prior, cfg)
        ref = fgsm_step(model, x, y, np.zeros_like(x), cfg)
        verdict("criterion 4c (mu=0 mep == zero-init fgsm, bit-exact)",
                adv.tobytes() == ref.tobytes())


# ---------------------------------------------------------------------------
# criterion 5: equivalences
# ---------------------------------------------------------------------------


class TestCriterion5Equivalences:
    def test_pgd1_equals_fgsm_bit_exact(self):
        model = init_model({"kind": "mlp", "in_dim": 6, "hidden": 8, "classes": 3}, seed=3)
        rng = np.random.default_rng(14)
        x = rng.uniform(0, 1, (4, 6))
        y = np.array([0, 1, 2, 0])
        cfg = AttackConfig(epsilon=0.08, alpha=0.08, steps=1, init="zero")
        a = pgd_attack(model, x, y, cfg)
        b = fgsm_step(model, x, y, np.zeros_like(x), cfg)
        verdict("criterion 5a (pgd k=1 == fgsm, bit-exact)", a.tobytes() == b.tobytes())

    def test_forced_pgi_trajectory_bit_exact_3_epochs(self):
        train = synth_blobs(60, d=8, k=3, spread=0.08, seed=0)
        test = synth_blobs(30, d=8, k=3, spread=0.08, seed=1)

        def run(use_reg):
            cfg = TrainConfig(variant="fgsm_mep", use_regularizer=use_reg, lam=10.0,
                              epsilon=0.05, epochs=3, batch_size=16, seed=5,
                              eval_attack=pgd10_config(0.05, steps=3),
                              force_pgi_equal_adv=use_reg)
            model = init_model({"kind": "mlp", "in_dim": 8, "hidden": 12, "classes": 3}, seed=5)
            optim = make_sgd(lr=0.05, epochs=3)
            result = run_training(model, train, test, cfg, optim)
            history = [{k: v for k, v in asdict(r).items() if k != "wall_ms"}
                       for r in result.history]
            params = {n: p.data.tobytes() for n, p in model.named_parameters().items()}
            return history, params

        hist_reg, params_reg = run(True)
        hist_plain, params_plain = run(False)
        verdict("criterion 5b (forced-pgi regularized == unregularized, 3 epochs)",
                hist_reg == hist_plain and params_reg == params_plain)


# ---------------------------------------------------------------------------
# criteria 6 and 7: catastrophic overfitting and the ablation ordering
# ---------------------------------------------------------------------------

# Stand-in experiment: stroke-glyph images at MNIST-style epsilon. No real
# CIFAR-10/MNIST files ship with the repo, so the qualitative phenomenon is
# reproduced on the synthetic set (see README and the ledger).
EXPERIMENT = dict(
    size=16, train_n=10000, test_n=1000, classes=10, noise=0.15,
    channels=[32, 64], fc_dim=256, epsilon=0.22, epochs=30, batch_size=128,
    lr=0.1, momentum=0.9, weight_decay=5e-4, seed=0, lam=10.0, mu=0.3,
)


def _experiment_data():
    train = synth_shapes(EXPERIMENT["train_n"], size=EXPERIMENT["size"],
                         k=EXPERIMENT["classes"], seed=0, noise=EXPERIMENT["noise"])
    test = synth_shapes(EXPERIMENT["test_n"], size=EXPERIMENT["size"],
                        k=EXPERIMENT["classes"], seed=1, noise=EXPERIMENT["noise"])
    return train, test


def _experiment_run(variant, use_reg, train, test, alpha=None):
    e = EXPERIMENT
    desc = {"kind": "smallcnn", "in_channels": 1, "image_hw": [e["size"], e["size"]],
            "channels": list(e["channels"]), "fc_dim": e["fc_dim"], "classes": e["classes"]}
    cfg = TrainConfig(variant=variant, use_regularizer=use_reg, lam=e["lam"],
                      epsilon=e["epsilon"], alpha=alpha, mu=e["mu"], epochs=e["epochs"],
                      batch_size=e["batch_size"], seed=e["seed"],
                      eval_attack=pgd10_config(e["epsilon"]))
    model = init_model(desc, seed=e["seed"])
    optim = make_sgd(lr=e["lr"], momentum=e["momentum"],
                     weight_decay=e["weight_decay"], epochs=e["epochs"])

    def sink(rec):
        print(f"    {variant}{'+reg' if use_reg else '':5s} ep {rec.epoch:2d} "
              f"clean {rec.clean_acc:.3f} robust {rec.robust_acc_pgd10:.3f} "
              f"asr {rec.asr_train:.3f}", flush=True)

    return run_training(model, train, test, cfg, optim, sink=sink)


@pytest.fixture(scope="module")
def experiment_runs():
    train, test = _experiment_data()
    runs = {}
    for key, variant, reg, alpha in (
            ("fgsm_at", "fgsm_at", False, None),
            ("mep_reg", "fgsm_mep", True, None),
            ("mep_noreg", "fgsm_mep", False, None),
            ("rs", "fgsm_rs", False, EXPERIMENT["epsilon"]),  # matched alpha
    ):
        print(f"\n  training {key} ({EXPERIMENT['epochs']} epochs)...", flush=True)
        t0 = time.perf_counter()
        runs[key] = _experiment_run(variant, reg, train, test, alpha=alpha)
        print(f"  {key} done in {time.perf_counter()-t0:.0f}s", flush=True)
    return runs


class TestCriterion6CatastrophicOverfitting:
    def test_fgsm_at_collapses_and_mep_does_not(self, experiment_runs):
        at = experiment_runs["fgsm_at"]
        mep = experiment_runs["mep_reg"]
        at_max_asr = max(r.asr_train for r in at.history)
        mep_final = mep.history[-1].robust_acc_pgd10
        ok = (at.co_epoch is not None
              and at_max_asr > 0.95
              and mep.co_epoch is None
              and mep_final >= 0.15)
        verdict("criterion 6 (CO reproduction)", ok,
                f"fgsm_at CO at epoch {at.co_epoch}, max ASR {at_max_asr:.3f}; "
                f"fgsm_mep CO={mep.co_epoch}, final robust {mep_final:.3f}")


class TestCriterion7AblationOrdering:
    def test_regularizer_and_rs_ordering(self, experiment_runs):
        mep_reg = experiment_runs["mep_reg"]
        mep_noreg = experiment_runs["mep_noreg"]
        rs = experiment_runs["rs"]
        reg_final = mep_reg.history[-1].robust_acc_pgd10
        noreg_final = mep_noreg.history[-1].robust_acc_pgd10
        rs_final = rs.history[-1].robust_acc_pgd10
        ok = (reg_final >= noreg_final - 0.02
              and mep_reg.co_epoch is None and mep_noreg.co_epoch is None
              and (rs.co_epoch is not None or rs_final <= reg_final - 0.10))
        verdict("criterion 7 (ablation ordering)", ok,
                f"mep+reg {reg_final:.3f} vs mep {noreg_final:.3f} "
                f"(tolerance -0.02); rs CO={rs.co_epoch}, rs final {rs_final:.3f}")


# ---------------------------------------------------------------------------
# criterion 8: determinism of the CLI metrics log
# ---------------------------------------------------------------------------


class TestCriterion8Determinism:
    def test_equal_seeds_byte_identical_jsonl(self, tmp_path):
        cfg_text = (
            "variant = fgsm_mep\nuse_regularizer = true\nepsilon = 0.05\n"
            "epochs = 2\nbatch_size = 16\nseed = 11\nlr = 0.05\nmodel = mlp\n"
            "hidden = 12\ndataset = synth_blobs\nclasses = 3\ntrain_n = 48\n"
            "test_n = 24\nblob_d = 8\neval_steps = 3\n")
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(cfg_text)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert cli_main(["train", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert cli_main(["train", "--config", str(cfg_path), "--out", str(out2)]) == 0
        same = (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()
        verdict("criterion 8 (byte-identical JSONL)", same)


# ---------------------------------------------------------------------------
# criterion 9: format fidelity
# ---------------------------------------------------------------------------


class TestCriterion9FormatFidelity:
    def test_idx_and_cifar_round_trips_and_errors(self, tmp_path):
        rng = np.random.default_rng(15)
        gray = Dataset(rng.integers(0, 256, (6, 1, 9, 7)).astype(np.float64) / 255.0,
                       rng.integers(0, 10, 6), 10)
        write_idx(gray, tmp_path / "i.idx", tmp_path / "l.idx")
        idx_back = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
        idx_ok = (idx_back.images.tobytes() == gray.images.tobytes()
                  and idx_back.labels.tobytes() == gray.labels.tobytes())

        color = Dataset(rng.integers(0, 256, (5, 3, 32, 32)).astype(np.float64) / 255.0,
                        rng.integers(0, 10, 5), 10)
        write_cifar_binary(color, tmp_path / "c.bin")
        cif_back = load_cifar_binary([tmp_path / "c.bin"])
        cifar_ok = cif_back.images.tobytes() == color.images.tobytes()

        errors_ok = True
        bad_magic = tmp_path / "bad.idx"
        bad_magic.write_bytes(b"\x00\x00\x08\x05" + b"\x00" * 12)
        try:
            load_idx(bad_magic, tmp_path / "l.idx")
            errors_ok = False
        except FormatError:
            pass
        truncated = tmp_path / "short.idx"
        truncated.write_bytes(b"\x00\x00\x08\x03" + (10).to_bytes(4, "big")
                              + (2).to_bytes(4, "big") + (2).to_bytes(4, "big") + bytes(7))
        try:
            load_idx(truncated, tmp_path / "l.idx")
            errors_ok = False
        except LengthError:
            pass
        odd = tmp_path / "odd.bin"
        odd.write_bytes(bytes(3072))
        try:
            load_cifar_binary([odd])
            errors_ok = False
        except FormatError:
            pass
        verdict("criterion 9 (format fidelity)", idx_ok and cifar_ok and errors_ok)

"""Outer minimization loops for every training variant, plus evaluation,
catastrophic-overfitting detection and the best/last checkpoint policy.

All randomness inside a run derives from TrainConfig.seed through fixed
per-purpose streams, so identical configs reproduce identical metric
histories bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .attacks import AttackConfig, admissible, fgsm_step, pgd_attack, pgd10_config, predict, random_init
from .data import BatchIterator, Dataset, augment
from .errors import ConfigError, NumericError
from .models import Model
from .optim import SGDState, sgd_step
from .priors import BatchPrior, EpochPrior, MomentumEpochPrior, bp_round, ep_round, mep_round
from .tensor import Tensor, one_hot, softmax_cross_entropy

VARIANTS = ("fgsm_at", "fgsm_rs", "pgd_at", "fgsm_bp", "fgsm_ep", "fgsm_mep")


@dataclass
class TrainConfig:
    variant: str = "fgsm_mep"
    use_regularizer: bool = False
    lam: float = 10.0
    epsilon: float = 8 / 255
    alpha: Optional[float] = None  # None -> 1.25*eps for fgsm_rs, eps otherwise
    mu: float = 0.3
    epochs: int = 30
    batch_size: int = 128
    seed: int = 0
    pgd_k: int = 2  # inner steps for the pgd_at variant
    clamp_input: bool = True
    augment: bool = False
    eval_attack: Optional[AttackConfig] = None  # None -> PGD-10 at eps, alpha=eps/4
    force_pgi_equal_adv: bool = False  # diagnostic: regularizer sees identical pairs

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.use_regularizer and not self.lam > 0:
            raise ConfigError(f"use_regularizer needs lambda > 0, got {self.lam}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.mu < 1.0:
            raise ConfigError(f"mu must be in [0, 1), got {self.mu}")
        if self.epochs < 0 or self.batch_size < 1 or self.pgd_k < 1:
            raise ConfigError("epochs must be >= 0, batch_size and pgd_k >= 1")
        if self.eval_attack is None:
            self.eval_attack = pgd10_config(self.epsilon, clamp_input=self.clamp_input)

    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 1.25 * self.epsilon if self.variant == "fgsm_rs" else self.epsilon

    def attack_config(self) -> AttackConfig:
        alpha = self.resolved_alpha()
        if alpha <= 0:
            alpha = 1.0  # eps == 0: steps project to zero anyway
        return AttackConfig(
            epsilon=self.epsilon, alpha=alpha,
            steps=self.pgd_k if self.variant == "pgd_at" else 1,
            init="zero", clamp_input=self.clamp_input)


@dataclass
class RunRecord:
    epoch: int
    clean_acc: float
    robust_acc_pgd10: float
    asr_train: float
    mean_delta_l2: float
    loss: float
    wall_ms: int = 0


class BestLast(NamedTuple):
    best: int
    last: int


def make_priors(cfg: TrainConfig, n_train: int, sample_shape, rng: np.random.Generator):
    """Buffer object for the variant, or None for the prior-free baselines."""
    if cfg.variant == "fgsm_bp":
        return BatchPrior(cfg.epsilon)
    if cfg.variant == "fgsm_ep":
        return EpochPrior(n_train, sample_shape, cfg.epsilon, rng)
    if cfg.variant == "fgsm_mep":
        return MomentumEpochPrior(n_train, sample_shape, cfg.epsilon, cfg.mu, rng)
    return None


def variant_round(model: Model, x: np.ndarray, y: np.ndarray, ids: np.ndarray,
                  cfg: TrainConfig, priors, attack: AttackConfig,
                  rng: np.random.Generator):
    """Dispatch one inner-maximization round; returns (delta_adv, delta_pgi)."""
    if cfg.variant == "fgsm_at":
        zero = np.zeros_like(x)
        return fgsm_step(model, x, y, zero, attack), zero
    if cfg.variant == "fgsm_rs":
        eta = admissible(x, random_init(x.shape, cfg.epsilon, rng), attack)
        return fgsm_step(model, x, y, eta, attack), eta
    if cfg.variant == "pgd_at":
        zero = np.zeros_like(x)
        return pgd_attack(model, x, y, attack), zero
    if cfg.variant == "fgsm_bp":
        return bp_round(model, x, y, priors, attack, rng)
    if cfg.variant == "fgsm_ep":
        return ep_round(model, x, y, ids, priors, attack)
    if cfg.variant == "fgsm_mep":
        return mep_round(model, x, y, ids, priors, attack)
    raise ConfigError(f"no round implementation for variant {cfg.variant!r}")


def regularized_loss(model: Model, x: np.ndarray, y: np.ndarray,
                     delta_adv: np.ndarray, delta_pgi: np.ndarray, lam: float):
    """CE on x+delta_adv plus lam * batch-mean squared L2 between the two logits.

    Returns (loss, logits_adv); gradients flow through both forward branches.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    logits_adv = model.forward(Tensor(x + delta_adv))
    y1h = one_hot(y, logits_adv.shape[1], dtype=logits_adv.data.dtype)
    ce = softmax_cross_entropy(logits_adv, y1h)
    logits_pgi = model.forward(Tensor(x + delta_pgi))
    diff = logits_adv - logits_pgi
    penalty = (diff * diff).sum() * (1.0 / x.shape[0])
    return ce + lam * penalty, logits_adv


@dataclass
class EpochStats:
    loss: float
    asr_train: float
    mean_delta_l2: float


def train_epoch(model: Model, data: Dataset, cfg: TrainConfig, priors,
                optim: SGDState, epoch: int, rng: np.random.Generator) -> EpochStats:
    """One shuffled pass: per batch generate (delta_adv, delta_pgi), step SGD.

    ASR counts generated examples that flip a prediction among samples the
    pre-step model classifies correctly clean.
    """
    attack = cfg.attack_config()
    iterator = BatchIterator(len(data), cfg.batch_size, seed=cfg.seed)
    loss_sum = 0.0
    l2_sum = 0.0
    asr_hits = 0
    asr_base = 0
    count = 0
    for ids in iterator.batches(epoch):
        x = data.images[ids]
        y = data.labels[ids]
        if cfg.augment:
            x = augment(x, rng)
        delta_adv, delta_pgi = variant_round(model, x, y, ids, cfg, priors, attack, rng)
        if cfg.force_pgi_equal_adv:
            delta_pgi = delta_adv

        if cfg.use_regularizer:
            loss, logits_adv = regularized_loss(model, x, y, delta_adv, delta_pgi, cfg.lam)
        else:
            logits_adv = model.forward(Tensor(x + delta_adv))
            loss = softmax_cross_entropy(
                logits_adv, one_hot(y, logits_adv.shape[1], dtype=logits_adv.data.dtype))
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NumericError(f"non-finite training loss at epoch {epoch}")

        # metrics against the pre-step model
        clean_correct = predict(model, x) == y
        adv_wrong = logits_adv.data.argmax(axis=1) != y
        asr_hits += int((adv_wrong & clean_correct).sum())
        asr_base += int(clean_correct.sum())
        l2_sum += float(np.sqrt((delta_adv.reshape(len(ids), -1) ** 2).sum(axis=1)).sum())
        loss_sum += loss_value * len(ids)
        count += len(ids)

        model.zero_grad()
        loss.backward()
        sgd_step(model, optim, epoch)
        model.zero_grad()
    return EpochStats(
        loss=loss_sum / max(count, 1),
        asr_train=asr_hits / asr_base if asr_base else 0.0,
        mean_delta_l2=l2_sum / max(count, 1),
    )


def evaluate(model: Model, data: Dataset, eval_attack: AttackConfig,
             rng: np.random.Generator, batch_size: int = 256) -> tuple[float, float]:
    """(clean accuracy, robust accuracy under the configured PGD attack)."""
    clean_hits = 0
    robust_hits = 0
    for start in range(0, len(data), batch_size):
        x = data.images[start:start + batch_size]
        y = data.labels[start:start + batch_size]
        clean_hits += int((predict(model, x) == y).sum())
        delta = pgd_attack(model, x, y, eval_attack, rng=rng)
        robust_hits += int((predict(model, x + delta) == y).sum())
    n = max(len(data), 1)
    return clean_hits / n, robust_hits / n


def detect_catastrophic_overfitting(history: list[RunRecord], collapse: float = 0.02,
                                    healthy: float = 0.10) -> Optional[int]:
    """First epoch whose robust accuracy fell below `collapse` after having
    exceeded `healthy` earlier; None if that never happens."""
    peak = 0.0
    for rec in history:
        if peak > healthy and rec.robust_acc_pgd10 < collapse:
            return rec.epoch
        peak = max(peak, rec.robust_acc_pgd10)
    return None


def checkpoint_policy(history: list[RunRecord]) -> BestLast:
    """best = argmax robust accuracy (earliest on ties), last = final epoch."""
    if not history:
        raise ConfigError("checkpoint_policy needs a non-empty history")
    best = 0
    for i, rec in enumerate(history):
        if rec.robust_acc_pgd10 > history[best].robust_acc_pgd10:
            best = i
    return BestLast(best=history[best].epoch, last=history[-1].epoch)


@dataclass
class TrainResult:
    history: list[RunRecord] = field(default_factory=list)
    co_epoch: Optional[int] = None
    choice: Optional[BestLast] = None
    best_params: Optional[dict[str, np.ndarray]] = None
    priors: object = None  # the variant's buffer object, for checkpoint embedding


def run_training(model: Model, train_data: Dataset, test_data: Dataset,
                 cfg: TrainConfig, optim: SGDState,
                 sink: Optional[Callable[[RunRecord], None]] = None,
                 on_epoch: Optional[Callable[[int, Model, RunRecord], None]] = None) -> TrainResult:
    """Full training run with per-epoch evaluation and CO detection."""
    seed_root = int(cfg.seed)
    rng_attack = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0xA77ACC, seed_root])))
    rng_prior = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0x9B10B, seed_root])))
    rng_eval = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0xE7A1, seed_root])))

    priors = make_priors(cfg, len(train_data), train_data.sample_shape, rng_prior)
    result = TrainResult(priors=priors)
    best_robust = -1.0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        stats = train_epoch(model, train_data, cfg, priors, optim, epoch, rng_attack)
        clean_acc, robust_acc = evaluate(model, test_data, cfg.eval_attack, rng_eval)
        record = RunRecord(
            epoch=epoch, clean_acc=clean_acc, robust_acc_pgd10=robust_acc,
            asr_train=stats.asr_train, mean_delta_l2=stats.mean_delta_l2,
            loss=stats.loss, wall_ms=int((time.perf_counter() - t0) * 1000))
        result.history.append(record)
        if robust_acc > best_robust:
            best_robust = robust_acc
            result.best_params = {n: p.data.copy() for n, p in model.named_parameters().items()}
        if sink is not None:
            sink(record)
        if on_epoch is not None:
            on_epoch(epoch, model, record)
    result.co_epoch = detect_catastrophic_overfitting(result.history)
    if result.history:
        result.choice = checkpoint_policy(result.history)
    return result

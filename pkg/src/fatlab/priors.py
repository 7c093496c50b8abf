"""Prior-guided adversarial initialization buffers.

Three flavors of "free" initialization for the FGSM step, all fed by
perturbations the training loop produced anyway:

  * BatchPrior    — the previous batch's deltas, no sample correspondence.
  * EpochPrior    — one delta slot per training sample, refreshed per epoch.
  * MomentumEpochPrior — per-sample projected perturbation eta plus a raw
    (un-signed) momentum of signed gradients g, decay mu:

        g_c   = sign(grad_x L(f(x + eta)))
        g'    = mu * g + g_c
        d_adv = proj_eps[eta + alpha * g_c]
        eta'  = proj_eps[eta + alpha * sign(g')]

Every round returns (delta_adv, delta_pgi) where delta_pgi is the
initialization actually used (what the regularizer pairs against) and
updates the buffer in place. Buffers default to float32 storage; stored
values are re-clipped after the downcast so ||.||_inf <= epsilon holds
exactly in the wider type too. With ``clamp_input`` the stored eta is
additionally re-derived against its own sample, which is well-defined
because EP/MEP slots are sample-indexed.
"""

from __future__ import annotations

import numpy as np

from .attacks import AttackConfig, admissible, fgsm_step, input_gradient, random_init, sign_fn
from .errors import ConfigError
from .models import Model

BUFFER_DTYPE = np.float32


def _store_delta(delta: np.ndarray, epsilon: float, dtype) -> np.ndarray:
    """Downcast for storage without letting rounding escape the eps-ball."""
    out = delta.astype(dtype, copy=True)
    if out.dtype != delta.dtype:
        cap = out.dtype.type(epsilon)
        if float(cap) > epsilon:
            cap = np.nextafter(cap, out.dtype.type(0))
        out = np.clip(out, -cap, cap)
    return out


def _check_ids(ids: np.ndarray, n: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)][0]
        raise IndexError(f"sample id {bad} outside buffer range [0, {n})")
    return ids


class BatchPrior:
    """Stores the previous batch's perturbations (Eq.-style handoff, no ids)."""

    def __init__(self, epsilon: float, dtype=BUFFER_DTYPE):
        self.epsilon = float(epsilon)
        self.dtype = np.dtype(dtype)
        self.delta: np.ndarray | None = None

    def _initial(self, shape, cfg: AttackConfig, rng) -> np.ndarray:
        if cfg.init == "zero":
            return np.zeros(shape)
        if cfg.init == "random_uniform":
            return random_init(shape, cfg.epsilon, rng)
        raise ConfigError("BatchPrior first batch needs init 'zero' or 'random_uniform'")

    def take(self, shape, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
        """Previous-batch deltas resized to this batch (truncate or pad)."""
        if self.delta is None:
            return self._initial(shape, cfg, rng)
        stored = self.delta.astype(np.float64)
        b = shape[0]
        if stored.shape[0] > b:
            stored = stored[:b]
        elif stored.shape[0] < b:
            pad = random_init((b - stored.shape[0],) + shape[1:], cfg.epsilon, rng)
            stored = np.concatenate([stored, pad])
        return stored

    def put(self, delta: np.ndarray):
        self.delta = _store_delta(delta, self.epsilon, self.dtype)


class EpochPrior:
    """One perturbation slot per training sample id."""

    def __init__(self, n: int, sample_shape, epsilon: float,
                 rng: np.random.Generator, dtype=BUFFER_DTYPE):
        self.epsilon = float(epsilon)
        init = random_init((n,) + tuple(sample_shape), epsilon, rng)
        self.delta = _store_delta(init, self.epsilon, np.dtype(dtype))

    def __len__(self):
        return self.delta.shape[0]

    def get(self, ids) -> np.ndarray:
        return self.delta[_check_ids(ids, len(self))].astype(np.float64)

    def put(self, ids, delta: np.ndarray):
        self.delta[_check_ids(ids, len(self))] = _store_delta(delta, self.epsilon, self.delta.dtype)


class MomentumEpochPrior:
    """Per-sample projected perturbation eta plus raw signed-gradient momentum."""

    def __init__(self, n: int, sample_shape, epsilon: float, mu: float,
                 rng: np.random.Generator, dtype=BUFFER_DTYPE):
        if not 0.0 <= mu < 1.0:
            raise ConfigError(f"momentum decay mu must be in [0, 1), got {mu}")
        self.epsilon = float(epsilon)
        self.mu = float(mu)
        dtype = np.dtype(dtype)
        eta = random_init((n,) + tuple(sample_shape), epsilon, rng)
        self.eta = _store_delta(eta, self.epsilon, dtype)
        self.g = np.zeros((n,) + tuple(sample_shape), dtype=dtype)

    def __len__(self):
        return self.eta.shape[0]


def bp_round(model: Model, x: np.ndarray, y, prior: BatchPrior, cfg: AttackConfig,
             rng: np.random.Generator, loss_fn=None):
    """FGSM from the previous batch's deltas; returns (delta_adv, delta_pgi)."""
    x = np.asarray(x)
    delta_pgi = admissible(x, prior.take(x.shape, cfg, rng), cfg)
    delta_adv = fgsm_step(model, x, y, delta_pgi, cfg, loss_fn)
    prior.put(delta_adv)
    return delta_adv, delta_pgi


def ep_round(model: Model, x: np.ndarray, y, ids, prior: EpochPrior, cfg: AttackConfig,
             loss_fn=None):
    """FGSM from this sample's previous-epoch delta; returns (delta_adv, delta_pgi)."""
    x = np.asarray(x)
    delta_pgi = admissible(x, prior.get(ids), cfg)
    delta_adv = fgsm_step(model, x, y, delta_pgi, cfg, loss_fn)
    prior.put(ids, delta_adv)
    return delta_adv, delta_pgi


def mep_round(model: Model, x: np.ndarray, y, ids, prior: MomentumEpochPrior,
              cfg: AttackConfig, loss_fn=None):
    """Momentum round; returns (delta_adv, delta_pgi) and updates (eta, g)."""
    x = np.asarray(x)
    ids = _check_ids(ids, len(prior))
    eta = admissible(x, prior.eta[ids].astype(np.float64), cfg)
    g_prev = prior.g[ids].astype(np.float64)

    g_c = sign_fn(input_gradient(model, x, y, eta, loss_fn))
    g_new = prior.mu * g_prev + g_c
    delta_adv = admissible(x, eta + cfg.alpha * g_c, cfg)
    eta_new = admissible(x, eta + cfg.alpha * sign_fn(g_new), cfg)

    prior.eta[ids] = _store_delta(eta_new, prior.epsilon, prior.eta.dtype)
    prior.g[ids] = g_new.astype(prior.g.dtype)
    return delta_adv, eta

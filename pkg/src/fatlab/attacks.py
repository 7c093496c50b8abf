"""Inner-maximization primitives: FGSM steps and multi-step PGD.

Perturbations are plain numpy arrays shaped like the input batch; every
function here returns deltas satisfying ||delta||_inf <= epsilon, and,
when ``clamp_input`` is set, x + delta inside the configured data range.
Attacks never mutate model parameters (the forward/backward runs inside
``model.frozen()``).

Labels ``y`` may be integer class ids [B] or a one-hot [B, K] array. A
custom ``loss_fn(logits, y) -> scalar Tensor`` replaces cross-entropy
where a test objective is wanted (e.g. a linear functional).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .models import Model
from .tensor import Tensor, one_hot, softmax_cross_entropy

INIT_MODES = ("zero", "random_uniform", "provided")


@dataclass
class AttackConfig:
    epsilon: float
    alpha: float
    steps: int = 1
    init: str = "zero"
    clamp_input: bool = True
    data_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got {self.init!r}")


def pgd10_config(epsilon: float, steps: int = 10, alpha: float | None = None,
                 clamp_input: bool = True) -> AttackConfig:
    """Evaluation-attack defaults: random init, alpha = epsilon/4 (2/255 at 8/255)."""
    if alpha is None:
        alpha = epsilon / 4 if epsilon > 0 else 1.0  # at eps=0 every step projects to 0
    return AttackConfig(epsilon=epsilon, alpha=alpha, steps=steps,
                        init="random_uniform", clamp_input=clamp_input)


def sign_fn(g: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) == 0."""
    return np.sign(g)


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    return np.clip(delta, -epsilon, epsilon)


def random_init(shape, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    return rng.uniform(-epsilon, epsilon, size=shape)


def admissible(x: np.ndarray, delta: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Project delta into the eps-ball and, if clamping, the data range.

    The trailing eps-projection keeps ||delta||_inf <= epsilon exact even
    when the clip(x+delta)-x re-derivation rounds a coordinate up by one
    ulp; where it binds, x + delta only moves further inside the range.
    """
    delta = project_linf(delta, cfg.epsilon)
    if cfg.clamp_input:
        lo, hi = cfg.data_range
        delta = project_linf(np.clip(x + delta, lo, hi) - x, cfg.epsilon)
    return delta


def _ce(logits: Tensor, y) -> Tensor:
    y = np.asarray(y)
    if y.ndim == 1:
        y = one_hot(y, logits.shape[1], dtype=logits.dtype)
    return softmax_cross_entropy(logits, y)


def input_gradient(model: Model, x: np.ndarray, y, delta: np.ndarray, loss_fn=None) -> np.ndarray:
    """Gradient of the loss w.r.t. the perturbed input x + delta."""
    adv = Tensor(x + delta, requires_grad=True)
    with model.frozen():
        loss = (loss_fn or _ce)(model.forward(adv), y)
        loss.backward()
    return adv.grad


def fgsm_step(model: Model, x: np.ndarray, y, init: np.ndarray, cfg: AttackConfig,
              loss_fn=None) -> np.ndarray:
    """One signed-gradient ascent step from ``init``, projected to the eps-ball."""
    x = np.asarray(x)
    init = np.asarray(init)
    if init.shape != x.shape:
        raise DimensionError(f"fgsm_step: x {x.shape} vs init {init.shape}")
    start = admissible(x, init, cfg)
    g = input_gradient(model, x, y, start, loss_fn)
    return admissible(x, start + cfg.alpha * sign_fn(g), cfg)


def pgd_attack(model: Model, x: np.ndarray, y, cfg: AttackConfig,
               rng: np.random.Generator | None = None, init: np.ndarray | None = None,
               loss_fn=None) -> np.ndarray:
    """cfg.steps chained FGSM steps from the configured initialization."""
    x = np.asarray(x)
    if cfg.init == "zero":
        delta = np.zeros_like(x)
    elif cfg.init == "random_uniform":
        if rng is None:
            raise ConfigError("pgd_attack: init='random_uniform' needs an rng")
        delta = random_init(x.shape, cfg.epsilon, rng)
    else:
        if init is None:
            raise ConfigError("pgd_attack: init='provided' needs an init array")
        delta = np.asarray(init)
    for _ in range(cfg.steps):
        delta = fgsm_step(model, x, y, delta, cfg, loss_fn)
    return delta


def predict(model: Model, x: np.ndarray) -> np.ndarray:
    """Argmax class ids without touching the tape."""
    with model.frozen():
        logits = model.forward(Tensor(np.asarray(x)))
    return logits.data.argmax(axis=1)

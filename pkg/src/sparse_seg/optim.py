"""SGD with momentum and RMSProp update rules.

Both steps update parameter and accumulator arrays in place and return them.

RMSProp::

    v     <- rho * v + (1 - rho) * g**2
    theta <- theta - lr * g / (sqrt(v) + eps)

SGDM::

    u     <- mu * u + g
    theta <- theta - lr * u
"""

from dataclasses import dataclass

import numpy as np

KINDS = ("sgdm", "rmsprop")


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name, iteration=None):
        self.name = name
        self.iteration = iteration
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"non-finite gradient for {name}{where}")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "rmsprop"
    learning_rate: float = 1e-5
    rmsprop_decay: float = 0.99
    epsilon: float = 1e-8
    momentum: float = 0.9
    minibatch: int = 16
    epochs: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"optimizer kind must be one of {KINDS}, got {self.kind!r}")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError(f"rmsprop_decay must be in (0, 1), got {self.rmsprop_decay}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        # lr = 0 is allowed: it freezes the network, which is handy for checks
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        for name in ("minibatch", "epochs"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


def init_state(params):
    """Zero accumulators, one per parameter."""
    return {name: np.zeros_like(p) for name, p in params.items()}


def _check(params, grads, state):
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise ValueError(f"gradient {name} does not align with the parameters")
        if not np.isfinite(g).all():
            raise NonFiniteGradient(name)
    missing = set(params) - set(state)
    if missing:
        raise ValueError(f"optimizer state missing {sorted(missing)}")


def rmsprop_step(params, grads, state, cfg):
    _check(params, grads, state)
    rho = cfg.rmsprop_decay
    for name, g in grads.items():
        v = state[name]
        v *= rho
        v += (1 - rho) * g * g
        params[name] -= cfg.learning_rate * g / (np.sqrt(v) + cfg.epsilon)
    return params, state


def sgdm_step(params, grads, state, cfg):
    _check(params, grads, state)
    for name, g in grads.items():
        u = state[name]
        u *= cfg.momentum
        u += g
        params[name] -= cfg.learning_rate * u
    return params, state


STEPS = {"rmsprop": rmsprop_step, "sgdm": sgdm_step}

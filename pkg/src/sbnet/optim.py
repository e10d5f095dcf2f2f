"""Adam on a flat parameter vector and a per-epoch exponential LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from sbnet.errors import ConfigError, DimensionError


@dataclass(frozen=True)
class LrSchedule:
    lr0: float = 1e-5
    gamma: float = 0.95

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be > 0")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")


def lr_at(sched: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return sched.lr0 * sched.gamma**epoch


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def zeros(cls, n: int, beta1: float = 0.9, beta2: float = 0.999, eps_adam: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps_adam)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if params.shape != state.m.shape or grads.shape != state.m.shape:
        raise DimensionError(f"params {params.shape} / grads {grads.shape} vs state {state.m.shape}")
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
    return new_params, replace(state, m=m, v=v, t=t)


def flatten(arrays: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(arrays[k]) for k in sorted(arrays)])


def unflatten(flat: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    need = sum(a.size for a in like.values())
    if need != flat.size:
        raise DimensionError(f"flat vector has {flat.size} entries, layout needs {need}")
    out = {}
    pos = 0
    for k in sorted(like):
        n = like[k].size
        out[k] = flat[pos : pos + n].reshape(like[k].shape)
        pos += n
    return out

"""Adam over a dict of named parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    eta: float = 0.1
    beta1: float = 0.96
    beta2: float = 0.9999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")


@dataclass(frozen=True)
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def adam_init(params: dict[str, np.ndarray], cfg: AdamConfig | None = None) -> AdamState:
    # cfg is accepted so an invalid configuration fails before the first step
    return AdamState(0, {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
                     {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()})


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              cfg: AdamConfig) -> tuple[AdamState, dict[str, np.ndarray]]:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
    t = state.t + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    m, v, new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for '{name}' has shape {g.shape}, parameter {p.shape}")
        m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        new[name] = p - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamState(t, m, v), new

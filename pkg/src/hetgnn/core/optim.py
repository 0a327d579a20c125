"""Adam and the cosine-decay learning-rate schedule."""

import dataclasses
import logging
import math

import numpy as np

log = logging.getLogger(__name__)


@dataclasses.dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = dataclasses.field(default_factory=dict)
    v: dict = dataclasses.field(default_factory=dict)


def adam_step(params, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update of `params` in place.

    Parameters without a gradient are skipped (with a warning) and keep
    their moments untouched.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in list(params):
        g = grads.get(name)
        if g is None:
            log.warning("no gradient for parameter %r; skipping", name)
            continue
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        g64 = g.astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float64)
            v = np.zeros(p.shape, dtype=np.float64)
        m = state.beta1 * m + (1.0 - state.beta1) * g64
        v = state.beta2 * v + (1.0 - state.beta2) * g64 * g64
        state.m[name], state.v[name] = m, v
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        params[name] = (p.astype(np.float64) - update).astype(p.dtype)


def cosine_decay_lr(step: int, total_steps: int, base_lr: float, floor_fraction: float = 0.0) -> float:
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    progress = min(max(step, 0), total_steps) / total_steps
    return base_lr * (floor_fraction + (1.0 - floor_fraction) * 0.5 * (1.0 + math.cos(math.pi * progress)))

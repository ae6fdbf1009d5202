"""Adam optimizer over a ParamStore."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ParamStore


@dataclass
class AdamState:
    m: ParamStore
    v: ParamStore
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like(), step=0)


def adam_step(params: ParamStore, grads: ParamStore, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i, (name, fieldname, p) in enumerate(params.entries):
        g = grads.entries[i][2]
        m = beta1 * state.m.entries[i][2] + (1.0 - beta1) * g
        v = beta2 * state.v.entries[i][2] + (1.0 - beta2) * g * g
        state.m.entries[i] = (name, fieldname, m)
        state.v.entries[i] = (name, fieldname, v)
        params.entries[i] = (name, fieldname, p - lr * (m / c1) / (np.sqrt(v / c2) + eps))

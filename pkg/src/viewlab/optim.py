"""Minimal first-order optimizers shared by the trainer and the attack.

Operates on lists of numpy arrays so callers can mix parameter shapes
freely. Adam follows the standard bias-corrected moment updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(arrays: list) -> AdamState:
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        t=0,
    )


def adam_step(
    arrays: list,
    grads: list,
    state: AdamState,
    lr: float,
    maximize: bool = False,
) -> list:
    """One Adam update; mutates ``state``, returns new arrays.

    ``maximize=True`` ascends the gradient instead of descending it.
    """
    state.t += 1
    t = state.t
    sign = 1.0 if maximize else -1.0
    out = []
    for i, (a, g) in enumerate(zip(arrays, grads)):
        state.m[i] = ADAM_BETA1 * state.m[i] + (1 - ADAM_BETA1) * g
        state.v[i] = ADAM_BETA2 * state.v[i] + (1 - ADAM_BETA2) * g * g
        m_hat = state.m[i] / (1 - ADAM_BETA1**t)
        v_hat = state.v[i] / (1 - ADAM_BETA2**t)
        out.append(a + sign * lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
    return out


def sgd_step(arrays: list, grads: list, lr: float, maximize: bool = False) -> list:
    sign = 1.0 if maximize else -1.0
    return [a + sign * lr * g for a, g in zip(arrays, grads)]

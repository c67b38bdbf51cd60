"""
Adam with bias correction and L2 weight decay folded into the update:

    m <- b1 m + (1 - b1) g
    v <- b2 v + (1 - b2) g^2
    p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from spatiospatial.utils.errors import ContractError
from spatiospatial.utils.numerics import adam_apply, adam_moments

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, config):
        return cls(beta1=config.beta1, beta2=config.beta2, eps=config.eps)


def _named(params):
    if isinstance(params, dict):
        return list(params.items())
    params = list(params)
    if params and isinstance(params[0], tuple):
        return params
    return [(str(i), p) for i, p in enumerate(params)]


def adam_step(params, state, config):
    """
    One optimiser step over every parameter holding a gradient.

    Parameters with ``requires_grad`` False (frozen) or without a gradient are
    left alone, and their moments are not advanced. Buffers are created lazily
    as zeros the first time a parameter is stepped.
    Args:
        params: Named parameters (dict or (name, Tensor) pairs) or a list.
        state (AdamState): Moments and step counter, updated in place.
        config (TrainConfig): learning_rate and weight_decay.
    Returns:
        AdamState: ``state``.
    Raises:
        ContractError: a gradient or stored moment does not match its parameter.
    """
    named = _named(params)
    for name, p in named:
        if p.grad is not None and p.grad.shape != p.shape:
            raise ContractError(f"gradient shape {p.grad.shape} does not match parameter {name!r} {p.shape}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ContractError(
                f"optimiser state for {name!r} has shape {state.m[name].shape}, parameter has {p.shape}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in named:
        if not p.requires_grad or p.grad is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.dtype != p.dtype:
            m = state.m[name] = m.astype(p.dtype)
            v = state.v[name] = v.astype(p.dtype)
        adam_moments(m, v, p.grad.astype(p.dtype, copy=False), state.beta1, state.beta2)
        adam_apply(p.data, m, v, config.learning_rate, state.eps, bc1, bc2, config.weight_decay)
    return state

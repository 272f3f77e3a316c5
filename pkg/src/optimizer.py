import typing

from jax import numpy as jnp

from .backend import stable_rsqrt
from .context import Optimizer


class AdamState(typing.NamedTuple):
    avg: jnp.ndarray
    square: jnp.ndarray

    @classmethod
    def zeros_like(cls, params: jnp.ndarray) -> 'AdamState':
        return cls(jnp.zeros_like(params), jnp.zeros_like(params))


def ema(state: jnp.ndarray, inp: jnp.ndarray, step: int, beta: float) -> typing.Tuple[jnp.ndarray, jnp.ndarray]:
    new_state = state * beta + inp * (1 - beta)
    return new_state, new_state / (1 - beta ** (step + 1))  # debias


def square_ema(opt: Optimizer, state: jnp.ndarray, grad: jnp.ndarray, step: int
               ) -> typing.Tuple[jnp.ndarray, jnp.ndarray]:  # == rmsprop
    new_state, buffer = ema(state, jnp.square(grad), step, 1 - opt.adam_beta2)
    return new_state, stable_rsqrt(buffer, opt.epsilon)


def adam(opt: Optimizer, state: AdamState, grad: jnp.ndarray, step: int) -> typing.Tuple[jnp.ndarray, AdamState]:
    avg, debiased = ema(state.avg, grad, step, 1 - opt.adam_beta1)
    square, scale = square_ema(opt, state.square, grad, step)
    return debiased * scale, AdamState(avg, square)


def clip_norm(val: jnp.ndarray, min_norm: float) -> jnp.ndarray:
    return jnp.maximum(jnp.sqrt(jnp.square(val).sum()), min_norm)


def get_current_lr(opt: Optimizer, step: int, scale: float = 1.) -> float:
    return opt.learning_rate * scale * (1 - opt.exponential_decay) ** step


def update(opt: Optimizer, params: jnp.ndarray, grad: jnp.ndarray, state: AdamState, step: int,
           lower: jnp.ndarray, upper: jnp.ndarray, scale: float = 1.) -> typing.Tuple[jnp.ndarray, AdamState]:
    """One Adam descent step followed by projection onto the box [lower, upper]."""
    direction, state = adam(opt, state, grad, step)
    params = params - get_current_lr(opt, step, scale) * direction
    return jnp.clip(params, lower, upper), state

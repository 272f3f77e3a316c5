import typing

import jax

jax.config.update("jax_enable_x64", True)

from jax import lax, numpy as jnp, random  # noqa: E402

COMPLEX = jnp.complex128
REAL = jnp.float64


def as_complex(inp: typing.Any) -> jnp.ndarray:
    return jnp.asarray(inp, dtype=COMPLEX)


def stable_rsqrt(inp: jnp.ndarray, eps: float) -> jnp.ndarray:
    return jnp.reciprocal(jnp.maximum(jnp.sqrt(jnp.maximum(inp, 0)), eps))


def all_finite(inp: jnp.ndarray) -> bool:
    return bool(jnp.all(jnp.isfinite(inp)))


def stream_key(seed: int, purpose: int, index: typing.Optional[int] = None) -> jnp.ndarray:
    key = random.fold_in(random.PRNGKey(seed), purpose)
    if index is not None:
        key = random.fold_in(key, index)
    return key


def scan(fn: typing.Callable, init: typing.Any, xs: typing.Any, unroll: int = 1, reverse: bool = False,
         length: typing.Optional[int] = None):
    return lax.scan(fn, init, xs, length=length, unroll=unroll, reverse=reverse)


def log_log_slope(x: typing.Sequence[float], y: typing.Sequence[float]) -> float:
    slope, _ = jnp.polyfit(jnp.log(jnp.asarray(x, REAL)), jnp.log(jnp.asarray(y, REAL)), 1)
    return float(slope)

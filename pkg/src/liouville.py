"""
Liouville-space algebra on column-major vectorized density matrices: vec(rho) stacks the columns of rho, so
vec(A rho B) = (B^T kron A) vec(rho).
"""
import typing
import warnings

import jax
import jax.scipy.linalg
from jax import numpy as jnp

from .backend import COMPLEX, all_finite, as_complex
from .constants import ConfigError, NumericalError

_OPERATORS = {"sx": [[0, 1], [1, 0]],
              "sy": [[0, -1j], [1j, 0]],
              "sz": [[1, 0], [0, -1]],
              "sp": [[0, 1], [0, 0]],
              "sm": [[0, 0], [1, 0]],
              "id": [[1, 0], [0, 1]]}
_STATES = {"zero": [1, 0],
           "one": [0, 1],
           "plus": [2 ** -0.5, 2 ** -0.5],
           "minus": [2 ** -0.5, -2 ** -0.5],
           "plus_y": [2 ** -0.5, 1j * 2 ** -0.5],
           "minus_y": [2 ** -0.5, -1j * 2 ** -0.5]}


def operator(spec: typing.Any, dim: int = 2) -> jnp.ndarray:
    """
    Named qubit operator ("sx", "sy", "sz", "sp", "sm", "id") or an explicit nested list. Strings inside nested
    lists are parsed as python complex literals, so "1j" or "0.5-0.5j" both work.
    """
    if isinstance(spec, str):
        if spec not in _OPERATORS:
            raise ConfigError(f"Unknown operator {spec!r}. Known: {sorted(_OPERATORS)}")
        if dim != 2:
            raise ConfigError(f"Named operator {spec!r} is a qubit operator but system_dim={dim}")
        return as_complex(_OPERATORS[spec])
    out = as_complex([[complex(itm) for itm in row] for row in spec])
    if out.shape != (dim, dim):
        raise ConfigError(f"Operator has shape {out.shape}, expected {(dim, dim)}")
    return out


def density_matrix(spec: typing.Any, dim: int = 2) -> jnp.ndarray:
    if isinstance(spec, str):
        if spec == "mixed":
            return jnp.eye(dim, dtype=COMPLEX) / dim
        if spec not in _STATES or dim != 2:
            raise ConfigError(f"Unknown state {spec!r} for system_dim={dim}. Known: {sorted(_STATES)} or 'mixed'")
        ket = as_complex(_STATES[spec])
        return jnp.outer(ket, ket.conj())
    rho = as_complex([[complex(itm) for itm in row] for row in spec])
    if rho.shape != (dim, dim):
        raise ConfigError(f"Density matrix has shape {rho.shape}, expected {(dim, dim)}")
    return rho


def vectorize(rho: jnp.ndarray) -> jnp.ndarray:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {rho.shape}")
    return rho.T.reshape(-1)


def unvectorize(vec: jnp.ndarray) -> jnp.ndarray:
    dim = round(vec.shape[0] ** 0.5)
    if dim * dim != vec.shape[0]:
        raise ValueError(f"Vector of length {vec.shape[0]} is not a vectorized square matrix")
    return vec.reshape(dim, dim).T


def trace_functional(dim: int) -> jnp.ndarray:
    return vectorize(jnp.eye(dim, dtype=COMPLEX))


def expectation(op: jnp.ndarray, rho: jnp.ndarray) -> jnp.ndarray:
    """Tr[op rho] for a vectorized rho."""
    return jnp.trace(op @ unvectorize(rho))


def left_superop(op: jnp.ndarray) -> jnp.ndarray:
    return jnp.kron(jnp.eye(op.shape[0], dtype=COMPLEX), op)


def right_superop(op: jnp.ndarray) -> jnp.ndarray:
    return jnp.kron(op.T, jnp.eye(op.shape[0], dtype=COMPLEX))


def commutator_superop(op: jnp.ndarray) -> jnp.ndarray:
    return left_superop(op) - right_superop(op)


def anticommutator_superop(op: jnp.ndarray) -> jnp.ndarray:
    return left_superop(op) + right_superop(op)


def hamiltonian_superop(hamiltonian: jnp.ndarray) -> jnp.ndarray:
    hamiltonian = as_complex(hamiltonian)
    scale = float(jnp.linalg.norm(hamiltonian))
    if float(jnp.linalg.norm(hamiltonian - hamiltonian.conj().T)) > 1e-12 * max(scale, 1e-300):
        warnings.warn("Hamiltonian is not Hermitian; generator computed anyway")
    return -1j * commutator_superop(hamiltonian)


def lindblad_superop(jump_ops: typing.Sequence[jnp.ndarray], rates: typing.Sequence[float],
                     dim: typing.Optional[int] = None) -> jnp.ndarray:
    if len(jump_ops) != len(rates):
        raise ValueError(f"Got {len(jump_ops)} jump operators but {len(rates)} rates")
    if any(rate < 0 for rate in rates):
        raise ValueError(f"Negative dissipation rate in {list(rates)}")
    if dim is None:
        if not jump_ops:
            raise ValueError("dim is required when no jump operators are given")
        dim = jump_ops[0].shape[0]
    out = jnp.zeros((dim * dim, dim * dim), dtype=COMPLEX)
    for jump, rate in zip(jump_ops, rates):
        jump = as_complex(jump)
        number = jump.conj().T @ jump
        out = out + rate * (jnp.kron(jump.conj(), jump) - 0.5 * anticommutator_superop(number))
    return out


def step_propagator(generator: jnp.ndarray, dt: float) -> jnp.ndarray:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not all_finite(generator):
        raise NumericalError("Generator has non-finite entries")
    return jax.scipy.linalg.expm(as_complex(generator) * dt)


def control_hamiltonian(drift: jnp.ndarray, controls: typing.Sequence[jnp.ndarray]
                        ) -> typing.Callable[[jnp.ndarray], jnp.ndarray]:
    """H(u) = drift + sum_m u_m controls_m. The returned builder is traceable by jax."""
    drift = as_complex(drift)
    stacked = jnp.stack([as_complex(c) for c in controls]) if controls else jnp.zeros((0,) + drift.shape, COMPLEX)

    def _fn(values: jnp.ndarray) -> jnp.ndarray:
        return drift + jnp.einsum("m,mij->ij", values.astype(COMPLEX), stacked)

    _fn.arity = len(controls)
    return _fn


def _check_arity(h_builder: typing.Callable, schedule: jnp.ndarray):
    arity = getattr(h_builder, "arity", None)
    if schedule.ndim != 2:
        raise ValueError(f"Schedule must be a T x M array, got shape {schedule.shape}")
    if arity is not None and arity != schedule.shape[1]:
        raise ValueError(f"Schedule has {schedule.shape[1]} channels but the Hamiltonian builder takes {arity}")


def hamiltonian_propagators(hamiltonians: jnp.ndarray, dt: float) -> jnp.ndarray:
    """exp(-i[H_k, .] dt) for a stack of Hamiltonians."""
    generators = jax.vmap(lambda h: -1j * commutator_superop(h))(as_complex(hamiltonians))
    if not all_finite(generators):
        raise NumericalError("Generator has non-finite entries")
    return jax.vmap(jax.scipy.linalg.expm)(generators * dt)


def _propagators(h_builder: typing.Callable, schedule: jnp.ndarray, dt: float) -> jnp.ndarray:
    return hamiltonian_propagators(jax.vmap(h_builder)(schedule), dt)


def system_propagators(h_builder: typing.Callable, schedule: jnp.ndarray, dt: float,
                       splitting: str = "first_order") -> jnp.ndarray:
    """
    Stack of T system propagators U_k = exp(L_S(u_k) dt).
    With splitting="symmetric" the k-th entry is exp(L_S(u_k) dt/2) exp(L_S(u_{k-1}) dt/2) (nothing before the
    first step); the half step after the last environment step comes from `closing_half_step`.
    """
    schedule = jnp.asarray(schedule)
    _check_arity(h_builder, schedule)
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if splitting == "first_order":
        return _propagators(h_builder, schedule, dt)
    if splitting != "symmetric":
        raise ValueError(f"Unknown splitting {splitting!r}")
    half = _propagators(h_builder, schedule, dt / 2)
    previous = jnp.concatenate([jnp.eye(half.shape[1], dtype=COMPLEX)[None], half[:-1]], 0)
    return jnp.einsum("kij,kjl->kil", half, previous)


def closing_half_step(h_builder: typing.Callable, schedule: jnp.ndarray, dt: float) -> jnp.ndarray:
    schedule = jnp.asarray(schedule)
    _check_arity(h_builder, schedule)
    return _propagators(h_builder, schedule[-1:], dt / 2)[0]

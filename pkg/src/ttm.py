"""
Transfer tensors: E_k = sum_{m=1}^{k} T_m E_{k-m} with E_0 = identity, truncated to the last T_C tensors when
propagating. Valid only for the system propagator the maps were generated with.
"""
import typing
from functools import partial

import jax
import numpy as np
from jax import numpy as jnp

from .backend import COMPLEX, as_complex, scan
from .ptmpo import ProcessTensor, dynamics


class DynamicalMapSeq(typing.NamedTuple):
    maps: jnp.ndarray  # (K, L, L), E_1..E_K
    dt: float
    propagator: jnp.ndarray
    provenance: str = ""


class TransferTensorSet(typing.NamedTuple):
    tensors: jnp.ndarray  # (T_C, L, L), T_1..T_C
    dt: float
    propagator: jnp.ndarray

    @property
    def cutoff(self) -> int:
        return self.tensors.shape[0]

    def truncate(self, cutoff: int) -> 'TransferTensorSet':
        if not 1 <= cutoff <= self.cutoff:
            raise ValueError(f"Cutoff must lie in [1, {self.cutoff}], got {cutoff}")
        return self._replace(tensors=self.tensors[:cutoff])


def maps_from_pt(pt: ProcessTensor, fixed_prop: jnp.ndarray) -> DynamicalMapSeq:
    """Contracts the process tensor from every Liouville basis vector with the same system step each time."""
    fixed_prop = as_complex(fixed_prop)
    if fixed_prop.shape != (pt.liouville_dim, pt.liouville_dim):
        raise ValueError(f"Propagator shape {fixed_prop.shape} does not match Liouville dimension "
                         f"{pt.liouville_dim}")
    props = jnp.broadcast_to(fixed_prop, (pt.steps,) + fixed_prop.shape)
    states = dynamics(pt, props, jnp.eye(pt.liouville_dim, dtype=COMPLEX))  # (basis, T + 1, L)
    return DynamicalMapSeq(states[:, 1:].transpose(1, 2, 0), pt.dt, fixed_prop, str(pt.metadata.get("builder", "")))


def extract(maps: DynamicalMapSeq, cutoff: int) -> TransferTensorSet:
    """T_k = E_k - sum_{m=1}^{k-1} T_m E_{k-m}."""
    count = maps.maps.shape[0]
    if not 1 <= cutoff <= count:
        raise ValueError(f"Cutoff must lie in [1, {count}], got {cutoff}")
    tensors = []
    for k in range(cutoff):
        tensor = maps.maps[k]
        for m in range(k):
            tensor = tensor - tensors[m] @ maps.maps[k - m - 1]
        tensors.append(tensor)
    return TransferTensorSet(jnp.stack(tensors), maps.dt, maps.propagator)


def _check_propagator(tts: TransferTensorSet, propagator: jnp.ndarray):
    propagator = as_complex(propagator)
    if propagator.shape != tts.propagator.shape or not bool(jnp.allclose(propagator, tts.propagator, rtol=0,
                                                                         atol=1e-12)):
        raise ValueError("Transfer tensors were extracted for a different system propagator; the memory kernel "
                         "depends on the system Hamiltonian, re-extract for this propagator")


@partial(jax.jit, static_argnums=2)
def _propagate(tensors: jnp.ndarray, rho0: jnp.ndarray, steps: int) -> jnp.ndarray:
    # buffer[m - 1] holds rho_{k + 1 - m}; zero rows stand for times before t = 0
    buffer = jnp.zeros((tensors.shape[0],) + rho0.shape, COMPLEX).at[0].set(rho0)

    def _step(history: jnp.ndarray, _):
        new = jnp.einsum("mij,mj->i", tensors, history)
        return jnp.concatenate([new[None], history[:-1]], 0), new

    return jnp.concatenate([rho0[None], scan(_step, buffer, None, length=steps)[1]], 0)


def propagate(tts: TransferTensorSet, rho0: jnp.ndarray, steps: int, propagator: jnp.ndarray) -> jnp.ndarray:
    """
    rho_{k+1} = sum_{j=max(0, k-T_C+1)}^{k} T_{k+1-j} rho_j. Returns rho_0..rho_steps. `propagator` is the system
    step the run uses; it must be the one the maps were extracted with.
    """
    if steps < 1:
        raise ValueError(f"Need at least one step, got {steps}")
    _check_propagator(tts, propagator)
    rho0 = as_complex(rho0)
    if rho0.shape != tts.tensors.shape[-1:]:
        raise ValueError(f"Initial state has shape {rho0.shape}, expected {tts.tensors.shape[-1:]}")
    return _propagate(tts.tensors, rho0, int(steps))


def adjoint_gradient(tts: TransferTensorSet, rho0: jnp.ndarray, steps: int, target: jnp.ndarray
                     ) -> typing.Tuple[jnp.ndarray, jnp.ndarray]:
    """
    Gradient of Z = 1 - Re <<target|rho_steps>> with respect to rho0 and to each T_m, by reverse-order
    transpose contraction. Both are returned as arrays G with dZ = Re sum(G * d.).
    """
    states = propagate(tts, rho0, steps, tts.propagator)
    costates = [jnp.zeros_like(states[0]) for _ in range(steps + 1)]
    costates[steps] = -jnp.conj(as_complex(target))
    grad_tensors = jnp.zeros_like(tts.tensors)
    for k in range(steps - 1, -1, -1):
        depth = min(tts.cutoff, k + 1)
        for m in range(1, depth + 1):
            j = k + 1 - m
            costates[j] = costates[j] + tts.tensors[m - 1].T @ costates[k + 1]
            grad_tensors = grad_tensors.at[m - 1].add(jnp.outer(costates[k + 1], states[j]))
    return costates[0], grad_tensors


def norm_profile(tts: TransferTensorSet) -> np.ndarray:
    return np.asarray(jnp.linalg.norm(tts.tensors, axis=(1, 2)))


def memory_time(tts: TransferTensorSet, threshold: float = 1e-3) -> int:
    """Number of leading tensors to keep: every T_j beyond it has ||T_j|| < threshold * ||T_1||."""
    norms = norm_profile(tts)
    return int(np.nonzero(norms >= threshold * norms[0])[0][-1]) + 1

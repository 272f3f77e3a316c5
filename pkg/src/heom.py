"""
Hierarchical equations of motion embedded in an extended Liouville space, and the uniform process tensor they
generate. Extended vectors are ordered n * L + mu for hierarchy index n and Liouville index mu.
"""
import math
import typing

import jax
import jax.scipy.linalg
import numpy as np
from jax import numpy as jnp

from .backend import COMPLEX, all_finite, as_complex
from .bath import BathCorrelation
from .constants import HierarchyOverflowError, NumericalError
from .liouville import commutator_superop, expectation, hamiltonian_propagators, left_superop, right_superop
from .ptmpo import ProcessTensor, PtNode


def hierarchy_size(terms: int, depth: int) -> int:
    return math.comb(terms + depth, terms)


def _compositions(total: int, parts: int) -> typing.Iterator[typing.Tuple[int, ...]]:
    if parts == 1:
        yield total,
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class HierarchySpace:
    def __init__(self, terms: int, depth: int):
        if terms < 1 or depth < 0:
            raise ValueError(f"Need terms >= 1 and depth >= 0, got {terms}, {depth}")
        self.terms = terms
        self.depth = depth
        self.indices = [idx for level in range(depth + 1) for idx in _compositions(level, terms)]
        self.lookup = {idx: pos for pos, idx in enumerate(self.indices)}

    def __len__(self) -> int:
        return len(self.indices)

    def neighbour(self, position: int, term: int, shift: int) -> typing.Optional[int]:
        index = list(self.indices[position])
        index[term] += shift
        return self.lookup.get(tuple(index))


class ExtendedGenerator(typing.NamedTuple):
    matrix: jnp.ndarray
    hierarchy: HierarchySpace
    liouville_dim: int

    @property
    def size(self) -> int:
        return len(self.hierarchy)


def build_generator(corr: BathCorrelation, coupling_op: jnp.ndarray, depth: int, max_aux: int = 2000
                    ) -> ExtendedGenerator:
    """
    L_int = i diag(sum_k n_k g_k) - i sum_k A_k^+ [S, .] - i sum_k N_k A_k (a_k S. - a~_k .S), without L_S.
    A_k^+ couples rho^n to rho^(n + e_k), A_k couples it to rho^(n - e_k).
    """
    exponents = np.asarray(corr.exponents, np.complex128)
    if np.any(exponents.imag <= 0):
        raise ValueError(f"All exponents must decay (Im > 0), got {exponents}")
    size = hierarchy_size(len(exponents), depth)
    if size > max_aux:
        raise HierarchyOverflowError(f"Hierarchy with {len(exponents)} terms at depth {depth} has {size} auxiliary "
                                     f"density matrices, above the ceiling of {max_aux}")
    hierarchy = HierarchySpace(len(exponents), depth)
    coupling_op = np.asarray(coupling_op, np.complex128)
    comm = np.asarray(commutator_superop(coupling_op))
    left = np.asarray(left_superop(coupling_op))
    right = np.asarray(right_superop(coupling_op))
    dim = comm.shape[0]

    damping = np.array([np.dot(idx, exponents) for idx in hierarchy.indices], np.complex128)
    out = 1j * np.kron(np.diag(damping), np.eye(dim))
    for term in range(hierarchy.terms):
        raising = np.zeros((size, size))
        lowering = np.zeros((size, size))
        for pos, idx in enumerate(hierarchy.indices):
            upper = hierarchy.neighbour(pos, term, 1)
            if upper is not None:
                raising[pos, upper] = 1
            lower = hierarchy.neighbour(pos, term, -1)
            if lower is not None:
                lowering[pos, lower] = idx[term]
        out -= 1j * np.kron(raising, comm)
        out -= 1j * np.kron(lowering, corr.amplitudes[term] * left - corr.conj_amplitudes[term] * right)
    return ExtendedGenerator(jnp.asarray(out, COMPLEX), hierarchy, dim)


def _environment_step(gen: ExtendedGenerator, dt: float) -> jnp.ndarray:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    step = jax.scipy.linalg.expm(gen.matrix * dt)
    if not all_finite(step):
        abscissa = float(np.max(np.linalg.eigvals(np.asarray(gen.matrix)).real))
        raise NumericalError(f"Hierarchy propagator overflowed at dt={dt}; spectral abscissa {abscissa:.3e}")
    return step


def heom_pt(gen: ExtendedGenerator, dt: float, steps: int) -> ProcessTensor:
    if steps < 1:
        raise ValueError(f"Need at least one step, got {steps}")
    size, dim = gen.size, gen.liouville_dim
    node = _environment_step(gen, dt).reshape(size, dim, size, dim).transpose(0, 2, 1, 3)
    metadata = {"builder": "heom", "terms": gen.hierarchy.terms, "depth": gen.hierarchy.depth, "dt": float(dt)}
    system_dim = round(dim ** 0.5)
    if steps == 1:
        return ProcessTensor([PtNode(node[0:1, 0:1])], dt, system_dim, metadata=metadata)
    interior = PtNode(node)
    nodes = [PtNode(node[:, 0:1])] + [interior] * (steps - 2) + [PtNode(node[0:1, :])]
    return ProcessTensor(nodes, dt, system_dim, metadata=metadata)


def heom_solve(gen: ExtendedGenerator, hamiltonians: jnp.ndarray, rho0: jnp.ndarray, dt: float) -> jnp.ndarray:
    """Direct first-order Trotter stepping of the extended state; returns physical states rho_0..rho_T."""
    props = hamiltonian_propagators(hamiltonians, dt)
    step = _environment_step(gen, dt)
    extended = jnp.zeros((gen.size, gen.liouville_dim), COMPLEX).at[0].set(as_complex(rho0))
    states = [extended[0]]
    for idx, prop in enumerate(props):
        extended = (step @ (extended @ prop.T).reshape(-1)).reshape(gen.size, gen.liouville_dim)
        if not all_finite(extended):
            raise NumericalError(f"Non-finite hierarchy state at step {idx + 1}")
        states.append(extended[0])
    return jnp.stack(states)


def convergence_study(corr: BathCorrelation, coupling_op: jnp.ndarray, hamiltonian: jnp.ndarray,
                      rho0: jnp.ndarray, observable: jnp.ndarray, horizon: float, dt: float, depth: int = 2,
                      tolerance: float = 1e-4, max_depth: int = 10, min_dt: float = 1e-3,
                      max_aux: int = 2000) -> typing.Dict[str, typing.Any]:
    """Raise depth by 2, then halve dt, until the observable trajectory changes by less than `tolerance`."""

    def trajectory(current_depth: int, current_dt: float) -> np.ndarray:
        steps = max(1, round(horizon / current_dt))
        gen = build_generator(corr, coupling_op, current_depth, max_aux)
        states = heom_solve(gen, jnp.broadcast_to(as_complex(hamiltonian), (steps,) + hamiltonian.shape), rho0,
                            current_dt)
        return np.asarray(jax.vmap(lambda rho: expectation(observable, rho))(states))

    reference = trajectory(depth, dt)
    change = float("inf")
    while depth + 2 <= max_depth and hierarchy_size(corr.terms, depth + 2) <= max_aux:
        candidate = trajectory(depth + 2, dt)
        change = float(np.max(np.abs(candidate - reference)))
        depth, reference = depth + 2, candidate
        if change < tolerance:
            break
    depth_change = change

    change = float("inf")
    while dt / 2 >= min_dt:
        candidate = trajectory(depth, dt / 2)
        change = float(np.max(np.abs(candidate[::2][:len(reference)] - reference)))
        dt, reference = dt / 2, candidate
        if change < tolerance:
            break
    return {"trajectory": reference, "depth": depth, "dt": dt, "depth_change": depth_change, "dt_change": change,
            "converged": max(depth_change, change) < tolerance}

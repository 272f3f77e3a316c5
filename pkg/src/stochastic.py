"""
Stochastic Liouville-von Neumann unraveling. Two complex fields xi_k, nu_k per step satisfy
  <xi_k xi_l> = Re C((k - l) dt),  <xi_k nu_l> = 2i theta(k - l) Im C((k - l) dt),  <nu_k nu_l> = 0
with theta(0) = 1/2. Each trajectory evolves with exp(dt (i xi_k [S, .] + (i/2) nu_k {S, .})) after the system step.
"""
import typing

import jax
import jax.scipy.linalg
import numpy as np
from jax import numpy as jnp, random

from .backend import COMPLEX, REAL, all_finite, as_complex, scan, stream_key
from .constants import NoiseFactorizationError, StochasticInstabilityError, StreamPurpose
from .liouville import anticommutator_superop, commutator_superop, trace_functional
from .ptmpo import ProcessTensor, PtNode


class NoiseRealization(typing.NamedTuple):
    xi: jnp.ndarray  # (T,)
    nu: jnp.ndarray  # (T,)
    index: int


class NoiseEnsemble(typing.NamedTuple):
    xi: jnp.ndarray  # (n_traj, T)
    nu: jnp.ndarray  # (n_traj, T)
    seed: int
    dt: float

    @property
    def trajectories(self) -> int:
        return self.xi.shape[0]

    @property
    def steps(self) -> int:
        return self.xi.shape[1]

    def realization(self, index: int) -> NoiseRealization:
        return NoiseRealization(self.xi[index], self.nu[index], index)


def relation_matrix(c_grid: typing.Sequence[complex], steps: int) -> np.ndarray:
    """Target second moments <f f^T> of the field vector f = (xi_1..xi_T, nu_1..nu_T)."""
    c_grid = np.asarray(c_grid, np.complex128)
    if len(c_grid) < steps:
        raise ValueError(f"Need the correlation at {steps} lags, got {len(c_grid)}")
    lag = np.subtract.outer(np.arange(steps), np.arange(steps))
    real = c_grid[np.abs(lag)].real
    theta = np.where(lag > 0, 1., np.where(lag == 0, 0.5, 0.))
    cross = 2j * theta * c_grid[np.abs(lag)].imag
    return np.block([[real, cross], [cross.T, np.zeros((steps, steps))]])


def _symmetric_parts(matrix: np.ndarray, rtol: float) -> typing.Tuple[np.ndarray, np.ndarray]:
    values, vectors = np.linalg.eigh(matrix)
    cutoff = rtol * max(np.max(np.abs(values)), 1e-300)
    positive = vectors[:, values > cutoff] * np.sqrt(values[values > cutoff])
    negative = vectors[:, values < -cutoff] * np.sqrt(-values[values < -cutoff])
    return positive, negative


def noise_factor(relation: np.ndarray, rtol: float = 1e-12, tolerance: float = 1e-8) -> np.ndarray:
    """
    Complex F with F F^T = relation (transpose, not adjoint), from the eigendecompositions of the real and
    imaginary parts: F = [sqrt(A+), i sqrt(A-), e^{i pi/4} sqrt(B+), e^{-i pi/4} sqrt(B-)].
    """
    real_pos, real_neg = _symmetric_parts(relation.real, rtol)
    imag_pos, imag_neg = _symmetric_parts(relation.imag, rtol)
    factor = np.concatenate([real_pos, 1j * real_neg, np.exp(0.25j * np.pi) * imag_pos,
                             np.exp(-0.25j * np.pi) * imag_neg], 1).astype(np.complex128)
    scale = np.linalg.norm(relation)
    residual = float(np.linalg.norm(factor @ factor.T - relation))
    if residual > tolerance * max(scale, 1e-300) and residual > 1e-14:
        raise NoiseFactorizationError(f"Noise factor does not reproduce the target moments (|P|={scale:.3e})",
                                      residual)
    return factor


def sample_noise(c_grid: typing.Sequence[complex], trajectories: int, dt: float, steps: int, seed: int
                 ) -> NoiseEnsemble:
    """Trajectory i draws real standard normals from a stream that depends only on (seed, i)."""
    if trajectories < 1:
        raise ValueError(f"Need at least one trajectory, got {trajectories}")
    factor = jnp.asarray(noise_factor(relation_matrix(c_grid, steps)), COMPLEX)
    if factor.shape[1] == 0:
        zeros = jnp.zeros((trajectories, steps), COMPLEX)
        return NoiseEnsemble(zeros, zeros, seed, dt)
    base = stream_key(seed, StreamPurpose.noise)

    def _draw(index: jnp.ndarray) -> jnp.ndarray:
        return factor @ random.normal(random.fold_in(base, index), (factor.shape[1],), REAL).astype(COMPLEX)

    fields = jax.vmap(_draw)(jnp.arange(trajectories))
    return NoiseEnsemble(fields[:, :steps], fields[:, steps:], seed, dt)


def _propagators(xi: jnp.ndarray, nu: jnp.ndarray, coupling_op: jnp.ndarray, dt: float) -> jnp.ndarray:
    coupling_op = as_complex(coupling_op)
    comm, anti = commutator_superop(coupling_op), anticommutator_superop(coupling_op)

    def _one(xi_k: jnp.ndarray, nu_k: jnp.ndarray) -> jnp.ndarray:
        return jax.scipy.linalg.expm(dt * (1j * xi_k * comm + 0.5j * nu_k * anti))

    return jax.vmap(_one)(xi, nu)


def trajectory_propagators(noise: NoiseRealization, coupling_op: jnp.ndarray, dt: float) -> jnp.ndarray:
    """Environment step propagators of one trajectory, shape (T, L, L)."""
    return _propagators(noise.xi, noise.nu, coupling_op, dt)


def ensemble_propagators(ensemble: NoiseEnsemble, coupling_op: jnp.ndarray) -> jnp.ndarray:
    """Shape (n_traj, T, L, L)."""
    return jax.vmap(lambda xi, nu: _propagators(xi, nu, coupling_op, ensemble.dt))(ensemble.xi, ensemble.nu)


def check_norms(props: jnp.ndarray, ceiling: float):
    """Propagates the normalized identity through every trajectory's environment steps."""
    dim = props.shape[-1]
    start = trace_functional(round(dim ** 0.5)) / round(dim ** 0.5)
    initial = jnp.linalg.norm(start)

    def _step(state: jnp.ndarray, prop: jnp.ndarray):
        state = prop @ state
        return state, jnp.linalg.norm(state)

    norms = jax.vmap(lambda trajectory: scan(_step, start, trajectory)[1])(props) / initial
    if not all_finite(norms) or float(jnp.max(norms)) > ceiling:
        flat = int(jnp.argmax(jnp.where(jnp.isfinite(norms), norms, jnp.inf)))
        index, step = divmod(flat, norms.shape[1])
        raise StochasticInstabilityError(f"Trajectory {index} exceeded the norm ceiling {ceiling:.1e} at step "
                                         f"{step + 1} (norm {float(norms[index, step]):.3e})")


def stochastic_pt(ensemble: NoiseEnsemble, coupling_op: jnp.ndarray, norm_ceiling: float = 1e3
                  ) -> ProcessTensor:
    props = ensemble_propagators(ensemble, coupling_op)
    check_norms(props, norm_ceiling)
    count, steps = ensemble.trajectories, ensemble.steps
    dim = props.shape[-1]
    metadata = {"builder": "stochastic", "trajectories": count, "seed": ensemble.seed, "dt": float(ensemble.dt)}
    system_dim = round(dim ** 0.5)
    if steps == 1:
        return ProcessTensor([PtNode(props[:, 0].mean(0)[None, None])], ensemble.dt, system_dim, metadata=metadata)
    nodes = [PtNode(props[:, 0][:, None] / count)]
    nodes.extend(PtNode(props[:, idx], diagonal=True) for idx in range(1, steps - 1))
    nodes.append(PtNode(props[:, -1][None]))
    caps = [jnp.ones((1,), COMPLEX)] + [jnp.ones((count,), COMPLEX)] * (steps - 1) + [jnp.ones((1,), COMPLEX)]
    return ProcessTensor(nodes, ensemble.dt, system_dim, caps, metadata)


def trajectory_states(ensemble: NoiseEnsemble, coupling_op: jnp.ndarray, system_props: jnp.ndarray,
                      rho0: jnp.ndarray) -> jnp.ndarray:
    """Unaveraged reduced states of every trajectory, shape (n_traj, T + 1, L)."""
    props = ensemble_propagators(ensemble, coupling_op)
    rho0 = as_complex(rho0)

    def _one(trajectory: jnp.ndarray) -> jnp.ndarray:
        def _step(state: jnp.ndarray, step_props: typing.Tuple[jnp.ndarray, jnp.ndarray]):
            environment, system = step_props
            state = environment @ (system @ state)
            return state, state

        return jnp.concatenate([rho0[None], scan(_step, rho0, (trajectory, system_props))[1]], 0)

    return jax.vmap(_one)(props)


def batch_statistics(values: jnp.ndarray, batches: int) -> typing.Tuple[jnp.ndarray, jnp.ndarray]:
    """Mean over the leading axis and the batch-means standard error, reduced in index order."""
    count = values.shape[0]
    if batches < 2 or count < batches:
        raise ValueError(f"Need 2 <= batches <= {count}, got {batches}")
    size = count // batches
    means = values[:size * batches].reshape((batches, size) + values.shape[1:]).mean(1)
    error = jnp.std(means, axis=0, ddof=1) / jnp.sqrt(batches)
    return values.mean(0), error

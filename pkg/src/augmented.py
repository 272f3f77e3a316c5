"""
Auxiliary damped bosonic modes. The joint system-mode space is ordered system (x) modes; the auxiliary Liouville
index of a node is the column-major index of the mode density matrix.
"""
import functools
import typing

import jax.scipy.linalg
import numpy as np
from jax import numpy as jnp

from .backend import COMPLEX, all_finite, as_complex
from .bath import SpectralDensity
from .constants import ConfigError, FockOverflowError, NumericalError
from .liouville import expectation, hamiltonian_superop, lindblad_superop, vectorize
from .ptmpo import ProcessTensor, PtNode, dynamics


class AuxiliaryMode(typing.NamedTuple):
    coupling: float
    omega_0: float
    kappa: float
    fock: int


class AuxiliaryModel(typing.NamedTuple):
    modes: typing.Tuple[AuxiliaryMode, ...]

    @property
    def hilbert_dim(self) -> int:
        return int(np.prod([mode.fock for mode in self.modes]))

    @property
    def liouville_dim(self) -> int:
        return self.hilbert_dim ** 2

    def with_fock(self, fock: int) -> 'AuxiliaryModel':
        return AuxiliaryModel(tuple(mode._replace(fock=fock) for mode in self.modes))

    def correlation(self, t: typing.Union[float, np.ndarray]) -> np.ndarray:
        """Zero-temperature correlation of the coupling g(b + b^dagger) summed over modes."""
        t = np.asarray(t, np.float64)
        return sum(mode.coupling ** 2 * np.exp(-1j * mode.omega_0 * t - mode.kappa * np.abs(t) / 2)
                   for mode in self.modes)


def from_lorentzian(spectral: SpectralDensity, fock: int) -> AuxiliaryModel:
    if spectral.kind != "lorentzian":
        raise ConfigError(f"Auxiliary-mode matching needs a lorentzian spectral density, got {spectral.kind!r}")
    if fock < 1:
        raise ConfigError(f"Fock truncation must be >= 1, got {fock}")
    params = spectral.params
    return AuxiliaryModel((AuxiliaryMode(abs(params["coupling"]), params["omega_0"], params["kappa"], fock),))


def _annihilation(fock: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, fock)), 1).astype(np.complex128)


def _embed(model: AuxiliaryModel, position: int, op: np.ndarray) -> np.ndarray:
    out = np.eye(1, dtype=np.complex128)
    for idx, mode in enumerate(model.modes):
        out = np.kron(out, op if idx == position else np.eye(mode.fock))
    return out


def joint_generator(model: AuxiliaryModel, coupling_op: jnp.ndarray) -> jnp.ndarray:
    """L_A + L_SA on the joint Liouville space: mode energies, mode damping and S (x) g (b + b^dagger)."""
    coupling_op = np.asarray(coupling_op, np.complex128)
    system_eye = np.eye(coupling_op.shape[0])
    hamiltonian = np.zeros((coupling_op.shape[0] * model.hilbert_dim,) * 2, np.complex128)
    jumps, rates = [], []
    for idx, mode in enumerate(model.modes):
        lowering = _embed(model, idx, _annihilation(mode.fock))
        hamiltonian += mode.omega_0 * np.kron(system_eye, lowering.conj().T @ lowering)
        hamiltonian += mode.coupling * np.kron(coupling_op, lowering + lowering.conj().T)
        jumps.append(np.kron(system_eye, lowering))
        rates.append(mode.kappa)
    out = hamiltonian_superop(jnp.asarray(hamiltonian))
    return out + lindblad_superop([jnp.asarray(j) for j in jumps], rates, hamiltonian.shape[0])


def augmented_step_tensor(model: AuxiliaryModel, coupling_op: jnp.ndarray, dt: float) -> PtNode:
    """exp((L_A + L_SA) dt) reshaped to (A, A, L, L)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    system_dim, fock = coupling_op.shape[0], model.hilbert_dim
    joint = jax.scipy.linalg.expm(joint_generator(model, coupling_op) * dt)
    if not all_finite(joint):
        raise NumericalError(f"Auxiliary-mode propagator is not finite (mode dimension {model.hilbert_dim}, dt={dt})")
    shape = (system_dim, fock) * 4
    tensor = joint.reshape(shape).transpose(1, 3, 5, 7, 0, 2, 4, 6)
    return PtNode(tensor.reshape(fock ** 2, fock ** 2, system_dim ** 2, system_dim ** 2))


def mode_trace(model: AuxiliaryModel) -> jnp.ndarray:
    return vectorize(jnp.eye(model.hilbert_dim, dtype=COMPLEX))


def mode_vacuum(model: AuxiliaryModel) -> jnp.ndarray:
    return jnp.zeros((model.liouville_dim,), COMPLEX).at[0].set(1)


def top_level_population(model: AuxiliaryModel, extended: jnp.ndarray) -> float:
    """Largest population in any mode's highest Fock level, for extended states of shape (..., L, A)."""
    fock = model.hilbert_dim
    system_dim = round(extended.shape[-2] ** 0.5)
    system_trace = vectorize(jnp.eye(system_dim, dtype=COMPLEX))
    reduced = jnp.einsum("m,...ma->...a", system_trace, extended)
    populations = jnp.diagonal(reduced.reshape(reduced.shape[:-1] + (fock, fock)), axis1=-2, axis2=-1)
    worst = 0.
    for idx, mode in enumerate(model.modes):
        if mode.fock < 2:
            continue
        top = np.diag(_embed(model, idx, np.diag(np.eye(mode.fock)[-1]))).real
        worst = max(worst, float(jnp.max(jnp.abs(populations @ top))))
    return worst


def augmented_pt(model: AuxiliaryModel, coupling_op: jnp.ndarray, dt: float, steps: int,
                 leakage_tolerance: float = 1e-6) -> ProcessTensor:
    """Vacuum initial mode state, trace over the modes at the end. Leakage is checked with the system step off."""
    if steps < 1:
        raise ValueError(f"Need at least one step, got {steps}")
    node = augmented_step_tensor(model, coupling_op, dt)
    trace = mode_trace(model)
    system_dim = coupling_op.shape[0]

    trial = jnp.outer(vectorize(jnp.eye(system_dim, dtype=COMPLEX) / system_dim), mode_vacuum(model))
    leakage = 0.
    for _ in range(steps):
        trial = node.apply(trial)
        leakage = max(leakage, top_level_population(model, trial))
    if leakage > leakage_tolerance:
        raise FockOverflowError(f"Top Fock level population {leakage:.3e} exceeds {leakage_tolerance:.1e} "
                                f"with {model.hilbert_dim} mode levels")

    tensor = node.tensor
    metadata = {"builder": "augmented", "fock": [mode.fock for mode in model.modes], "dt": float(dt),
                "leakage": leakage}
    last = jnp.einsum("a,abmn->bmn", trace, tensor)[None]
    if steps == 1:
        nodes = [PtNode(last[:, 0:1])]
    else:
        nodes = [PtNode(tensor[:, 0:1])] + [node] * (steps - 2) + [PtNode(last)]
    caps = [jnp.ones((1,), COMPLEX)] + [trace] * (steps - 1) + [jnp.ones((1,), COMPLEX)]
    return ProcessTensor(nodes, dt, system_dim, caps, metadata)


def fock_convergence(model: AuxiliaryModel, coupling_op: jnp.ndarray, props: jnp.ndarray, rho0: jnp.ndarray,
                     observable: jnp.ndarray, dt: float, start: int = 2, max_fock: int = 24,
                     tolerance: float = 1e-5) -> typing.Dict[str, typing.Any]:
    """Smallest truncation d whose observable trajectory changes by less than `tolerance` under d -> d + 2."""

    @functools.lru_cache(maxsize=None)
    def trajectory(fock: int) -> typing.Optional[np.ndarray]:
        try:
            pt = augmented_pt(model.with_fock(fock), coupling_op, dt, len(props))
        except FockOverflowError:
            return None
        states = dynamics(pt, props, rho0)
        return np.array([complex(expectation(observable, state)) for state in states])

    changes = {}
    for fock in range(start, max_fock - 1):
        current, refined = trajectory(fock), trajectory(fock + 2)
        if current is None or refined is None:
            continue
        changes[fock] = float(np.max(np.abs(refined - current)))
        if changes[fock] < tolerance:
            return {"fock": fock, "change": changes[fock], "changes": changes, "trajectory": current}
    raise FockOverflowError(f"No Fock truncation up to {max_fock} converged to {tolerance:.1e}: {changes}")

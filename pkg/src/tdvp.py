"""
Polaron-ansatz TDVP for the spin-boson model with per-step qubit splitting omega_q(t):
  dx_k/dt = i x_k (omega_q exp(-2 sum_p |x_p|^2) + omega_k) + i g_k / 2,   <sigma_x> = -exp(-2 sum_p |x_p|^2)
Cotangents of complex quantities follow dZ = Re sum(conj(a) * dx), which is the real (Re, Im) adjoint written
in complex form.
"""
import typing

import jax
import numpy as np
from jax import numpy as jnp

from .backend import COMPLEX, REAL, all_finite, scan
from .bath import ModeDiscretization
from .constants import NumericalError
from .utils.checkpoint import write_csv


def _arrays(modes: ModeDiscretization) -> typing.Tuple[jnp.ndarray, jnp.ndarray]:
    if modes.size < 1:
        raise ValueError("Need at least one mode")
    return jnp.asarray(modes.couplings, REAL), jnp.asarray(modes.frequencies, REAL)


def _rhs(x: jnp.ndarray, couplings: jnp.ndarray, frequencies: jnp.ndarray, omega_q: jnp.ndarray) -> jnp.ndarray:
    shared = jnp.exp(-2 * jnp.sum(jnp.abs(x) ** 2))
    return 1j * x * (omega_q * shared + frequencies) + 0.5j * couplings


def _rhs_vjp(x: jnp.ndarray, cotangent: jnp.ndarray, frequencies: jnp.ndarray, omega_q: jnp.ndarray
             ) -> typing.Tuple[jnp.ndarray, jnp.ndarray]:
    shared = jnp.exp(-2 * jnp.sum(jnp.abs(x) ** 2))
    overlap = jnp.sum(jnp.conj(cotangent) * 1j * x).real
    grad_x = -1j * (omega_q * shared + frequencies) * cotangent - 4 * shared * omega_q * overlap * x
    return grad_x, shared * overlap


def eom_rhs(x: jnp.ndarray, modes: ModeDiscretization, omega_q: float) -> jnp.ndarray:
    couplings, frequencies = _arrays(modes)
    return _rhs(jnp.asarray(x, COMPLEX), couplings, frequencies, omega_q)


def _rk4(x: jnp.ndarray, couplings: jnp.ndarray, frequencies: jnp.ndarray, omega_q: jnp.ndarray, dt: float):
    k1 = _rhs(x, couplings, frequencies, omega_q)
    k2 = _rhs(x + dt / 2 * k1, couplings, frequencies, omega_q)
    k3 = _rhs(x + dt / 2 * k2, couplings, frequencies, omega_q)
    k4 = _rhs(x + dt * k3, couplings, frequencies, omega_q)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4), (k1, k2, k3)


@jax.jit
def _trajectory(couplings: jnp.ndarray, frequencies: jnp.ndarray, schedule: jnp.ndarray, x0: jnp.ndarray,
                dt: jnp.ndarray) -> jnp.ndarray:
    def _step(x: jnp.ndarray, omega_q: jnp.ndarray):
        x = _rk4(x, couplings, frequencies, omega_q, dt)[0]
        return x, x

    return jnp.concatenate([x0[None], scan(_step, x0, schedule)[1]], 0)


def integrate(modes: ModeDiscretization, omega_q_schedule: jnp.ndarray, dt: float,
              x0: typing.Optional[jnp.ndarray] = None) -> jnp.ndarray:
    """Classical RK4 with omega_q constant within each step. Returns x_0..x_T, shape (T + 1, N)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    couplings, frequencies = _arrays(modes)
    schedule = jnp.asarray(omega_q_schedule, REAL)
    x0 = jnp.zeros(frequencies.shape, COMPLEX) if x0 is None else jnp.asarray(x0, COMPLEX)
    states = _trajectory(couplings, frequencies, schedule, x0, jnp.asarray(dt, REAL))
    if not all_finite(states):
        first = int(jnp.argmin(jnp.all(jnp.isfinite(states), axis=1)))
        raise NumericalError(f"Non-finite polaron state at step {first}; reduce dt")
    return states


def magnetization(x: jnp.ndarray) -> jnp.ndarray:
    return -jnp.exp(-2 * jnp.sum(jnp.abs(x) ** 2, axis=-1))


@jax.jit
def _backward(trajectory: jnp.ndarray, schedule: jnp.ndarray, cotangent: jnp.ndarray, couplings: jnp.ndarray,
              frequencies: jnp.ndarray, dt: jnp.ndarray) -> jnp.ndarray:
    def _step(adjoint: jnp.ndarray, inputs: typing.Tuple[jnp.ndarray, jnp.ndarray]):
        x, omega_q = inputs
        k1, k2, k3 = _rk4(x, couplings, frequencies, omega_q, dt)[1]
        # stage cotangents, chained back through the stage inputs
        a4, g4 = _rhs_vjp(x + dt * k3, dt / 6 * adjoint, frequencies, omega_q)
        a3, g3 = _rhs_vjp(x + dt / 2 * k2, dt / 3 * adjoint + dt * a4, frequencies, omega_q)
        a2, g2 = _rhs_vjp(x + dt / 2 * k1, dt / 3 * adjoint + dt / 2 * a3, frequencies, omega_q)
        a1, g1 = _rhs_vjp(x, dt / 6 * adjoint + dt / 2 * a2, frequencies, omega_q)
        return adjoint + a1 + a2 + a3 + a4, g1 + g2 + g3 + g4

    return scan(_step, cotangent, (trajectory[:-1], schedule), reverse=True)[1]


def adjoint_gradient(trajectory: jnp.ndarray, omega_q_schedule: jnp.ndarray,
                     terminal_cost: typing.Callable[[jnp.ndarray], jnp.ndarray], modes: ModeDiscretization,
                     dt: float) -> jnp.ndarray:
    """
    dZ/d omega_q per step for Z = terminal_cost(magnetization(x_T)), by the exact reverse of every RK4 stage.
    """
    schedule = jnp.asarray(omega_q_schedule, REAL)
    trajectory = jnp.asarray(trajectory, COMPLEX)
    if trajectory.shape[0] != schedule.shape[0] + 1:
        raise ValueError(f"Trajectory has {trajectory.shape[0]} states for {schedule.shape[0]} steps")
    couplings, frequencies = _arrays(modes)
    final = trajectory[-1]
    shared = jnp.exp(-2 * jnp.sum(jnp.abs(final) ** 2))
    cotangent = (jax.grad(terminal_cost)(magnetization(final)) * 4 * shared * final).astype(COMPLEX)
    return _backward(trajectory, schedule, cotangent, couplings, frequencies, jnp.asarray(dt, REAL))


def independent_boson_magnetization(t: typing.Union[float, np.ndarray], alpha: float, omega_c: float = 1.
                                    ) -> np.ndarray:
    """Continuum result for J = 2 alpha omega exp(-omega / omega_c) at omega_q = 0."""
    return -(1 + (omega_c * np.asarray(t, np.float64)) ** 2) ** -alpha


def mode_sum_magnetization(modes: ModeDiscretization, t: typing.Union[float, np.ndarray]) -> np.ndarray:
    t = np.asarray(t, np.float64)
    phase = 1 - np.cos(np.multiply.outer(t, modes.frequencies))
    return -np.exp(-np.sum(modes.couplings ** 2 * phase / modes.frequencies ** 2, axis=-1))


def write_trajectory(path: str, trajectory: jnp.ndarray, dt: float):
    states = np.asarray(trajectory)
    count = states.shape[1]
    header = (["t"] + [f"re_x{k}" for k in range(1, count + 1)] + [f"im_x{k}" for k in range(1, count + 1)]
              + ["magnetization"])
    mags = np.asarray(magnetization(trajectory))
    rows = ([idx * dt] + list(state.real) + list(state.imag) + [mag] for idx, (state, mag) in
            enumerate(zip(states, mags)))
    write_csv(path, header, rows)

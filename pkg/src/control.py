"""
Adjoint gradients through a process tensor and a GRAPE-style optimizer for terminal costs.

Z = 1 - Re <<target|rho_T>>. The final costate is the linear functional -conj(target), so every reported
derivative is the plain derivative of Z: dZ = Re sum_k sum(G_k * dU_k).
"""
import time
import typing

import numpy as np
from jax import numpy as jnp

from .backend import REAL, all_finite, as_complex
from .constants import NumericalError
from .context import Optimizer
from .liouville import system_propagators
from .optimizer import AdamState, clip_norm, update
from .ptmpo import ProcessTensor, backpropagate, contract_forward
from .ptmpo import gradient_wrt_propagators as _propagator_gradients
from .utils.wandblog import OptimizationLog


class ControlSchedule(typing.NamedTuple):
    values: jnp.ndarray  # (T, M)
    dt: float
    labels: typing.Tuple[str, ...] = ()
    lower: typing.Optional[jnp.ndarray] = None
    upper: typing.Optional[jnp.ndarray] = None

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def bounds(self) -> typing.Tuple[jnp.ndarray, jnp.ndarray]:
        lower = jnp.full((self.channels,), -jnp.inf) if self.lower is None else jnp.asarray(self.lower, REAL)
        upper = jnp.full((self.channels,), jnp.inf) if self.upper is None else jnp.asarray(self.upper, REAL)
        return lower, upper

    def replace_values(self, values: jnp.ndarray) -> 'ControlSchedule':
        return self._replace(values=jnp.asarray(values, REAL))


class GradientReport(typing.NamedTuple):
    cost: float
    dZ_dU: jnp.ndarray  # (T, L, L)
    dZ_du: jnp.ndarray  # (T, M)
    final: jnp.ndarray


def terminal_cost(rho_final: jnp.ndarray, target: jnp.ndarray) -> float:
    if rho_final.shape != target.shape:
        raise ValueError(f"State shape {rho_final.shape} does not match target shape {target.shape}")
    return float(1 - jnp.vdot(as_complex(target), as_complex(rho_final)).real)


def terminal_costate(target: jnp.ndarray) -> jnp.ndarray:
    return -jnp.conj(as_complex(target))[:, None]


def closed_system_pt(steps: int, system_dim: int, dt: float) -> ProcessTensor:
    return ProcessTensor.identity(steps, system_dim, dt)


def gradient_wrt_propagators(states: typing.Sequence[jnp.ndarray], costates: typing.Sequence[jnp.ndarray],
                             pt: ProcessTensor) -> jnp.ndarray:
    if len(states) != len(costates):
        raise ValueError(f"Got {len(states)} states but {len(costates)} costates")
    return _propagator_gradients(pt, states, costates)


def gradient_wrt_controls(grads: jnp.ndarray, h_builder: typing.Callable, schedule: ControlSchedule,
                          fd_step: float = 1e-5) -> jnp.ndarray:
    """Central differences of U_k(u) with step fd_step * max(1, |u|), contracted against dZ/dU_k."""
    if fd_step <= 0:
        raise ValueError(f"fd_step must be positive, got {fd_step}")
    if grads.shape[0] != schedule.steps:
        raise ValueError(f"Got {grads.shape[0]} propagator gradients for {schedule.steps} steps")
    values = jnp.asarray(schedule.values, REAL)
    out = []
    for channel in range(schedule.channels):
        step = fd_step * jnp.maximum(1., jnp.abs(values[:, channel]))
        shift = jnp.zeros_like(values).at[:, channel].set(step)
        plus = system_propagators(h_builder, values + shift, schedule.dt)
        minus = system_propagators(h_builder, values - shift, schedule.dt)
        derivative = (plus - minus) / (2 * step)[:, None, None]
        out.append(jnp.einsum("kmn,kmn->k", grads, derivative).real)
    out = jnp.stack(out, 1) if out else jnp.zeros((schedule.steps, 0), REAL)
    if not all_finite(out):
        raise NumericalError("Non-finite finite-difference control gradient")
    return out


def cost_and_gradient(pt: ProcessTensor, h_builder: typing.Callable, schedule: ControlSchedule,
                      rho0: jnp.ndarray, target: jnp.ndarray, fd_step: float = 1e-5) -> GradientReport:
    props = system_propagators(h_builder, schedule.values, schedule.dt)
    final, states = contract_forward(pt, props, rho0)
    costates = backpropagate(pt, props, terminal_costate(target))
    grads = gradient_wrt_propagators(states, costates, pt)
    return GradientReport(terminal_cost(final, as_complex(target)), grads,
                          gradient_wrt_controls(grads, h_builder, schedule, fd_step), final)


def cost(pt: ProcessTensor, h_builder: typing.Callable, schedule: ControlSchedule, rho0: jnp.ndarray,
         target: jnp.ndarray) -> float:
    final, _ = contract_forward(pt, system_propagators(h_builder, schedule.values, schedule.dt), rho0)
    return terminal_cost(final, as_complex(target))


def optimize(pt: ProcessTensor, h_builder: typing.Callable, schedule0: ControlSchedule, target: jnp.ndarray,
             max_iters: int, options: typing.Optional[Optimizer] = None, *, rho0: jnp.ndarray,
             control_scale: float = 1., log: typing.Optional[OptimizationLog] = None
             ) -> typing.Tuple[ControlSchedule, typing.List[typing.Dict[str, float]]]:
    """
    Adam on the schedule with box projection. Stops after max_iters, when the gradient norm drops below
    gradient_tolerance or the cost below cost_tolerance; raises OptimizationAbort when the cost keeps rising.
    Returns the best schedule seen and the per-iteration history.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    options = Optimizer() if options is None else options
    log = OptimizationLog(None, options.patience, options.print_interval, max_iters) if log is None else log
    lower, upper = schedule0.bounds()
    values = jnp.clip(jnp.asarray(schedule0.values, REAL), lower, upper)
    state = AdamState.zeros_like(values)
    best_cost, best_values = np.inf, values

    for iteration in range(max_iters):
        start = time.perf_counter()
        report = cost_and_gradient(pt, h_builder, schedule0.replace_values(values), rho0, target, options.fd_step)
        grad_norm = float(clip_norm(report.dZ_du, 0.))
        if report.cost < best_cost:
            best_cost, best_values = report.cost, values
        done = report.cost <= options.cost_tolerance or grad_norm < options.gradient_tolerance
        if not done:
            values, state = update(options, values, report.dZ_du, state, iteration, lower, upper, control_scale)
        log(iteration, report.cost, grad_norm, (time.perf_counter() - start) * 1e3)
        if done:
            break
    return schedule0.replace_values(best_values), log.rows

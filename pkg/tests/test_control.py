import numpy as np
import pytest
from jax import numpy as jnp

from src.augmented import augmented_pt, from_lorentzian
from src.bath import BathCorrelation, fit_from_config
from src.constants import OptimizationAbort
from src.context import BathContext, Optimizer
from src.control import ControlSchedule, closed_system_pt, cost, cost_and_gradient, optimize, terminal_cost
from src.heom import build_generator, heom_pt
from src.liouville import control_hamiltonian, density_matrix, operator, vectorize
from src.ptmpo import recompress
from src.stochastic import sample_noise, stochastic_pt
from src.utils.wandblog import OptimizationLog


def _numeric_gradient(pt, builder, schedule, rho0, target, step=1e-6) -> np.ndarray:
    values = np.asarray(schedule.values)
    out = np.zeros_like(values)
    for idx in np.ndindex(values.shape):
        shift = np.zeros_like(values)
        shift[idx] = step
        plus = cost(pt, builder, schedule.replace_values(values + shift), rho0, target)
        minus = cost(pt, builder, schedule.replace_values(values - shift), rho0, target)
        out[idx] = (plus - minus) / (2 * step)
    return out


def _random_schedule(steps: int, channels: int, dt: float, seed: int = 0) -> ControlSchedule:
    return ControlSchedule(jnp.asarray(np.random.default_rng(seed).normal(size=(steps, channels))), dt)


def test_terminal_cost():
    one = vectorize(density_matrix("one"))
    assert terminal_cost(one, one) == 0
    assert terminal_cost(vectorize(density_matrix("zero")), one) == 1
    assert np.isclose(terminal_cost(vectorize(density_matrix("plus")), one), 0.5)
    with pytest.raises(ValueError):
        terminal_cost(one, one[:2])


def test_closed_system_control_gradient():
    builder = control_hamiltonian(0.5 * operator("sz"), [operator("sx"), operator("sy")])
    schedule = _random_schedule(8, 2, 0.2)
    rho0 = vectorize(density_matrix("zero"))
    target = vectorize(density_matrix("one"))
    pt = closed_system_pt(8, 2, 0.2)
    report = cost_and_gradient(pt, builder, schedule, rho0, target)
    assert report.dZ_du.shape == (8, 2)
    assert np.isclose(report.cost, cost(pt, builder, schedule, rho0, target))
    numeric = _numeric_gradient(pt, builder, schedule, rho0, target)
    assert np.allclose(report.dZ_du, numeric, rtol=1e-5, atol=1e-8)


def _relative_error(report, numeric: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(report.dZ_du) - numeric) / np.linalg.norm(numeric))


def _two_term_correlation() -> BathCorrelation:
    amplitudes = np.array([0.06 + 0.02j, 0.04 - 0.01j])
    return BathCorrelation(amplitudes, np.conj(amplitudes), np.array([0.8j, 1.5j]))


def _check_adjoint(pt, steps: int, dt: float, seed: int):
    builder = control_hamiltonian(0.5 * operator("sx"), [operator("sz"), operator("sy")])
    schedule = _random_schedule(steps, 2, dt, seed=seed)
    rho0 = vectorize(density_matrix("zero"))
    target = vectorize(density_matrix("plus"))
    report = cost_and_gradient(pt, builder, schedule, rho0, target)
    assert np.isclose(report.cost, cost(pt, builder, schedule, rho0, target), atol=1e-12)
    assert _relative_error(report, _numeric_gradient(pt, builder, schedule, rho0, target)) <= 1e-4


def test_open_system_control_gradient():
    steps, dt = 20, 0.1
    pt = heom_pt(build_generator(_two_term_correlation(), 0.5 * operator("sz"), 4), dt, steps)
    assert pt.max_bond() == 15
    _check_adjoint(pt, steps, dt, 1)


def test_stochastic_pt_control_gradient():
    steps, dt = 10, 0.1
    corr = BathCorrelation.from_single_exponential(0.09, complex(-1, 0.5))
    ensemble = sample_noise(corr.evaluate(dt * np.arange(steps)), 8, dt, steps, 2)
    _check_adjoint(stochastic_pt(ensemble, 0.5 * operator("sz")), steps, dt, 3)


def test_augmented_pt_control_gradient(lorentzian):
    steps, dt = 10, 0.1
    _check_adjoint(augmented_pt(from_lorentzian(lorentzian, 5), 0.5 * operator("sz"), dt, steps), steps, dt, 4)


def test_cost_and_gradient_survive_exact_recompression():
    steps, dt = 12, 0.1
    corr = BathCorrelation.from_single_exponential(0.09, complex(-1, 0.5))
    pt = heom_pt(build_generator(corr, 0.5 * operator("sz"), 3), dt, steps)
    compressed = recompress(pt, 0.)
    builder = control_hamiltonian(0.5 * operator("sx"), [operator("sz")])
    schedule = _random_schedule(steps, 1, dt, seed=5)
    rho0 = vectorize(density_matrix("zero"))
    target = vectorize(density_matrix("one"))
    exact = cost_and_gradient(pt, builder, schedule, rho0, target)
    after = cost_and_gradient(compressed, builder, schedule, rho0, target)
    assert abs(after.cost - exact.cost) < 1e-10
    assert np.allclose(after.dZ_du, exact.dZ_du, atol=1e-9)


def test_fd_step_must_be_positive():
    builder = control_hamiltonian(operator("sz"), [operator("sx")])
    with pytest.raises(ValueError):
        cost_and_gradient(closed_system_pt(2, 2, 0.1), builder, _random_schedule(2, 1, 0.1),
                          vectorize(density_matrix("zero")), vectorize(density_matrix("one")), fd_step=0.)


def test_pi_pulse():
    steps, dt = 20, 0.1
    builder = control_hamiltonian(jnp.zeros((2, 2)), [0.5 * operator("sx")])
    schedule = ControlSchedule(jnp.full((steps, 1), 1.), dt, ("x",))
    options = Optimizer()
    options.cost_tolerance = 1e-7
    best, rows = optimize(closed_system_pt(steps, 2, dt), builder, schedule, vectorize(density_matrix("one")), 200,
                          options, rho0=vectorize(density_matrix("zero")))
    assert rows[0]["cost"] > 0.1
    assert min(row["cost"] for row in rows) < 1e-5
    assert np.isclose(float(jnp.sum(best.values)) * dt, np.pi, atol=1e-2)


def test_bounds_are_respected():
    steps, dt = 10, 0.1
    builder = control_hamiltonian(jnp.zeros((2, 2)), [0.5 * operator("sx")])
    schedule = ControlSchedule(jnp.full((steps, 1), 0.5), dt, ("x",), jnp.asarray([0.]), jnp.asarray([1.]))
    best, _ = optimize(closed_system_pt(steps, 2, dt), builder, schedule, vectorize(density_matrix("one")), 30,
                       rho0=vectorize(density_matrix("zero")))
    assert float(jnp.max(best.values)) <= 1. and float(jnp.min(best.values)) >= 0.


def test_log_aborts_on_rising_cost():
    log = OptimizationLog(patience=3, print_interval=100)
    for iteration, value in enumerate([1., 0.5, 0.6]):
        log(iteration, value, 1., 1.)
    log(3, 0.4, 1., 1.)
    log(4, 0.45, 1., 1.)
    log(5, 0.5, 1., 1.)
    with pytest.raises(OptimizationAbort):
        log(6, 0.55, 1., 1.)
    assert len(log.rows) == 7


@pytest.mark.slow
def test_open_system_optimization_halves_the_cost(ohmic):
    """
    Ohmic bath with alpha = 0.1 and omega_q = omega_c = 1; without control the drift turns the Bloch vector by 1 rad
    """
    steps, dt = 20, 0.05
    pt = heom_pt(build_generator(fit_from_config(ohmic, BathContext()), 0.5 * operator("sz"), 4), dt, steps)
    builder = control_hamiltonian(0.5 * operator("sx"), [0.5 * operator("sx")])
    schedule = ControlSchedule(jnp.zeros((steps, 1)), dt, ("x",))
    options = Optimizer()
    options.patience = 200
    _, rows = optimize(pt, builder, schedule, vectorize(density_matrix("one")), 200, options,
                       rho0=vectorize(density_matrix("zero")))
    assert rows[0]["cost"] > 0.7
    assert min(row["cost"] for row in rows) <= 0.5 * rows[0]["cost"]

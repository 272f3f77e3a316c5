import numpy as np
import pytest
from jax import numpy as jnp

from src import ptmpo
from src.augmented import AuxiliaryMode, AuxiliaryModel, augmented_pt, augmented_step_tensor, fock_convergence, \
    from_lorentzian, joint_generator
from src.backend import COMPLEX
from src.bath import BathCorrelation
from src.constants import ConfigError, FockOverflowError, NumericalError
from src.heom import build_generator, heom_pt
from src.liouville import density_matrix, expectation, hamiltonian_propagators, operator, trace_functional, \
    vectorize


def _sx_props(steps: int, dt: float) -> jnp.ndarray:
    return hamiltonian_propagators(jnp.broadcast_to(0.5 * operator("sx"), (steps, 2, 2)), dt)


def test_joint_generator_is_trace_preserving(lorentzian):
    model = from_lorentzian(lorentzian, 4)
    generator = joint_generator(model, 0.5 * operator("sz"))
    assert generator.shape == (64, 64)
    assert np.allclose(trace_functional(8) @ generator, 0, atol=1e-12)


def test_model_correlation_matches_lorentzian(lorentzian):
    model = from_lorentzian(lorentzian, 4)
    times = np.linspace(0, 5, 11)
    assert np.allclose(model.correlation(times), 0.09 * np.exp(-1j * times - 0.5 * times))


def test_bond_dimension_is_mode_liouville_dimension(lorentzian):
    pt = augmented_pt(from_lorentzian(lorentzian, 8), 0.5 * operator("sz"), 0.1, 4)
    assert pt.bond_profile() == [1, 64, 64, 64, 1]
    assert pt.metadata["fock"] == [8]
    assert augmented_pt(from_lorentzian(lorentzian, 3), 0.5 * operator("sz"), 0.1, 1).bond_profile() == [1, 1]


def test_zero_coupling_is_closed_dynamics():
    steps, dt = 6, 0.1
    model = AuxiliaryModel((AuxiliaryMode(0., 1., 1., 3),))
    props = _sx_props(steps, dt)
    rho0 = vectorize(density_matrix("zero"))
    states = ptmpo.dynamics(augmented_pt(model, 0.5 * operator("sz"), dt, steps), props, rho0)
    expected = rho0
    for idx, prop in enumerate(props):
        expected = prop @ expected
        assert np.allclose(states[idx + 1], expected, atol=1e-10)


def test_strongly_damped_mode_gives_lindblad_dephasing():
    """
    kappa >> g: the mode acts as pure dephasing at rate 2 g^2 / kappa on the coherences of S = sz / 2
    """
    steps, dt = 20, 0.1
    model = AuxiliaryModel((AuxiliaryMode(2.5 ** 0.5, 0., 50., 6),))
    pt = augmented_pt(model, 0.5 * operator("sz"), dt, steps)
    props = jnp.broadcast_to(jnp.eye(4, dtype=COMPLEX), (steps, 4, 4))
    states = ptmpo.dynamics(pt, props, vectorize(density_matrix("plus")))
    coherence = float(expectation(operator("sx"), states[-1]).real)
    assert abs(coherence - np.exp(-0.1 * steps * dt)) < 5e-3


def test_truncation_overflow():
    model = AuxiliaryModel((AuxiliaryMode(3., 0., 1., 2),))
    with pytest.raises(FockOverflowError):
        augmented_pt(model, 0.5 * operator("sz"), 0.1, 20)


def test_needs_lorentzian(ohmic, lorentzian):
    with pytest.raises(ConfigError):
        from_lorentzian(ohmic, 4)
    with pytest.raises(ConfigError):
        from_lorentzian(lorentzian, 0)


def test_agrees_with_hierarchy(lorentzian):
    steps, dt = 200, 0.05
    coupling = 0.5 * operator("sz")
    corr = BathCorrelation.from_single_exponential(0.09, complex(-1, 0.5))
    props = _sx_props(steps, dt)
    rho0 = vectorize(density_matrix("zero"))
    hierarchy = ptmpo.dynamics(heom_pt(build_generator(corr, coupling, 6), dt, steps), props, rho0)
    augmented = ptmpo.dynamics(augmented_pt(from_lorentzian(lorentzian, 8), coupling, dt, steps), props, rho0)
    assert np.max(np.abs(augmented - hierarchy)) < 1e-3


def test_fock_convergence(lorentzian):
    steps, dt = 20, 0.1
    result = fock_convergence(from_lorentzian(lorentzian, 2), 0.5 * operator("sz"), _sx_props(steps, dt),
                              vectorize(density_matrix("zero")), operator("sz"), dt)
    assert result["fock"] >= 2
    assert result["change"] < 1e-5
    assert len(result["trajectory"]) == steps + 1


def test_reduced_dynamics_preserve_trace(lorentzian):
    steps, dt = 40, 0.1
    pt = augmented_pt(from_lorentzian(lorentzian, 6), 0.5 * operator("sz"), dt, steps)
    states = ptmpo.dynamics(pt, _sx_props(steps, dt), vectorize(density_matrix("zero")))
    assert float(jnp.max(jnp.abs(states[:, 0] + states[:, 3] - 1))) <= 1e-8


def test_recompression_lowers_the_bonds(lorentzian):
    """
    36 mode superoperator components exceed L^2 = 16, so the edge bonds shrink even at a vanishing threshold
    """
    steps, dt = 20, 0.1
    pt = augmented_pt(from_lorentzian(lorentzian, 6), 0.5 * operator("sz"), dt, steps)
    compressed = ptmpo.recompress(pt, 1e-10)
    before, after = pt.bond_profile(), compressed.bond_profile()
    assert after[1] <= 16 < before[1] and after[-2] <= 16 < before[-2]
    assert sum(after) < sum(before)
    props = _sx_props(steps, dt)
    rho0 = vectorize(density_matrix("zero"))
    final = ptmpo.contract_forward(compressed, props, rho0)[0]
    assert np.allclose(final, ptmpo.contract_forward(pt, props, rho0)[0], atol=1e-8)


def test_non_finite_mode_propagator():
    model = AuxiliaryModel((AuxiliaryMode(0.3, float("nan"), 1., 2),))
    with pytest.raises(NumericalError):
        augmented_step_tensor(model, 0.5 * operator("sz"), 0.1)

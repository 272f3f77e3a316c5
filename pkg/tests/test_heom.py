import numpy as np
import pytest
from jax import numpy as jnp

from src import ptmpo
from src.backend import COMPLEX
from src.bath import BathCorrelation, fit_from_config
from src.constants import HierarchyOverflowError
from src.context import BathContext
from src.heom import HierarchySpace, build_generator, convergence_study, heom_pt, heom_solve, hierarchy_size
from src.liouville import density_matrix, expectation, hamiltonian_propagators, operator, vectorize
from src.tdvp import independent_boson_magnetization


def _lorentzian_correlation() -> BathCorrelation:
    return BathCorrelation.from_single_exponential(0.09, complex(-1, 0.5))


def test_hierarchy_size():
    assert hierarchy_size(2, 2) == 6
    assert hierarchy_size(6, 4) == 210
    assert len(HierarchySpace(3, 3).indices) == hierarchy_size(3, 3)


def test_hierarchy_neighbours():
    space = HierarchySpace(2, 2)
    root = space.lookup((0, 0))
    upper = space.neighbour(root, 1, 1)
    assert space.indices[upper] == (0, 1)
    assert space.neighbour(root, 0, -1) is None
    assert space.neighbour(space.lookup((2, 0)), 0, 1) is None


def test_overflow():
    with pytest.raises(HierarchyOverflowError):
        build_generator(_lorentzian_correlation(), 0.5 * operator("sz"), 30, max_aux=100)


def test_generator_preserves_physical_trace():
    gen = build_generator(_lorentzian_correlation(), 0.5 * operator("sz"), 3)
    trace = vectorize(jnp.eye(2, dtype=COMPLEX))
    physical = np.asarray(gen.matrix)[:gen.liouville_dim]
    assert np.allclose(trace @ physical, 0, atol=1e-12)


def test_single_term_first_tier_generator():
    amplitude, rate = 0.09 + 0.03j, 1.2
    coupling = 0.5 * np.diag([1., -1.]).astype(complex)
    identity = np.eye(2)
    left = np.kron(identity, coupling)
    right = np.kron(coupling.T, identity)
    zeros = np.zeros((4, 4))
    expected = np.block([[zeros, -1j * (left - right)],
                         [-1j * (amplitude * left - np.conj(amplitude) * right), -rate * np.eye(4)]])
    gen = build_generator(BathCorrelation.from_single_exponential(amplitude, 1j * rate), coupling, 1)
    assert gen.matrix.shape == (8, 8)
    assert np.allclose(gen.matrix, expected, atol=1e-15)


def test_depth_errors_do_not_grow():
    dt, steps = 0.1, 30
    hamiltonians = jnp.broadcast_to(0.5 * operator("sx"), (steps, 2, 2))
    rho0 = vectorize(density_matrix("zero"))

    def magnetization(depth: int) -> np.ndarray:
        states = heom_solve(build_generator(_lorentzian_correlation(), 0.5 * operator("sz"), depth), hamiltonians,
                            rho0, dt)
        return np.asarray([expectation(operator("sz"), rho).real for rho in states])

    reference = magnetization(12)
    errors = [float(np.max(np.abs(magnetization(depth) - reference))) for depth in (0, 2, 4, 6, 8)]
    assert all(later <= earlier for earlier, later in zip(errors, errors[1:]))
    assert errors[-1] < 1e-5


def test_bond_profile():
    gen = build_generator(_lorentzian_correlation(), 0.5 * operator("sz"), 2)
    pt = heom_pt(gen, 0.1, 5)
    assert pt.bond_profile() == [1, 6, 6, 6, 6, 1]
    assert heom_pt(gen, 0.1, 1).bond_profile() == [1, 1]


def test_pt_matches_direct_solver():
    dt, steps = 0.1, 12
    gen = build_generator(_lorentzian_correlation(), 0.5 * operator("sz"), 3)
    hamiltonians = jnp.broadcast_to(0.5 * operator("sx"), (steps, 2, 2))
    rho0 = vectorize(density_matrix("zero"))
    direct = heom_solve(gen, hamiltonians, rho0, dt)
    contracted = ptmpo.dynamics(heom_pt(gen, dt, steps), hamiltonian_propagators(hamiltonians, dt), rho0)
    assert np.allclose(contracted, direct, atol=1e-12)


def test_zero_coupling_is_closed_dynamics():
    dt, steps = 0.1, 10
    gen = build_generator(_lorentzian_correlation(), jnp.zeros((2, 2), COMPLEX), 2)
    props = hamiltonian_propagators(jnp.broadcast_to(0.5 * operator("sx"), (steps, 2, 2)), dt)
    rho0 = vectorize(density_matrix("zero"))
    states = ptmpo.dynamics(heom_pt(gen, dt, steps), props, rho0)
    expected = rho0
    for idx, prop in enumerate(props):
        expected = prop @ expected
        assert np.allclose(states[idx + 1], expected, atol=1e-10)


def test_independent_boson_oracle(ohmic):
    """
    Pure dephasing from |-> with J = 0.2 omega exp(-omega): <sigma_x(3)> = -(1 + 9)^-0.1
    """
    dt, steps = 0.05, 60
    corr = fit_from_config(ohmic, BathContext())
    gen = build_generator(corr, 0.5 * operator("sz"), 4)
    pt = heom_pt(gen, dt, steps)
    props = jnp.broadcast_to(jnp.eye(4, dtype=COMPLEX), (steps, 4, 4))
    states = ptmpo.dynamics(pt, props, vectorize(density_matrix("minus")))
    magnetization = float(expectation(operator("sx"), states[-1]).real)
    assert abs(magnetization - independent_boson_magnetization(3., 0.1)) < 2e-3


def test_convergence_study():
    result = convergence_study(_lorentzian_correlation(), 0.5 * operator("sz"), jnp.zeros((2, 2), COMPLEX),
                               vectorize(density_matrix("plus")), operator("sx"), horizon=2., dt=0.1)
    assert result["converged"]
    assert result["depth"] >= 4
    assert result["dt"] == 0.05
    assert len(result["trajectory"]) == 41


def test_recompression_trims_the_edges():
    dt, steps = 0.05, 30
    gen = build_generator(_lorentzian_correlation(), 0.5 * operator("sz"), 4)
    pt = heom_pt(gen, dt, steps)
    compressed = ptmpo.recompress(pt, 1e-7)
    profile = compressed.bond_profile()
    assert profile[1] < max(profile) and profile[-2] < max(profile)
    props = hamiltonian_propagators(jnp.broadcast_to(0.5 * operator("sx"), (steps, 2, 2)), dt)
    rho0 = vectorize(density_matrix("zero"))
    deviation = jnp.abs(ptmpo.dynamics(compressed, props, rho0) - ptmpo.dynamics(pt, props, rho0))
    assert float(jnp.max(deviation)) <= 1e-5

"""
Tests for sim.py module.
"""
import numpy as np
import pytest
import scipy.linalg

from conftest import load_fixture
from equilibria import time_integrals
from errors import NetworkValidationError, SolverDivergence
from graph import strongly_connected_components
from netparse import build_reaction_matrix, parse_network
from sim import (
    Grid,
    ImplicitStepper,
    SimulationState,
    SolverConfig,
    initial_averages,
    initial_state,
    laplacian_matrix,
    neumann_laplacian,
    simulate,
    spatial_average,
    step,
)


@pytest.fixture(scope="module")
def four_components_trace():
    """Long run of the non-weakly reversible fixture, shared by several tests."""
    return simulate(load_fixture("four_components"), SolverConfig(dt=1e-2, t_end=40.0, sample_every=100))


class TestGrid:
    """Test grid geometry and solver configuration."""

    def test_centers(self):
        """Test cell centers and width."""
        grid = Grid(4)

        assert grid.dx == 0.25
        np.testing.assert_allclose(grid.centers, [0.125, 0.375, 0.625, 0.875])

    def test_empty_grid_rejected(self):
        """Test that zero cells is invalid."""
        with pytest.raises(ValueError):
            Grid(0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"dt": 0.0},
            {"dt": -1.0},
            {"dt": 1.0, "t_end": 0.5},
            {"sample_every": 0},
            {"solver": "cg"},
            {"linear_solver_tol": 0.0},
            {"grid_cells": 0},
        ],
    )
    def test_config_validation(self, kwargs):
        """Test that bad solver settings are rejected."""
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)

    def test_n_steps(self):
        """Test rounding of t_end / dt."""
        assert SolverConfig(dt=0.1, t_end=1.0).n_steps == 10


class TestLaplacian:
    """Test the Neumann finite-volume Laplacian."""

    def test_constant_field(self):
        """Test that constants are in the kernel."""
        np.testing.assert_array_equal(neumann_laplacian(np.full(10, 3.0), Grid(10)), np.zeros(10))

    def test_second_order_convergence(self):
        """Test the error ratio on cos(pi x) when the grid is refined."""
        errors = []
        for n in (64, 128):
            grid = Grid(n)
            x = grid.centers
            approx = neumann_laplacian(np.cos(np.pi * x), grid)
            errors.append(np.abs(approx + np.pi**2 * np.cos(np.pi * x)).max())

        assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.2)

    def test_conservative(self):
        """Test that the Laplacian integrates to zero."""
        grid = Grid(50)
        field = np.random.default_rng(3).uniform(0, 5, grid.n)

        assert abs(spatial_average(neumann_laplacian(field, grid), grid)) <= 1e-9

    @pytest.mark.parametrize("n", [1, 2, 7, 32])
    def test_matrix_matches_stencil(self, n):
        """Test the sparse matrix against the stencil."""
        grid = Grid(n)
        field = np.random.default_rng(n).uniform(0, 1, n)

        np.testing.assert_allclose(laplacian_matrix(grid) @ field, neumann_laplacian(field, grid), atol=1e-9)


class TestInitialState:
    """Test initial data on the grid."""

    def test_averages(self, two_species):
        """Test the averages of constant profiles."""
        np.testing.assert_allclose(initial_averages(two_species), [1.0, 2.0])

    def test_bump_average(self, diffusion_bump):
        """Test that a half-period cosine bump averages to its offset."""
        state = initial_state(diffusion_bump)

        assert state.fields.shape == (1, 256)
        assert state.mass() == pytest.approx(1.0, abs=1e-12)

    def test_fields_read_only(self, two_species):
        """Test that a snapshot cannot be mutated."""
        state = initial_state(two_species)

        with pytest.raises(ValueError):
            state.fields[0, 0] = 1.0

    def test_coarse_grid_without_mass(self):
        """Test that a grid whose centers miss every nonzero value is rejected."""
        net = parse_network("species A\ninit A step 1 0 0.01")

        assert initial_state(net).mass() > 0
        with pytest.raises(NetworkValidationError, match="8-cell grid"):
            initial_state(net, Grid(8))

    def test_shape_mismatch(self):
        """Test that fields must match the grid."""
        with pytest.raises(ValueError):
            SimulationState(t=0.0, fields=np.zeros((2, 3)), grid=Grid(4))


class TestImplicitStepper:
    """Test the backward Euler step."""

    @pytest.mark.parametrize("name", ["two_species", "triangle_detailed", "triangle_complex", "random5"])
    def test_matches_matrix_exponential(self, name):
        """Test spatially uniform data against expm(t A) u0."""
        net = load_fixture(name)
        A = build_reaction_matrix(net)
        dt, t_end = 1e-3, 1.0
        grid = Grid(8)
        u0 = initial_averages(net, grid)
        state = SimulationState(t=0.0, fields=np.repeat(u0[:, None], grid.n, axis=1), grid=grid)
        stepper = ImplicitStepper(A, net.diffusions, grid, dt)
        for _ in range(int(round(t_end / dt))):
            state = stepper.advance(state)

        exact = scipy.linalg.expm(t_end * np.asarray(A)) @ u0
        norm = np.linalg.norm(np.asarray(A), 2)

        np.testing.assert_allclose(state.averages(), exact, atol=5 * dt * norm * t_end)
        np.testing.assert_allclose(state.fields, np.repeat(state.averages()[:, None], grid.n, axis=1), atol=1e-12)

    def test_step_function(self, triangle_complex):
        """Test that step() agrees with a stepper built once."""
        A = build_reaction_matrix(triangle_complex)
        state = initial_state(triangle_complex, Grid(16))

        once = step(state, A, triangle_complex.diffusions, 1e-2)
        again = ImplicitStepper(A, triangle_complex.diffusions, state.grid, 1e-2).advance(state)

        np.testing.assert_allclose(once.fields, again.fields, rtol=1e-13)
        assert once.t == pytest.approx(1e-2)

    def test_invalid_dt(self, two_species):
        """Test that dt must be positive."""
        with pytest.raises(ValueError):
            ImplicitStepper(build_reaction_matrix(two_species), two_species.diffusions, Grid(4), 0.0)

    def test_bicgstab_matches_splu(self, triangle_complex):
        """Test that both linear solvers give the same trajectory."""
        direct = simulate(triangle_complex, SolverConfig(dt=1e-2, t_end=0.5, grid_cells=16, solver="splu"))
        iterative = simulate(triangle_complex, SolverConfig(dt=1e-2, t_end=0.5, grid_cells=16, solver="bicgstab"))

        for name in triangle_complex.species:
            np.testing.assert_allclose(
                iterative.column(f"avg_{name}"), direct.column(f"avg_{name}"), rtol=1e-8, atol=1e-10
            )

    def test_divergence_reported(self, diffusion_bump):
        """Test that an unreachable tolerance raises SolverDivergence."""
        config = SolverConfig(dt=1e-3, t_end=1e-3, solver="bicgstab", max_iter=1, linear_solver_tol=1e-300)

        with pytest.raises(SolverDivergence):
            simulate(diffusion_bump, config)


class TestSimulate:
    """Test full runs and their invariants."""

    def test_mass_conserved(self, two_species):
        """Test mass drift over ten thousand steps."""
        trace = simulate(two_species, SolverConfig(dt=1e-3, t_end=10.0, sample_every=1000, grid_cells=16))

        assert np.abs(trace.column("mass") - 3.0).max() <= 1e-10 * 3.0

    def test_nonnegative(self, degenerate):
        """Test that concentrations stay nonnegative with a step profile."""
        trace = simulate(degenerate, SolverConfig(dt=1e-2, t_end=2.0, sample_every=5, grid_cells=64))

        assert trace.column("min_u").min() >= -1e-12

    def test_two_species_equilibrium(self, two_species):
        """Test convergence to (2, 1)."""
        trace = simulate(two_species, SolverConfig(dt=1e-2, t_end=10.0, grid_cells=16))

        assert trace.column("avg_A")[-1] == pytest.approx(2.0, abs=1e-6)
        assert trace.column("avg_B")[-1] == pytest.approx(1.0, abs=1e-6)

    def test_heat_equation(self, diffusion_bump):
        """Test that a single diffusing species flattens to its mean."""
        trace = simulate(diffusion_bump, SolverConfig(dt=1e-3, t_end=2.0, sample_every=100))

        assert trace.column("l2_dist_U")[-1] < 1e-6
        assert trace.metadata["limit"] == pytest.approx([1.0])

    def test_four_components_limit(self, four_components_trace):
        """Test L2 distance to the large-time limit at t = 40."""
        for name in ("S1", "S2", "S3", "S4", "S5", "S6"):
            assert four_components_trace.column(f"l2_dist_{name}")[-1] < 1e-6

    def test_four_components_entropy_undefined(self, four_components_trace):
        """Test that E and D are NaN without weak reversibility."""
        assert four_components_trace.metadata["weakly_reversible"] is False
        assert np.isnan(four_components_trace.column("E")).all()
        assert four_components_trace.metadata["kinds"] == ["source", "transmission", "target", "target"]

    def test_four_components_component_masses(self, four_components_trace):
        """Test that upstream components drain into the targets."""
        assert four_components_trace.column("mass_c0")[0] == pytest.approx(2.0)
        assert four_components_trace.column("mass_c0")[-1] < 1e-9
        total = four_components_trace.column("mass_c2")[-1] + four_components_trace.column("mass_c3")[-1]
        assert total == pytest.approx(6.0, rel=1e-10)

    def test_four_components_time_integrals(self, four_components_trace):
        """Test the accumulated integrals against -inv(A_nt) U_nt(0)."""
        net = load_fixture("four_components")
        dec = strongly_connected_components(net)
        exact = time_integrals(build_reaction_matrix(net), dec, initial_averages(net)).as_dict()
        measured = four_components_trace.metadata["time_integrals"]
        tail = four_components_trace.metadata["time_integral_tail"]

        assert set(measured) == set(exact) == {0, 1, 2}
        for s, value in exact.items():
            assert abs(measured[s] - value) <= 1e-6 + tail

    def test_sampling(self, two_species):
        """Test sample times and the per-sample callback."""
        seen = []

        trace = simulate(
            two_species,
            SolverConfig(dt=0.1, t_end=1.0, sample_every=3, grid_cells=4),
            on_sample=lambda s: seen.append(s.t),
        )

        np.testing.assert_allclose(trace.times, [0.0, 0.3, 0.6, 0.9, 1.0])
        np.testing.assert_allclose(seen, trace.times)

    def test_deterministic_csv(self, triangle_complex):
        """Test that two identical runs serialize identically."""
        config = SolverConfig(dt=1e-2, t_end=0.2, grid_cells=16)

        assert simulate(triangle_complex, config).to_csv() == simulate(triangle_complex, config).to_csv()

    def test_metadata(self, two_species):
        """Test run metadata for a weakly reversible network."""
        trace = simulate(two_species, SolverConfig(dt=0.1, t_end=0.2, grid_cells=4))

        assert trace.metadata["network_sha256"] == two_species.fingerprint()
        assert trace.metadata["grid_cells"] == 4
        assert trace.metadata["weakly_reversible"] is True
        assert trace.metadata["time_integrals"] == {}
        assert trace.metadata["solver_fallbacks"] == 0

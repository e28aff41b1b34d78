"""
Tests for dynamics module: right-hand side, RK4 step and full simulations.

Runs on the ten-node fixture are marked slow.
"""

import numpy as np
import pytest

from gridfreq.analysis import (
    convergence_time,
    delayed_limit_predict,
    gain_for_target_cost,
    steady_state_predict,
)
from gridfreq.comm import CommGraph
from gridfreq.control import (
    AVERAGING,
    CONVEX_PRICE,
    DECENTRALIZED,
    DELAYED,
    Capacity,
    ControllerSpec,
    CostModel,
    gains,
)
from gridfreq.dispatch import evaluate_cost, optimal_convex
from gridfreq.dynamics import (
    Perturbation,
    SimConfig,
    SystemState,
    initial_steady_state,
    perturbed_power,
    rhs,
    simulate,
    step,
)
from gridfreq.errors import NoConvergenceError, NonFiniteError, UnbalancedError, ValidationError
from gridfreq.grid import GridSpec, LineSpec, NodeParams, weighted_laplacian
from gridfreq.scenario import bundled_scenario, load_scenario
from gridfreq.utils import read_csv

from .conftest import TEN_NODE_OPTIMAL_COST, make_grid

UNIT_COST = CostModel((1.0, 1.0))


def assert_recovered(trajectory):
    """Converged runs end at nominal frequency with balanced injections."""
    assert trajectory.converged
    final = trajectory.final
    assert np.max(np.abs(final.omega)) < 1e-6
    assert abs(float(np.sum(trajectory.power + final.u))) < 1e-5


class TestInitialSteadyState:
    """Test initial_steady_state."""

    def test_zero_injection(self, two_node_grid):
        state = initial_steady_state(two_node_grid)
        np.testing.assert_array_equal(state.theta, np.zeros(2))
        np.testing.assert_array_equal(state.omega, np.zeros(2))

    def test_two_node_angles(self):
        grid = make_grid([1.0, -1.0], [(0, 1, 1.0)])
        np.testing.assert_allclose(initial_steady_state(grid).theta, [0.5, -0.5])

    def test_ten_node_grid(self, ten_node_grid):
        state = initial_steady_state(ten_node_grid)
        assert ten_node_grid.power.sum() == pytest.approx(0.0, abs=1e-12)
        assert state.theta.mean() == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_equal(state.u, np.zeros(10))

    def test_unbalanced(self):
        with pytest.raises(UnbalancedError, match="unbalanced initial power"):
            initial_steady_state(make_grid([1.0, 0.0], [(0, 1, 1.0)]))


class TestRhs:
    """Test the closed-loop right-hand side."""

    def test_steady_state_is_fixed_point(self, ten_node_grid, ten_node_cost):
        state = initial_steady_state(ten_node_grid)
        derivative = rhs(state, ten_node_grid, ControllerSpec(DECENTRALIZED, 1.0, ten_node_cost))
        np.testing.assert_allclose(derivative.theta, 0.0, atol=1e-12)
        np.testing.assert_allclose(derivative.omega, 0.0, atol=1e-10)
        np.testing.assert_allclose(derivative.u, 0.0, atol=1e-12)

    def test_load_frequency_is_algebraic(self):
        nodes = (
            NodeParams("generator", 0.1, 1.0, -1.0, 1.0),
            NodeParams("load", 0.0, 2.0, 1.0, 1.0),
        )
        grid = GridSpec(nodes, (LineSpec(0, 1, 1.0),))
        state = SystemState(np.zeros(2), np.zeros(2), np.zeros(2))
        derivative = rhs(state, grid, ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST))
        assert derivative.theta[1] == pytest.approx(0.5)
        assert derivative.omega[1] == 0.0

    def test_generator_acceleration(self, ten_node_grid, ten_node_cost):
        state = initial_steady_state(ten_node_grid)
        power = ten_node_grid.power
        power[0] -= 5.0
        derivative = rhs(state, ten_node_grid, ControllerSpec(DECENTRALIZED, 1.0, ten_node_cost), power=power)
        assert derivative.omega[0] == pytest.approx(-500.0, rel=1e-9)

    def test_price_derivative(self, two_node_grid):
        cost = CostModel((1.0, 1.0), family="power_law", gamma=3.0)
        state = SystemState(np.zeros(2), np.array([-0.5, 0.0]), np.array([1.0, 1.0]))
        derivative = rhs(state, two_node_grid, ControllerSpec(CONVEX_PRICE, 2.0, cost))
        np.testing.assert_allclose(derivative.v, [1.0, 0.0])
        # u = sqrt(v) at v = 1: du = dv / 2
        np.testing.assert_allclose(derivative.u, [0.5, 0.0], rtol=1e-5)

    def test_dimension_mismatch(self, two_node_grid):
        state = SystemState(np.zeros(3), np.zeros(3), np.zeros(3))
        with pytest.raises(ValidationError):
            rhs(state, two_node_grid, ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST))


class TestStep:
    """Test the RK4 step."""

    def test_fixed_point_unchanged(self, ten_node_grid, ten_node_cost):
        state = initial_steady_state(ten_node_grid)
        after = step(state, ten_node_grid, ControllerSpec(DECENTRALIZED, 1.0, ten_node_cost), dt=0.01)
        np.testing.assert_allclose(after.theta, state.theta, atol=1e-12)
        np.testing.assert_allclose(after.u, state.u, atol=1e-12)
        assert after.t == pytest.approx(0.01)

    def test_fourth_order(self, two_node_grid, two_node_step):
        controller = ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST)
        power = perturbed_power(two_node_grid, two_node_step)

        def run(dt):
            state = initial_steady_state(two_node_grid)
            for _ in range(int(round(0.2 / dt))):
                state = step(state, two_node_grid, controller, dt=dt, power=power)
            return np.concatenate((state.theta, state.omega, state.u))

        reference = run(0.002)
        coarse = np.max(np.abs(run(0.04) - reference))
        fine = np.max(np.abs(run(0.02) - reference))
        assert 10.0 < coarse / fine < 24.0

    def test_stiff_step_diverges(self, ten_node_grid, ten_node_cost, ten_node_step):
        controller = ControllerSpec(DECENTRALIZED, 1.0, ten_node_cost)
        power = perturbed_power(ten_node_grid, ten_node_step)
        state = initial_steady_state(ten_node_grid)
        with pytest.raises(NonFiniteError) as excinfo:
            for _ in range(500):
                state = step(state, ten_node_grid, controller, dt=1.0, power=power)
        assert excinfo.value.time > 0

    def test_rejects_bad_dt(self, two_node_grid):
        with pytest.raises(ValidationError):
            step(
                initial_steady_state(two_node_grid),
                two_node_grid,
                ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST),
                dt=0.0,
            )


class TestSimConfig:
    """Test SimConfig validation."""

    def test_defaults(self):
        sim = SimConfig()
        assert sim.dt == 1e-3
        assert sim.t_max == 2000.0
        assert sim.steady_eps == 1e-6

    def test_invalid(self):
        with pytest.raises(ValidationError):
            SimConfig(dt=0.0)
        with pytest.raises(ValidationError):
            SimConfig(sample_every=0)


class TestSimulateTwoNode:
    """Test simulate on the two-node reference grid."""

    SIM = SimConfig(dt=0.01, t_max=400.0, steady_eps=1e-9, sample_every=10, steady_window=2.0)

    def test_no_perturbation(self, two_node_grid):
        sim = SimConfig(dt=0.01, t_max=50.0, sample_every=10, steady_window=1.0)
        trajectory = simulate(two_node_grid, [], ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST), sim=sim)
        assert trajectory.converged
        assert trajectory.steady_time == pytest.approx(1.0, abs=0.02)
        np.testing.assert_array_equal(trajectory.u, np.zeros_like(trajectory.u))

    def test_step_response(self, two_node_grid, two_node_step):
        trajectory = simulate(
            two_node_grid, two_node_step, ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST), sim=self.SIM
        )
        assert_recovered(trajectory)
        np.testing.assert_allclose(trajectory.u[-1], [2 / 3, 1 / 3], atol=1e-6)
        assert trajectory.times[0] == 0.0
        assert trajectory.times[-1] == pytest.approx(trajectory.steady_time)

    def test_averaging_reaches_optimum(self, two_node_grid, two_node_step):
        trajectory = simulate(
            two_node_grid, two_node_step, ControllerSpec(AVERAGING, 1.0, UNIT_COST), sim=self.SIM
        )
        assert_recovered(trajectory)
        np.testing.assert_allclose(trajectory.u[-1], [0.5, 0.5], atol=1e-6)

    def test_averaging_split_is_decentralized(self, two_node_grid, two_node_step):
        comm = CommGraph.from_grid(two_node_grid, failed=[(0, 1)])
        trajectory = simulate(
            two_node_grid, two_node_step, ControllerSpec(AVERAGING, 1.0, UNIT_COST), comm, sim=self.SIM
        )
        assert_recovered(trajectory)
        np.testing.assert_allclose(trajectory.u[-1], [2 / 3, 1 / 3], atol=1e-6)

    def test_price_controller_quadratic_matches_integral(self, two_node_grid, two_node_step):
        trajectory = simulate(
            two_node_grid, two_node_step, ControllerSpec(CONVEX_PRICE, 1.0, UNIT_COST), sim=self.SIM
        )
        assert_recovered(trajectory)
        np.testing.assert_allclose(trajectory.u[-1], [2 / 3, 1 / 3], atol=1e-6)
        np.testing.assert_allclose(trajectory.v[-1], trajectory.u[-1], atol=1e-12)

    def test_capacity_clamp(self, two_node_grid, two_node_step):
        capacity = Capacity((0.0, -np.inf), (0.2, np.inf))
        controller = ControllerSpec(CONVEX_PRICE, 0.1, UNIT_COST, capacity=capacity)
        sim = SimConfig(dt=0.01, t_max=1500.0, steady_eps=1e-8, sample_every=100)
        trajectory = simulate(two_node_grid, two_node_step, controller, sim=sim)
        assert_recovered(trajectory)
        assert np.all(trajectory.u[:, 0] <= 0.2 + 1e-12)
        assert np.all(trajectory.u[:, 0] >= 0.0)
        optimal = optimal_convex(UNIT_COST, -1.0, capacity).total_cost
        gap = evaluate_cost(trajectory.u[-1], UNIT_COST) - optimal
        assert -1e-9 <= gap <= 4.0 * 1.0 * 2 * 0.1 / (1.0 * 2.0)

    def test_late_perturbation(self, two_node_grid):
        perturbations = [Perturbation(node=1, delta_p=-0.5, at_time=1.0)]
        trajectory = simulate(
            two_node_grid, perturbations, ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST), sim=self.SIM
        )
        before = trajectory.times < 1.0 - 1e-9
        assert before.sum() > 1
        np.testing.assert_array_equal(trajectory.u[before], np.zeros_like(trajectory.u[before]))
        assert trajectory.steady_time > 1.0
        assert_recovered(trajectory)

    def test_no_convergence(self, two_node_grid, two_node_step):
        sim = SimConfig(dt=0.01, t_max=1.0, sample_every=10)
        trajectory = simulate(
            two_node_grid, two_node_step, ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST), sim=sim
        )
        assert not trajectory.converged
        assert trajectory.steady_time is None
        assert trajectory.times[-1] == pytest.approx(1.0)
        with pytest.raises(NoConvergenceError) as excinfo:
            trajectory.require_converged()
        assert excinfo.value.trajectory is trajectory

    def test_divergence(self, ten_node_grid, ten_node_step, ten_node_cost):
        sim = SimConfig(dt=1.0, t_max=1000.0)
        with pytest.raises(NonFiniteError):
            simulate(ten_node_grid, ten_node_step, ControllerSpec(DECENTRALIZED, 1.0, ten_node_cost), sim=sim)

    def test_bad_perturbation_node(self, two_node_grid):
        with pytest.raises(ValidationError, match="out of range"):
            simulate(
                two_node_grid,
                [Perturbation(node=5, delta_p=-1.0)],
                ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST),
            )

    def test_trajectory_csv(self, two_node_grid, two_node_step, tmp_path):
        sim = SimConfig(dt=0.01, t_max=2.0, sample_every=50)
        trajectory = simulate(
            two_node_grid, two_node_step, ControllerSpec(DECENTRALIZED, 1.0, UNIT_COST), sim=sim
        )
        path = trajectory.to_csv(str(tmp_path / "trajectory.csv"))
        rows = read_csv(path)
        assert list(rows[0].keys()) == [
            "t", "theta_1", "theta_2", "omega_1", "omega_2", "u_1", "u_2"
        ]
        assert len(rows) == len(trajectory)
        assert float(rows[-1]["u_1"]) == trajectory.u[-1, 0]
        snapshot = trajectory.snapshot(2)
        assert snapshot.t == pytest.approx(1.0)


class TestSimulateTriangle:
    """Steady-state power flow and reproducibility on a meshed three-node grid."""

    SIM = SimConfig(dt=0.01, t_max=400.0, steady_eps=1e-10, sample_every=100, steady_window=2.0)

    @pytest.fixture
    def triangle(self):
        return make_grid([0.6, -0.2, -0.4], [(0, 1, 1.0), (1, 2, 0.5), (0, 2, 0.8)])

    def test_steady_state_satisfies_power_flow(self, triangle):
        controller = ControllerSpec(DECENTRALIZED, 1.0, CostModel((1.0, 2.0, 4.0)))
        trajectory = simulate(triangle, [Perturbation(node=1, delta_p=-1.0)], controller, sim=self.SIM)
        assert_recovered(trajectory)
        final = trajectory.final
        shift = final.theta - trajectory.theta[0]
        residual = weighted_laplacian(triangle) @ shift - (trajectory.power + final.u - triangle.power)
        assert np.max(np.abs(residual)) < 1e-6

    def test_identical_runs_are_bit_identical(self, triangle):
        controller = ControllerSpec(AVERAGING, 1.0, CostModel((1.0, 2.0, 4.0)))
        step = [Perturbation(node=2, delta_p=-0.5, at_time=0.3)]
        sim = SimConfig(dt=0.01, t_max=5.0, sample_every=7)
        first = simulate(triangle, step, controller, sim=sim)
        second = simulate(triangle, step, controller, sim=sim)
        for name in ("times", "theta", "omega", "u"):
            np.testing.assert_array_equal(getattr(first, name), getattr(second, name))
        assert first.converged == second.converged


class TestSimulateTenNodeGrid:
    """Full runs on the ten-node fixture."""

    DECENTRALIZED_SIM = SimConfig(dt=0.005, t_max=3000.0, steady_eps=2e-7, sample_every=200)

    @pytest.mark.slow
    def test_decentralized_matches_predictor(self, ten_node_grid, ten_node_step, ten_node_cost):
        trajectory = simulate(
            ten_node_grid, ten_node_step, ControllerSpec(DECENTRALIZED, 1.0, ten_node_cost), sim=self.DECENTRALIZED_SIM
        )
        assert_recovered(trajectory)
        predicted = steady_state_predict(
            ten_node_grid, gains(ten_node_cost, 1.0), ten_node_grid.power, perturbed_power(ten_node_grid, ten_node_step)
        )
        np.testing.assert_allclose(trajectory.u[-1], predicted.u, rtol=1e-4, atol=1e-5)
        assert evaluate_cost(trajectory.u[-1], ten_node_cost) == pytest.approx(30.2413, abs=1e-3)

    @pytest.mark.slow
    def test_delayed_control_lowers_cost(self, ten_node_grid, ten_node_step, ten_node_cost):
        runs = {}
        for delay in (0.0, 30.0):
            controller = ControllerSpec(DELAYED, 1.0, ten_node_cost, delay=delay)
            runs[delay] = simulate(ten_node_grid, ten_node_step, controller, sim=self.DECENTRALIZED_SIM)
            assert_recovered(runs[delay])

        cost = {delay: evaluate_cost(run.u[-1], ten_node_cost) for delay, run in runs.items()}
        assert cost[30.0] < cost[0.0]
        assert cost[30.0] <= 0.9 * cost[0.0]

        # long delay: droop has settled, closed-form limit applies
        limit = delayed_limit_predict(
            ten_node_grid, gains(ten_node_cost, 1.0), ten_node_grid.power, perturbed_power(ten_node_grid, ten_node_step)
        )
        assert cost[30.0] == pytest.approx(evaluate_cost(limit.u, ten_node_cost), rel=1e-3)

        times = [convergence_time(run) for run in runs.values()]
        assert max(times) <= 2.0 * min(times)


@pytest.fixture(scope="module")
def averaging_runs():
    """Averaging control on the ten-node fixture: full comm and two failure sets."""
    scenario = load_scenario(bundled_scenario("tennode"))
    grid = scenario.grid
    controller = ControllerSpec(AVERAGING, 1.0, CostModel(tuple(grid.cost)))
    comm = CommGraph.from_grid(grid)
    strict = SimConfig(dt=0.002, t_max=3000.0, steady_eps=1e-8, sample_every=500)
    default = SimConfig(dt=0.002, t_max=3000.0, steady_eps=2e-7, sample_every=500)
    return {
        "full": simulate(grid, scenario.perturbations, controller, comm, sim=strict),
        # parallel to B = 0.5 and 1.0
        "strong": simulate(
            grid, scenario.perturbations, controller, comm.with_failures([(0, 1), (1, 4)]), sim=default
        ),
        # parallel to B = 0.2 and 0.11
        "weak": simulate(
            grid, scenario.perturbations, controller, comm.with_failures([(3, 4), (6, 7)]), sim=default
        ),
        "cost": controller.cost,
    }


class TestAveragingTenNodeGrid:
    """Averaging control on the ten-node fixture."""

    @pytest.mark.slow
    def test_consensus_with_full_comm(self, averaging_runs):
        trajectory = averaging_runs["full"]
        assert_recovered(trajectory)
        cost = averaging_runs["cost"]
        marginal = cost.marginal(trajectory.u[-1])
        assert marginal.max() - marginal.min() < 1e-5
        assert evaluate_cost(trajectory.u[-1], cost) == pytest.approx(TEN_NODE_OPTIMAL_COST, rel=1e-3)
        assert 200.0 / 3 <= convergence_time(trajectory) <= 600.0

    @pytest.mark.slow
    def test_failure_ordering(self, averaging_runs):
        cost = averaging_runs["cost"]
        for key in ("strong", "weak"):
            assert_recovered(averaging_runs[key])
        strong = evaluate_cost(averaging_runs["strong"].u[-1], cost)
        weak = evaluate_cost(averaging_runs["weak"].u[-1], cost)
        assert TEN_NODE_OPTIMAL_COST < strong < weak
        assert strong == pytest.approx(23.2947, abs=1e-2)
        assert weak == pytest.approx(23.5391, abs=1e-2)

    @pytest.mark.slow
    def test_fewer_links_converge_slower(self, averaging_runs, ten_node_grid, ten_node_step, ten_node_cost):
        target = 1.05 * TEN_NODE_OPTIMAL_COST
        h = gain_for_target_cost(ten_node_grid, ten_node_step, target, cost=ten_node_cost)
        decentralized = simulate(
            ten_node_grid,
            ten_node_step,
            ControllerSpec(DECENTRALIZED, h, ten_node_cost),
            sim=SimConfig(dt=0.005, t_max=6000.0, steady_eps=2e-7, sample_every=200),
        )
        assert_recovered(decentralized)
        assert evaluate_cost(decentralized.u[-1], ten_node_cost) == pytest.approx(target, rel=2e-3)
        assert convergence_time(decentralized) > convergence_time(averaging_runs["full"])

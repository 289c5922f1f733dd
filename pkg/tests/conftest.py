import pytest

from coplan.harness import ScenarioProfile, generate_scenario, generate_suite
from coplan.scenario import HazardAlert, NavigationPlan, Scenario, VehicleState


def straight_scenario(speed=10.0, hazard=None, others=None, steps=41, dt=0.1, t_now=2.0, n_wp=20):
    """Ego driving along +x from the origin; nav waypoints every 0.5 s of travel."""
    ego = tuple(VehicleState(speed * k * dt, 0.0, 0.0, speed, 0.0, 0.0, "ego", k) for k in range(steps))
    agents = {"ego": ego}
    for aid, (x, y, vx, vy) in (others or {}).items():
        agents[aid] = tuple(VehicleState(x + vx * k * dt, y + vy * k * dt, 0.0, vx, vy, 0.0, aid, k)
                            for k in range(steps))
    nav = NavigationPlan(tuple((speed * 0.5 * j, 0.0, 0.0) for j in range(n_wp)),
                         current_index=int(round(t_now / 0.5)))
    return Scenario(agents, "ego", nav, hazard, dt, {"id": "straight"}, t_now)


@pytest.fixture
def straight():
    return straight_scenario


@pytest.fixture(scope="session")
def suite():
    return generate_suite(50, 0)


@pytest.fixture(scope="session")
def hazard_scenario():
    return generate_scenario(ScenarioProfile("highway", "clear", "noon", density=3, seed=7))


def hazard_at(x, y, t_h=2.5):
    return HazardAlert(x, y, 0.0, t_h=t_h, issue_time=0.0)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

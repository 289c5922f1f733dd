import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coplan.scenario import HazardAlert, NavigationPlan, VehicleState
from coplan.structuring import (
    ValidationConfig,
    build_context,
    filter_ego_history,
    filter_navigation,
    validate_hazard,
)

from conftest import hazard_at


def nav_to(x_end, n=5):
    return NavigationPlan(tuple((x_end * j / (n - 1), 0.0, 0.0) for j in range(n)))


CFG = ValidationConfig(delta_t_max=2.0)


@pytest.mark.parametrize(
    "x_h, lead, expected",
    [
        (80.0, 0.5, True),    # route ok, fresh
        (150.0, 0.5, False),  # beyond destination
        (80.0, 3.0, False),   # stale
        (150.0, 3.0, False),  # both fail
    ],
)
def test_hazard_truth_table(x_h, lead, expected):
    t_now = 5.0
    h = HazardAlert(x_h, 0.0, t_h=t_now + lead)
    assert (validate_hazard(h, nav_to(120.0), t_now, CFG) is h) is expected


def test_hazard_boundaries_are_strict():
    assert validate_hazard(HazardAlert(120.0, 0.0, t_h=1.0), nav_to(120.0), 1.0, CFG) is None
    assert validate_hazard(HazardAlert(80.0, 0.0, t_h=3.0), nav_to(120.0), 1.0, CFG) is None


def test_validation_config_positive():
    with pytest.raises(ValueError):
        ValidationConfig(delta_t_max=0.0)
    with pytest.raises(ValueError):
        ValidationConfig(nav_horizon=0)


@settings(max_examples=300, deadline=None)
@given(st.floats(-50, 200), st.floats(0, 20), st.floats(0, 20), st.floats(0.01, 10), st.floats(0, 10))
def test_delta_t_monotone(x_h, t_h, t_now, a, extra):
    h = HazardAlert(x_h, 0.0, t_h=t_h)
    nav = nav_to(120.0)
    if validate_hazard(h, nav, t_now, ValidationConfig(delta_t_max=a)) is not None:
        assert validate_hazard(h, nav, t_now, ValidationConfig(delta_t_max=a + extra)) is h


def test_filter_navigation_examples():
    nav = NavigationPlan(tuple((float(j), 0.0, 0.0) for j in range(10)), current_index=3)
    assert [w[0] for w in filter_navigation(nav, ValidationConfig(nav_horizon=4))] == [3, 4, 5, 6, 7]
    nav8 = NavigationPlan(nav.waypoints, current_index=8)
    assert [w[0] for w in filter_navigation(nav8, ValidationConfig(nav_horizon=4))] == [8, 9]


def test_filter_navigation_degenerate_horizon():
    # the horizon must be positive in config, so emulate M'=0 with a raw slice check
    nav = NavigationPlan(tuple((float(j), 0.0, 0.0) for j in range(4)), current_index=2)
    assert filter_navigation(nav, ValidationConfig(nav_horizon=1)) == [(2.0, 0.0, 0.0), (3.0, 0.0, 0.0)]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30), st.integers(0, 29), st.integers(1, 12))
def test_filter_navigation_is_contiguous_slice(n, k, horizon):
    k = k % n
    nav = NavigationPlan(tuple((float(j), float(-j), 0.0) for j in range(n)), current_index=k)
    out = filter_navigation(nav, ValidationConfig(nav_horizon=horizon))
    assert 1 <= len(out) <= horizon + 1
    assert out == list(nav.waypoints[k : k + len(out)])


def states_until(t_end, dt=0.1):
    return [VehicleState(float(k), 0.0, agent_id="ego", k=k) for k in range(int(round(t_end / dt)) + 1)]


def test_history_window_examples():
    cfg = ValidationConfig(history_window_s=2.0)
    out = filter_ego_history(states_until(5.0), 5.0, cfg)
    assert len(out) == 21
    assert out[0].k == 30 and out[-1].k == 50
    assert len(filter_ego_history(states_until(0.5), 0.5, cfg)) == 6
    assert filter_ego_history([], 1.0, cfg) == []


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 80), st.floats(0.1, 5.0))
def test_history_window_predicate(k_now, window):
    dt = 0.1
    states = states_until(8.0)
    t_now = k_now * dt
    out = filter_ego_history(states, t_now, ValidationConfig(history_window_s=window), dt)
    assert [s.k for s in out] == sorted(s.k for s in out)
    expected = [s for s in states if t_now - window - 1e-9 <= s.k * dt <= t_now + 1e-9]
    assert out == expected


def test_build_context_matches_separate_filters(straight):
    rng = random.Random(3)
    for _ in range(50):
        t_h = rng.uniform(0.0, 6.0)
        sc = straight(hazard=hazard_at(rng.uniform(0, 120), rng.uniform(-3, 3), t_h))
        cfg = ValidationConfig(delta_t_max=rng.uniform(0.5, 3), nav_horizon=rng.randint(1, 8))
        ctx = build_context(sc, sc.current_time, cfg)
        assert ctx.hazard is validate_hazard(sc.hazard, sc.nav, sc.current_time, cfg)
        assert list(ctx.nav_eff) == filter_navigation(sc.nav, cfg)
        assert list(ctx.ego_history) == filter_ego_history(sc.agents["ego"], sc.current_time, cfg, sc.dt)


def test_stale_or_absent_hazard_dropped(straight):
    cfg = ValidationConfig()
    assert build_context(straight(), 2.0, cfg).hazard is None
    ctx = build_context(straight(hazard=hazard_at(30.0, 0.0, t_h=10.0)), 2.0, cfg)
    assert ctx.hazard is None
    assert ctx.nav_eff and ctx.ego_history

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coplan.scenario import (
    FrameRsu,
    HazardAlert,
    InvalidStateError,
    NavigationPlan,
    Scenario,
    ScenarioFormatError,
    Trajectory,
    VehicleState,
    normalize_angle,
    propagate_state,
    rollout,
    rollout_states,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_propagate_straight_step():
    s = propagate_state(VehicleState(0.0, 0.0, vx=10.0), 0.0, 0.1)
    assert (s.x, s.y, s.yaw, s.k) == (1.0, 0.0, 0.0, 1)


def test_propagate_three_four_five():
    s = propagate_state(VehicleState(0.0, 0.0, vx=3.0, vy=4.0), 0.0, 1.0)
    assert math.hypot(s.x, s.y) == 5.0


def test_propagate_yaw_and_z():
    s = propagate_state(VehicleState(0.0, 0.0, z=2.5), 0.5, 0.2)
    assert s.yaw == pytest.approx(0.1, abs=1e-15)
    assert s.z == 2.5


@pytest.mark.parametrize("bad", [dict(x=math.nan), dict(vx=math.inf), dict(yaw=-math.inf)])
def test_non_finite_state_rejected(bad):
    s = VehicleState(**{"x": 0.0, "y": 0.0, **bad})
    with pytest.raises(InvalidStateError):
        propagate_state(s, 0.0, 0.1)


def test_non_positive_dt_rejected():
    with pytest.raises(InvalidStateError):
        propagate_state(VehicleState(0.0, 0.0), 0.0, 0.0)
    with pytest.raises(InvalidStateError):
        rollout(VehicleState(0.0, 0.0), [0.0], -0.1)


def test_rollout_closed_form_and_identity():
    traj = rollout(VehicleState(3.0, 0.0, vx=10.0), [0.0] * 20, 0.1)
    assert len(traj) == 21
    assert traj.points[-1][1] == pytest.approx(23.0, abs=1e-12)
    single = rollout(VehicleState(3.0, 1.0), [], 0.1)
    assert single.points == ((0.0, 3.0, 1.0),)


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(-30, 30), st.floats(-30, 30),
       st.lists(st.floats(-1, 1), max_size=40), st.floats(0.01, 0.5))
def test_rollout_matches_step_composition(x, y, vx, vy, rates, dt):
    s = VehicleState(x, y, vx=vx, vy=vy)
    traj = rollout(s, rates, dt)
    steps = rollout_states(s, rates, dt)
    assert len(traj) == len(steps) == len(rates) + 1
    for (_, px, py), st_ in zip(traj.points, steps):
        assert abs(px - st_.x) <= 1e-9 * max(1.0, abs(px))
        assert abs(py - st_.y) <= 1e-9 * max(1.0, abs(py))


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(-30, 30), st.floats(-30, 30), st.floats(-2, 2),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_split_step_linearity(x, y, vx, vy, r, a, b):
    s = VehicleState(x, y, vx=vx, vy=vy)
    two = propagate_state(propagate_state(s, r, a), r, b)
    one = propagate_state(s, r, a + b)
    assert abs(two.x - one.x) <= 1e-12 * max(1.0, abs(one.x))
    assert abs(two.y - one.y) <= 1e-12 * max(1.0, abs(one.y))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e4, 1e4))
def test_normalize_angle_range(a):
    w = normalize_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


def test_normalize_angle_boundary():
    assert normalize_angle(-math.pi) == math.pi
    assert normalize_angle(math.pi) == math.pi


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), max_size=30), st.floats(-100, 100))
def test_z_conserved_and_yaw_bounded(rates, z):
    for s in rollout_states(VehicleState(0.0, 0.0, z=z, vx=5.0, yaw=3.0), rates, 0.1):
        assert s.z == z
        assert -math.pi < s.yaw <= math.pi


def test_frame_must_be_orthonormal():
    FrameRsu()
    with pytest.raises(ValueError):
        FrameRsu(x_up=(1.0, 1.0, 0.0))


def test_hazard_validation_of_fields():
    with pytest.raises(InvalidStateError):
        HazardAlert(0.0, 0.0, t_h=-1.0)
    with pytest.raises(InvalidStateError):
        HazardAlert(math.nan, 0.0)


def test_trajectory_requires_increasing_time():
    with pytest.raises(InvalidStateError):
        Trajectory(((0.0, 0.0, 0.0), (0.0, 1.0, 0.0)))


def test_navigation_plan_bounds():
    with pytest.raises(ValueError):
        NavigationPlan(())
    with pytest.raises(ValueError):
        NavigationPlan(((0.0, 0.0, 0.0),), current_index=1)
    assert NavigationPlan(((0.0, 0.0, 0.0), (5.0, 1.0, 0.0))).destination == (5.0, 1.0, 0.0)


def test_scenario_json_round_trip(straight):
    sc = straight(hazard=HazardAlert(30.0, 1.0, 0.0, 2.5, 1.0), others={"a": (10.0, 3.0, 5.0, 0.0)})
    text = sc.to_json()
    back = Scenario.from_json(text)
    assert back.to_json() == text
    doc = json.loads(text)
    assert set(doc) >= {"dt", "ego_id", "hazard", "nav", "agents", "meta"}
    assert doc["agents"]["a"][0] == [0, 10.0, 3.0, 0.0, 5.0, 0.0, 0.0]


def test_scenario_rejects_bad_documents(straight):
    doc = straight().to_dict()
    doc["ego_id"] = "nobody"
    with pytest.raises(ScenarioFormatError):
        Scenario.from_dict(doc)
    with pytest.raises(ScenarioFormatError):
        Scenario.from_dict({"agents": {}})


def test_scenario_requires_shared_time_grid():
    a = (VehicleState(0.0, 0.0, agent_id="ego", k=0),)
    b = (VehicleState(0.0, 0.0, agent_id="b", k=1),)
    with pytest.raises(ScenarioFormatError):
        Scenario({"ego": a, "b": b}, "ego", NavigationPlan(((0.0, 0.0, 0.0),)))

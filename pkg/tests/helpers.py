"""Scenario builders and hypothesis strategies shared by the test modules."""
from hypothesis import strategies as st

from socialmcts.scenario import (ActionSet, AgentState, JointState, PathSpec, Scenario,
                                 make_synthetic_scenario)

SMALL_ACTIONS = (-2.0, 0.0, 2.0)


def decoupled_scenario(horizon=2, actions=SMALL_ACTIONS, ego_v=5.0, opp_v=6.0):
    """Both conflict zones lie far beyond reach within the horizon."""
    path = PathSpec(400.0, 10.0, (300.0, 304.0))
    init = JointState(AgentState(10.0, ego_v), AgentState(20.0, opp_v))
    return Scenario(path, path, init, horizon=horizon, actions=ActionSet(actions))


def two_by_two_scenario():
    """N=1, actions {0, 1}: both agents land exactly on the entry boundary
    when coasting and inside the zone when accelerating."""
    path = PathSpec(40.0, 10.0, (10.0, 14.0))
    init = JointState(AgentState(6.0, 4.0), AgentState(6.0, 4.0))
    return Scenario(path, path, init, horizon=1, actions=ActionSet((0.0, 1.0)))


def small_synthetic(seed, lag=(-0.3, 0.3)):
    return make_synthetic_scenario(seed, horizon=2, actions=SMALL_ACTIONS, ego_lag_range=lag)


gammas = st.floats(0.0, 1.0, allow_nan=False)
accelerations = st.sampled_from((-3.0, -2.0, -1.0, 0.0, 1.0, 2.0))
speeds = st.floats(0.0, 10.0, allow_nan=False)
positions = st.floats(0.0, 60.0, allow_nan=False)

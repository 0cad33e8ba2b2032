import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import accelerations, decoupled_scenario, gammas
from socialmcts.reward import (RewardParams, egoism_from_profile, egoism_reward, joint_payoff,
                               social_reward)
from socialmcts.scenario import AgentState, JointState


def test_still_profile_scores_comfort_only():
    p = RewardParams(theta=(1.5, 1.0))
    assert egoism_from_profile([0.0] * 4, [0.0] * 4, p) == pytest.approx(4 * 1.5)


def test_fast_profile_approaches_maximum():
    p = RewardParams()
    assert egoism_from_profile([0.0] * 3, [1e4] * 3, p) == pytest.approx(p.max_reward(3))


def test_single_step_value():
    p = RewardParams(theta=(1.0, 1.0), alpha=0.1, beta=0.1)
    expected = math.exp(-0.4) + 1.0 - math.exp(-2.5)
    assert egoism_from_profile([2.0], [5.0], p) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(1.58824, abs=1e-5)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
def test_courtesy_blend(gamma):
    sc = decoupled_scenario()
    UE, UO = (2.0, 0.0), (-2.0, 0.0)
    p = RewardParams(gamma)
    own = egoism_reward(sc.init, UE, UO, p, "ego", sc)
    other = egoism_reward(sc.init, UO, UE, p, "opp", sc)
    total = social_reward(sc.init, UE, UO, p, "ego", sc).total
    assert total == pytest.approx({0.0: other, 0.5: (own + other) / 2, 1.0: own}[gamma])


def test_length_mismatch_rejected():
    sc = decoupled_scenario()
    with pytest.raises(ValueError):
        egoism_reward(sc.init, (0.0,), (0.0, 0.0), RewardParams(), "ego", sc)


def test_invalid_params():
    for kw in ({"gamma": 1.5}, {"theta": (1.0, -1.0)}, {"alpha": 0.0}):
        with pytest.raises(ValueError):
            RewardParams(**kw)
    with pytest.raises(ValueError):
        RewardParams.from_document({"gamma": 0.5, "delta": 1})


@given(gammas, gammas, st.lists(st.tuples(accelerations, accelerations), min_size=2, max_size=2))
def test_payoffs_bounded_by_max_reward(g_e, g_o, actions):
    sc = decoupled_scenario()
    UE, UO = [a for a, _ in actions], [b for _, b in actions]
    pE, pO = RewardParams(g_e), RewardParams(g_o)
    rE, rO = joint_payoff(sc.init, UE, UO, pE, pO, sc)
    assert 0.0 <= rE <= pE.max_reward(2) + 1e-12
    assert 0.0 <= rO <= pO.max_reward(2) + 1e-12


def test_unsafe_joint_trajectory_pays_zero():
    sc = decoupled_scenario()
    inside = sc.ego_path.conflict[0] + 1.0
    x0 = JointState(AgentState(inside, 0.0), AgentState(inside, 0.0))
    assert joint_payoff(x0, (0.0,), (0.0,), RewardParams(), RewardParams(), sc) == (0.0, 0.0)


def test_document_round_trip():
    p = RewardParams(0.3, (2.0, 0.5), 0.2, 0.05)
    assert RewardParams.from_document(p.to_document()) == p


pairs = st.lists(st.tuples(accelerations, accelerations), min_size=2, max_size=2)
weights = st.tuples(st.floats(0.0, 3.0), st.floats(0.0, 3.0))


@given(pairs, weights, st.tuples(gammas, gammas, gammas))
def test_social_reward_is_affine_in_gamma(actions, theta, gs):
    sc = decoupled_scenario()
    UE, UO = [a for a, _ in actions], [b for _, b in actions]
    g1, g2, g3 = sorted(gs)
    tot = [social_reward(sc.init, UE, UO, RewardParams(g, theta), "ego", sc).total for g in (g1, g2, g3)]
    # collinear points: (g2 - g1)(t3 - t1) == (g3 - g1)(t2 - t1)
    assert (g2 - g1) * (tot[2] - tot[0]) == pytest.approx((g3 - g1) * (tot[1] - tot[0]), abs=1e-9)


@given(pairs, weights, gammas)
def test_courtesy_equals_other_egoism(actions, theta, g):
    sc = decoupled_scenario()
    UE, UO = [a for a, _ in actions], [b for _, b in actions]
    p = RewardParams(g, theta)
    ego = social_reward(sc.init, UE, UO, p, "ego", sc)
    opp = social_reward(sc.init, UE, UO, p, "opp", sc)
    assert ego.courtesy == egoism_reward(sc.init, UO, UE, p, "opp", sc) == opp.egoism_opp
    assert opp.courtesy == egoism_reward(sc.init, UE, UO, p, "ego", sc)
    assert ego.total == pytest.approx(g * ego.egoism_ego + (1 - g) * ego.courtesy, abs=1e-12)

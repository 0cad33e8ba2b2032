import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import socialmcts.baselines as baselines
from helpers import SMALL_ACTIONS, decoupled_scenario, gammas, two_by_two_scenario
from socialmcts.baselines import (InfeasibleInstance, PayoffTables, alternating_best_response,
                                  exhaustive_stackelberg, general_mcts, stackelberg_value,
                                  subgame_perfect)
from socialmcts.reward import RewardParams, egoism_reward, joint_payoff
from socialmcts.scenario import make_synthetic_scenario
from socialmcts.search import SearchConfig, plan

P = RewardParams()
small_instances = st.tuples(st.integers(0, 5000), gammas, gammas)


def _small(seed):
    return make_synthetic_scenario(seed, horizon=2, actions=SMALL_ACTIONS)[0]


def _brute_stackelberg(sc, pE, pO):
    """Scalar reimplementation: lowest-index best response, first-best leader."""
    seqs = list(itertools.product(sc.actions.accelerations, repeat=sc.horizon))
    best = None
    for UE in seqs:
        br, br_val = None, -math.inf
        for UO in seqs:
            v = joint_payoff(sc.init, UE, UO, pE, pO, sc)[1]
            if v > br_val:
                br, br_val = UO, v
        r = joint_payoff(sc.init, UE, br, pE, pO, sc)
        if best is None or r[0] > best[0][0]:
            best = (r, UE, br)
    return best


def _backward_induction(sc, pE, pO):
    """Recursive feedback solution over the alternating game tree."""
    acts = sc.actions.accelerations
    N = sc.horizon

    def value(UE, UO):
        if len(UO) == N:
            return joint_payoff(sc.init, UE, UO, pE, pO, sc), UE, UO
        ego_turn = len(UE) == len(UO)
        best = None
        for a in acts:
            out = value(UE + (a,), UO) if ego_turn else value(UE, UO + (a,))
            key = out[0][0] if ego_turn else out[0][1]
            if best is None or key > (best[0][0] if ego_turn else best[0][1]):
                best = out
        return best

    return value((), ())


def test_hand_computed_two_by_two():
    sc = two_by_two_scenario()
    p = RewardParams(alpha=0.01, beta=0.1)

    def egoism(a):
        v = 4.0 + 0.5 * a
        return math.exp(-0.01 * a * a) + 1.0 - math.exp(-0.1 * v * v)

    # only (accelerate, accelerate) puts both fronts past the entry together
    table = {(0.0, 0.0): (egoism(0), egoism(0)), (0.0, 1.0): (egoism(0), egoism(1)),
             (1.0, 0.0): (egoism(1), egoism(0)), (1.0, 1.0): (0.0, 0.0)}
    for (ae, ao), cell in table.items():
        assert joint_payoff(sc.init, (ae,), (ao,), p, p, sc) == pytest.approx(cell, abs=1e-12)
    # leader: accelerating forces the follower to coast
    assert egoism(1) > egoism(0)
    out = exhaustive_stackelberg(sc.init, sc, p, p)
    assert (out.ego_actions, out.opp_actions) == ((1.0,), (0.0,))
    assert out.rewards == pytest.approx((egoism(1), egoism(0)), abs=1e-12)


@given(small_instances)
def test_oracle_matches_scalar_reimplementation(inst):
    seed, g_e, g_o = inst
    sc = _small(seed)
    pE, pO = RewardParams(g_e), RewardParams(g_o)
    out = exhaustive_stackelberg(sc.init, sc, pE, pO)
    rewards, UE, UO = _brute_stackelberg(sc, pE, pO)
    assert out.rewards[0] == pytest.approx(rewards[0], abs=1e-9)
    # leader reward dominates every other ego sequence paired with its best response
    for other in itertools.product(sc.actions.accelerations, repeat=2):
        assert stackelberg_value(sc.init, sc, pE, pO, other)[0] <= out.rewards[0] + 1e-9


@given(small_instances)
def test_pure_courtesy_leader_maximizes_follower_egoism(inst):
    seed, _, g_o = inst
    sc = _small(seed)
    pE, pO = RewardParams(0.0), RewardParams(g_o)
    out = exhaustive_stackelberg(sc.init, sc, pE, pO)
    tab = PayoffTables(sc.init, sc, pE, pO)
    opp_egoism = tab.opp.egoism(pE)
    induced = []
    for i in range(len(tab.ego)):
        j = int(tab.opp_rewards([i], np.arange(len(tab.opp)))[0].argmax())
        safe = not tab.unsafe([i], [j])[0, 0]
        induced.append(opp_egoism[j] if safe else 0.0)
    chosen = egoism_reward(sc.init, out.opp_actions, out.ego_actions, pE, "opp", sc)
    assert out.rewards[0] == pytest.approx(max(induced), abs=1e-9)
    if out.rewards[0] > 0:
        assert chosen == pytest.approx(out.rewards[0], abs=1e-9)


@given(small_instances)
def test_subgame_perfect_matches_backward_induction(inst):
    seed, g_e, g_o = inst
    sc = _small(seed)
    pE, pO = RewardParams(g_e), RewardParams(g_o)
    out = subgame_perfect(sc.init, sc, pE, pO)
    rewards, _, _ = _backward_induction(sc, pE, pO)
    assert out.rewards == pytest.approx(rewards, abs=1e-9)


@given(small_instances, st.integers(0, 8), st.integers(0, 8))
def test_tables_match_scalar_payoff(inst, i, j):
    seed, g_e, g_o = inst
    sc = _small(seed)
    pE, pO = RewardParams(g_e), RewardParams(g_o)
    tab = PayoffTables(sc.init, sc, pE, pO)
    UE, UO = tab.ego_sequence(i), tab.opp_sequence(j)
    assert tab.pair(i, j) == pytest.approx(joint_payoff(sc.init, UE, UO, pE, pO, sc), abs=1e-12)


@given(small_instances, st.integers(0, 8), st.integers(0, 8))
def test_best_response_steps_never_lose(inst, i0, j0):
    seed, g_e, g_o = inst
    sc = _small(seed)
    pE, pO = RewardParams(g_e), RewardParams(g_o)
    tab = PayoffTables(sc.init, sc, pE, pO)
    out = alternating_best_response(sc.init, sc, pE, pO, max_rounds=1, init=(i0, j0))
    i1 = baselines._row_of(tab.ego.accelerations, out.ego_actions)
    j1 = baselines._row_of(tab.opp.accelerations, out.opp_actions)
    assert tab.pair(i1, j0)[0] >= tab.pair(i0, j0)[0] - 1e-12
    assert tab.pair(i1, j1)[1] >= tab.pair(i1, j0)[1] - 1e-12


def test_zero_rounds_returns_initialization():
    sc = _small(17)
    tab = PayoffTables(sc.init, sc, P, P)
    out = alternating_best_response(sc.init, sc, P, P, max_rounds=0, init=(4, 7))
    assert (out.ego_actions, out.opp_actions) == (tab.ego_sequence(4), tab.opp_sequence(7))
    assert not out.converged and out.evaluations == 0


def test_round_cap_flags_non_convergence():
    sc = _small(17)
    full = alternating_best_response(sc.init, sc, P, P, init=(0, 0))
    assert full.converged
    capped = alternating_best_response(sc.init, sc, P, P, max_rounds=1, init=(0, 0))
    assert not capped.converged


class _MatchingPennies:
    """2x2 table where each agent wants to move away from the other's choice."""

    def __init__(self, *args, **kwargs):
        self.ego = self.opp = [0, 1]
        self._e = np.array([[1.0, 0.0], [0.0, 1.0]])
        self._o = np.array([[0.0, 1.0], [1.0, 0.0]])

    def ego_rewards(self, rows, cols):
        return self._e[np.ix_(np.asarray(rows), np.asarray(cols))]

    def opp_rewards(self, rows, cols):
        return self._o[np.ix_(np.asarray(rows), np.asarray(cols))]

    def pair(self, i, j):
        return float(self._e[i, j]), float(self._o[i, j])

    def ego_sequence(self, i):
        return (float(i),)

    opp_sequence = ego_sequence


def test_two_cycle_is_flagged(monkeypatch):
    monkeypatch.setattr(baselines, "PayoffTables", _MatchingPennies)
    sc = _small(17)
    out = alternating_best_response(sc.init, sc, P, P, max_rounds=20, init=(0, 0))
    assert not out.converged
    assert out.evaluations == 20 * 4


@given(st.integers(0, 10_000), st.floats(3.0, 9.0), st.floats(3.0, 9.0))
def test_decoupled_solvers_agree(seed, ve, vo):
    sc = decoupled_scenario(ego_v=ve, opp_v=vo)
    seqs = list(itertools.product(SMALL_ACTIONS, repeat=2))
    best_e = max(egoism_reward(sc.init, u, u, P, "ego", sc) for u in seqs)
    best_o = max(egoism_reward(sc.init, u, u, P, "opp", sc) for u in seqs)
    for out in (exhaustive_stackelberg(sc.init, sc, P, P), subgame_perfect(sc.init, sc, P, P),
                alternating_best_response(sc.init, sc, P, P, seed=seed)):
        assert out.rewards == pytest.approx((best_e, best_o), abs=1e-9)


def test_dominant_optimum_reached_from_every_start():
    sc = decoupled_scenario()
    oracle = exhaustive_stackelberg(sc.init, sc, P, P)
    for i in range(9):
        for j in range(9):
            out = alternating_best_response(sc.init, sc, P, P, init=(i, j))
            assert out.converged
            assert (out.ego_actions, out.opp_actions) == (oracle.ego_actions, oracle.opp_actions)


def test_enumeration_cap():
    sc = make_synthetic_scenario(0)[0]
    with pytest.raises(InfeasibleInstance):
        exhaustive_stackelberg(sc.init, sc, P, P, cap=1000)


def test_general_mcts_is_heuristic_off_search():
    sc = _small(17)
    cfg = SearchConfig(iterations=400, seed=3, stats_stride=0)
    out = general_mcts(sc.init, sc, P, P, cfg)
    ref = plan(sc.init, None, sc, P, P, SearchConfig.general(iterations=400, seed=3, stats_stride=0))
    assert (out.ego_actions, out.opp_actions, out.rewards) == (
        ref.ego_completed, ref.opp_completed, ref.rewards)

import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import socialmcts.inference as inference
from helpers import SMALL_ACTIONS, decoupled_scenario, gammas, small_synthetic
from socialmcts.inference import (Belief, BeliefRecord, BeliefTracker, InfeasibleWindow,
                                  ObservationWindow, convergence_step, is_interactive, likelihood,
                                  log_likelihoods, log_softmax, read_belief_trace, replay,
                                  update_belief, write_belief_trace)
from socialmcts.reward import RewardParams, joint_payoff
from socialmcts.scenario import ActionSet, rollout_joint

P = RewardParams()


def window_for(sc, UE, UO, x0=None):
    x0 = sc.init if x0 is None else x0
    states = (x0,) + tuple(rollout_joint(x0, UE, UO, sc))
    return ObservationWindow(states, tuple(UE), tuple(UO))


def all_windows(sc, UE):
    r = len(UE)
    return [window_for(sc, UE, UO) for UO in itertools.product(sc.actions.accelerations, repeat=r)]


def test_two_equal_actions_split_evenly():
    sc = decoupled_scenario(horizon=1, actions=(0.0, 1.0))
    # pure courtesy: the opponent's own speed no longer matters
    for UO in ((0.0,), (1.0,)):
        assert likelihood(window_for(sc, (0.0,), UO), 0.0, P, sc) == pytest.approx(0.5, abs=1e-12)


def test_constant_reward_gives_uniform_likelihood():
    sc = decoupled_scenario(horizon=2)
    n = len(sc.actions) ** 2
    for w in all_windows(sc, (2.0, 0.0)):
        assert likelihood(w, 0.0, P, sc) == pytest.approx(1.0 / n, abs=1e-12)


@given(st.integers(0, 5000), gammas, st.sampled_from(list(itertools.product(SMALL_ACTIONS, repeat=2))))
def test_likelihoods_sum_to_one(seed, gamma, UE):
    sc, _ = small_synthetic(seed)
    total = sum(likelihood(w, gamma, P, sc) for w in all_windows(sc, UE))
    assert total == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 5000), gammas, st.sampled_from(list(itertools.product(SMALL_ACTIONS, repeat=2))),
       st.sampled_from(list(itertools.product(SMALL_ACTIONS, repeat=2))))
def test_log_space_matches_direct_softmax(seed, gamma, UE, UO):
    sc, _ = small_synthetic(seed)
    pO = RewardParams(gamma)
    R = {U: joint_payoff(sc.init, UE, U, P, pO, sc)[1]
         for U in itertools.product(sc.actions.accelerations, repeat=2)}
    direct = math.exp(R[UO]) / sum(math.exp(v) for v in R.values())
    got = likelihood(window_for(sc, UE, UO), gamma, P, sc)
    assert got == pytest.approx(direct, rel=1e-9)


@given(st.lists(st.floats(-50.0, 50.0), min_size=1, max_size=30), st.floats(-500.0, 500.0))
def test_softmax_shift_invariance(values, c):
    R = np.asarray(values)
    base = np.exp(log_softmax(R))
    shifted = np.exp(log_softmax(R + c))
    assert np.allclose(base, shifted, rtol=1e-9, atol=1e-12)
    assert base.sum() == pytest.approx(1.0, abs=1e-9)


def test_window_cap():
    sc = decoupled_scenario(horizon=2)
    with pytest.raises(InfeasibleWindow):
        log_likelihoods(window_for(sc, (0.0, 0.0), (0.0, 0.0)), [0.5], P, sc, cap=8)
    with pytest.raises(InfeasibleWindow):
        BeliefTracker(sc, P, r=7, cap=1000)


def test_snapped_reconstruction():
    sc = decoupled_scenario(horizon=2, actions=(-3.0, -2.0, -1.0, 0.0, 1.0, 2.0))
    w = window_for(sc, (1.0, -2.0), (2.0, 0.0))
    again = ObservationWindow.from_states(w.states, sc)
    assert (again.ego_actions, again.opp_actions) == ((1.0, -2.0), (2.0, 0.0))


# --------------------------------------------------------------------------
# belief updates
# --------------------------------------------------------------------------

def _patched(monkeypatch, values):
    monkeypatch.setattr(inference, "log_likelihoods", lambda *a, **k: np.asarray(values, dtype=float))


def test_flat_evidence_keeps_belief(monkeypatch):
    sc = decoupled_scenario()
    prior = Belief((0.0, 0.3, 1.0), (0.2, 0.5, 0.3))
    _patched(monkeypatch, [-4.0, -4.0, -4.0])
    post, g = update_belief(prior, window_for(sc, (0.0, 0.0), (0.0, 0.0)), P, sc)
    assert post.weights == pytest.approx(prior.weights, abs=1e-15)
    assert g == pytest.approx(prior.mean, abs=1e-15)


def test_single_supported_sample_collapses(monkeypatch):
    sc = decoupled_scenario()
    prior = Belief.uniform(5)
    _patched(monkeypatch, [-np.inf, -np.inf, -1.0, -np.inf, -np.inf])
    post, g = update_belief(prior, window_for(sc, (0.0, 0.0), (0.0, 0.0)), P, sc)
    assert post.weights == (0.0, 0.0, 1.0, 0.0, 0.0)
    assert g == 0.5


def test_total_underflow_resets_with_warning(monkeypatch, caplog):
    sc = decoupled_scenario()
    prior = Belief((0.0, 1.0), (0.9, 0.1))
    _patched(monkeypatch, [-np.inf, -np.inf])
    with caplog.at_level(logging.WARNING, logger="socialmcts.inference"):
        post, g = update_belief(prior, window_for(sc, (0.0, 0.0), (0.0, 0.0)), P, sc)
    assert post.weights == (0.5, 0.5) and g == 0.5
    assert "underflow" in caplog.text


def test_uniform_prior_mean():
    assert Belief.uniform().mean == pytest.approx(0.5)
    assert len(Belief.uniform().samples) == 21


@pytest.mark.parametrize("samples, weights", [((0.5,), (1.0,)), ((0.1, 0.1), (0.5, 0.5)),
                                              ((0.0, 1.0), (0.7, 0.7)), ((0.0, 1.2), (0.5, 0.5))])
def test_invalid_beliefs(samples, weights):
    with pytest.raises(ValueError):
        Belief(samples, weights)


@st.composite
def beliefs(draw):
    m = draw(st.integers(2, 8))
    samples = sorted(draw(st.lists(gammas, min_size=m, max_size=m, unique=True)))
    raw = draw(st.lists(st.floats(0.01, 1.0), min_size=m, max_size=m))
    w = np.asarray(raw) / sum(raw)
    w[-1] = 1.0 - w[:-1].sum()
    return Belief(tuple(samples), tuple(np.clip(w, 0.0, None)))


@given(beliefs(), st.integers(0, 5000), st.lists(st.sampled_from(SMALL_ACTIONS), min_size=4, max_size=4))
def test_posterior_stays_a_distribution(belief, seed, acts):
    sc, _ = small_synthetic(seed)
    w = window_for(sc, acts[:2], acts[2:])
    post, g = update_belief(belief, w, P, sc)
    assert min(post.weights) >= 0.0
    assert sum(post.weights) == pytest.approx(1.0, abs=1e-9)
    assert min(post.samples) - 1e-12 <= g <= max(post.samples) + 1e-12


def test_egoistic_choices_raise_the_estimate():
    # at gamma 0 every sequence scores alike, so only high gammas explain the choice
    sc = decoupled_scenario()
    pO = RewardParams(1.0)
    UE = (0.0, 0.0)
    best = max(itertools.product(SMALL_ACTIONS, repeat=2),
               key=lambda U: joint_payoff(sc.init, UE, U, P, pO, sc)[1])
    belief = Belief.uniform()
    for _ in range(20):
        belief, g = update_belief(belief, window_for(sc, UE, best), P, sc)
    assert g > 0.5


# --------------------------------------------------------------------------
# tracker, trace files, convergence step
# --------------------------------------------------------------------------

def test_non_interactive_windows_leave_belief_alone():
    sc = decoupled_scenario(horizon=2)
    w = window_for(sc, (0.0, 0.0), (2.0, 2.0))
    assert not is_interactive(w, P, sc)
    tracker = BeliefTracker(sc, P, r=2)
    for k, x in enumerate(w.states):
        tracker.observe(k * sc.dt, x)
    assert len(tracker.records) == 1
    assert tracker.records[0].interactive is False
    assert tracker.gamma_hat == pytest.approx(0.5)


def test_tracker_window_spacing():
    sc = decoupled_scenario(horizon=3)
    states = (sc.init,) + tuple(rollout_joint(sc.init, (0.0,) * 3, (0.0,) * 3, sc))
    recs = replay([k * sc.dt for k in range(4)], states, sc, P, r=2, interactive_only=False)
    assert [(r.window_start, r.window_end) for r in recs] == [(0.0, 1.0), (0.5, 1.5)]


def test_belief_trace_round_trip(tmp_path):
    recs = [BeliefRecord(0.1 * k, 0.5 + 0.01 * k, 3.0 - 0.1 * k, 0.1 * k - 2.5, 0.1 * k, k % 2 == 0)
            for k in range(6)]
    path = tmp_path / "beliefs.tsv"
    write_belief_trace(recs, path)
    assert read_belief_trace(path) == recs
    assert path.read_text().splitlines()[0].split("\t")[:5] == [
        "sim_time", "gamma_hat", "weight_entropy", "window_start", "window_end"]


def _records(values, start=0.0, step=0.5, interactive_from=0):
    return [BeliefRecord(start + step * k, v, 0.0, 0.0, 0.0, k >= interactive_from)
            for k, v in enumerate(values)]


def test_convergence_step_counts_from_first_interactive_window():
    recs = _records([0.5, 0.5, 0.6, 0.75, 0.8, 0.8], interactive_from=1)
    assert convergence_step(recs, 0.8, 0.5) == 3.0
    # leaving the band resets the count
    recs = _records([0.8, 0.5, 0.8, 0.8])
    assert convergence_step(recs, 0.8, 0.5) == 3.0
    assert convergence_step(_records([0.5, 0.5]), 0.8, 0.5) is None
    assert convergence_step(_records([0.8, 0.8], interactive_from=5), 0.8, 0.5) is None


def test_convergence_step_from_start():
    recs = _records([0.5, 0.5, 0.6, 0.75, 0.8, 0.8], start=2.5, interactive_from=1)
    assert convergence_step(recs, 0.8, 0.5, from_start=True) == 8.0
    assert convergence_step(_records([0.8, 0.8], interactive_from=5), 0.8, 0.5, from_start=True) == 0.0


def test_action_set_bounds_snap():
    acts = ActionSet(SMALL_ACTIONS)
    assert acts[acts.snap(10.0)] == 2.0 and acts[acts.snap(-10.0)] == -2.0

"""Comparison solvers: plain UCT, alternating best response and an
exhaustive Stackelberg oracle.

The two enumerating solvers work on per-agent tables of every action
sequence.  The agents' dynamics are independent, so a joint trajectory is
unsafe exactly when one of them overspeeds or their conflict-zone occupancy
overlaps at a shared sample instant.  Positions never decrease, so each
agent occupies the zone during one contiguous run of samples and the joint
test is an interval overlap.
"""
from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

import numpy as np

from .prediction import PredictionSet
from .reward import RewardParams
from .scenario import JointState, Scenario, sequence_table
from .search import PlanResult, SearchConfig, plan

DEFAULT_ORACLE_CAP = 10 ** 6
_CHUNK = 256


class InfeasibleInstance(ValueError):
    """The instance is too large for exhaustive enumeration."""


@dataclass
class SolverOutcome:
    solver: str
    ego_actions: tuple[float, ...]
    opp_actions: tuple[float, ...]
    rewards: tuple[float, float]
    evaluations: int
    wall_time: float
    converged: bool = True
    plan: PlanResult | None = field(default=None, repr=False)

    def to_document(self) -> dict:
        return {"solver": self.solver, "ego_actions": list(self.ego_actions),
                "opp_actions": list(self.opp_actions), "rewards": list(self.rewards),
                "evaluations": self.evaluations, "wall_time": self.wall_time,
                "converged": self.converged}


class AgentTable:
    """Length-``n`` sequences of one agent (all of them unless ``indices``
    is given) with their features and the span of samples during which the
    agent occupies the conflict zone."""

    def __init__(self, state, path, scenario: Scenario, n: int, alpha: float, beta: float,
                 indices: np.ndarray | None = None):
        tab = sequence_table(state, path, scenario, n, indices)
        self.indices = tab.indices
        self.accelerations = tab.accelerations
        self.comfort = np.exp(-alpha * tab.accelerations ** 2).sum(axis=1)
        self.efficiency = (1.0 - np.exp(-beta * tab.speeds[:, 1:] ** 2)).sum(axis=1)
        self.overspeed = tab.overspeed
        occ = tab.conflict_samples(path, scenario)
        width = occ.shape[1]
        any_occ = occ.any(axis=1)
        self.first = np.where(any_occ, occ.argmax(axis=1), width)
        self.last = np.where(any_occ, width - 1 - occ[:, ::-1].argmax(axis=1), -1)

    def __len__(self):
        return len(self.indices)

    def egoism(self, params: RewardParams) -> np.ndarray:
        return params.theta[0] * self.comfort + params.theta[1] * self.efficiency


class PayoffTables:
    """Joint payoffs of all sequence pairs, computed on demand by row or column."""

    def __init__(self, x0: JointState, scenario: Scenario, ego_params: RewardParams,
                 opp_params: RewardParams, horizon: int | None = None):
        if (ego_params.alpha, ego_params.beta) != (opp_params.alpha, opp_params.beta):
            raise ValueError("both agents must share alpha and beta")
        n = scenario.horizon if horizon is None else horizon
        a, b = ego_params.alpha, ego_params.beta
        self.scenario = scenario
        self.ego = AgentTable(x0.ego, scenario.ego_path, scenario, n, a, b)
        self.opp = AgentTable(x0.opp, scenario.opp_path, scenario, n, a, b)
        gE, gO = ego_params.gamma, opp_params.gamma
        # social rewards split into the part owned by each agent's sequence
        self.rE_own = gE * self.ego.egoism(ego_params)
        self.rE_other = (1.0 - gE) * self.opp.egoism(ego_params)
        self.rO_own = gO * self.opp.egoism(opp_params)
        self.rO_other = (1.0 - gO) * self.ego.egoism(opp_params)

    def unsafe(self, ego_rows, opp_rows) -> np.ndarray:
        """Broadcast unsafety of ``ego_rows[:, None]`` against ``opp_rows[None, :]``."""
        e, o = self.ego, self.opp
        ie = np.asarray(ego_rows)[:, None]
        io = np.asarray(opp_rows)[None, :]
        overlap = np.maximum(e.first[ie], o.first[io]) <= np.minimum(e.last[ie], o.last[io])
        return overlap | e.overspeed[ie] | o.overspeed[io]

    def ego_rewards(self, ego_rows, opp_rows) -> np.ndarray:
        ie = np.asarray(ego_rows)[:, None]
        io = np.asarray(opp_rows)[None, :]
        r = self.rE_own[ie] + self.rE_other[io]
        return np.where(self.unsafe(ego_rows, opp_rows), 0.0, r)

    def opp_rewards(self, ego_rows, opp_rows) -> np.ndarray:
        ie = np.asarray(ego_rows)[:, None]
        io = np.asarray(opp_rows)[None, :]
        r = self.rO_own[io] + self.rO_other[ie]
        return np.where(self.unsafe(ego_rows, opp_rows), 0.0, r)

    def pair(self, i: int, j: int) -> tuple[float, float]:
        return float(self.ego_rewards([i], [j])[0, 0]), float(self.opp_rewards([i], [j])[0, 0])

    def ego_sequence(self, i: int) -> tuple[float, ...]:
        return tuple(float(a) for a in self.ego.accelerations[i])

    def opp_sequence(self, j: int) -> tuple[float, ...]:
        return tuple(float(a) for a in self.opp.accelerations[j])


def _check_cap(scenario: Scenario, cap: int) -> None:
    size = len(scenario.actions.accelerations) ** (2 * scenario.horizon)
    if size > cap:
        raise InfeasibleInstance(
            f"|A|^(2N) = {size} exceeds the enumeration cap {cap}; use a shorter horizon "
            "or a smaller action set")


def exhaustive_stackelberg(x0: JointState, scenario: Scenario, ego_params: RewardParams,
                           opp_params: RewardParams, cap: int = DEFAULT_ORACLE_CAP) -> SolverOutcome:
    """Exact leader-follower solution by enumeration.

    Every ego sequence is paired with the opponent's best response (ties go
    to the lowest-index sequence); the ego then takes the best induced
    outcome, again lowest index on ties.
    """
    _check_cap(scenario, cap)
    start = time.perf_counter()
    tab = PayoffTables(x0, scenario, ego_params, opp_params)
    n_e, n_o = len(tab.ego), len(tab.opp)
    all_o = np.arange(n_o)
    best_resp = np.empty(n_e, dtype=np.int64)
    leader = np.empty(n_e)
    for lo in range(0, n_e, _CHUNK):
        rows = np.arange(lo, min(lo + _CHUNK, n_e))
        rO = tab.opp_rewards(rows, all_o)
        br = rO.argmax(axis=1)
        best_resp[rows] = br
        leader[rows] = tab.ego_rewards(rows, all_o)[np.arange(len(rows)), br]
    i = int(leader.argmax())
    j = int(best_resp[i])
    return SolverOutcome("oracle", tab.ego_sequence(i), tab.opp_sequence(j), tab.pair(i, j),
                         n_e * n_o, time.perf_counter() - start)


def subgame_perfect(x0: JointState, scenario: Scenario, ego_params: RewardParams,
                    opp_params: RewardParams, cap: int = DEFAULT_ORACLE_CAP) -> SolverOutcome:
    """Backward induction over the alternating game tree that the MCTS
    searches: ego and opponent act in turn each step, each seeing all
    earlier moves.  Ties go to the lowest action index.

    This differs from :func:`exhaustive_stackelberg` whenever the opponent
    would like to react to ego actions that come later in the sequence.
    """
    _check_cap(scenario, cap)
    start = time.perf_counter()
    tab = PayoffTables(x0, scenario, ego_params, opp_params)
    n, k = scenario.horizon, len(scenario.actions.accelerations)
    all_e, all_o = np.arange(len(tab.ego)), np.arange(len(tab.opp))
    order = [ax for t in range(n) for ax in (t, n + t)]   # e0, o0, e1, o1, ...
    rE = tab.ego_rewards(all_e, all_o).reshape((k,) * (2 * n)).transpose(order)
    rO = tab.opp_rewards(all_e, all_o).reshape((k,) * (2 * n)).transpose(order)
    choices = []
    for layer in range(2 * n - 1, -1, -1):
        mover = rO if layer % 2 else rE
        idx = mover.argmax(axis=-1)[..., None]
        choices.append(idx[..., 0])
        rE = np.take_along_axis(rE, idx, -1)[..., 0]
        rO = np.take_along_axis(rO, idx, -1)[..., 0]
    choices.reverse()
    path: list[int] = []
    for layer in range(2 * n):
        path.append(int(choices[layer][tuple(path)]))
    i = int(np.ravel_multi_index(path[0::2], (k,) * n))
    j = int(np.ravel_multi_index(path[1::2], (k,) * n))
    return SolverOutcome("subgame_perfect", tab.ego_sequence(i), tab.opp_sequence(j), tab.pair(i, j),
                         len(tab.ego) * len(tab.opp), time.perf_counter() - start)


def stackelberg_value(x0: JointState, scenario: Scenario, ego_params: RewardParams,
                      opp_params: RewardParams, ego_actions) -> tuple[float, float]:
    """Payoffs when the ego commits to ``ego_actions`` and the opponent best-responds."""
    tab = PayoffTables(x0, scenario, ego_params, opp_params)
    i = _row_of(tab.ego.accelerations, ego_actions)
    rO = tab.opp_rewards([i], np.arange(len(tab.opp)))[0]
    return tab.pair(i, int(rO.argmax()))


def _row_of(accelerations: np.ndarray, actions) -> int:
    hits = np.flatnonzero(np.all(np.isclose(accelerations, np.asarray(actions, dtype=float)), axis=1))
    if len(hits) == 0:
        raise ValueError(f"{tuple(actions)} is not a sequence over the action set")
    return int(hits[0])


def alternating_best_response(x0: JointState, scenario: Scenario, ego_params: RewardParams,
                              opp_params: RewardParams, seed: int = 0, max_rounds: int = 50,
                              init: tuple | None = None) -> SolverOutcome:
    """Iterated exhaustive best responses, ego first in every round.

    Stops after a round in which neither sequence changed, or after
    ``max_rounds`` rounds with ``converged=False``.  ``init`` overrides the
    seeded random start with a pair of row indices.
    """
    if max_rounds < 0:
        raise ValueError("max_rounds must be >= 0")
    start = time.perf_counter()
    tab = PayoffTables(x0, scenario, ego_params, opp_params)
    n_e, n_o = len(tab.ego), len(tab.opp)
    if init is None:
        rng = random.Random(seed)
        i, j = rng.randrange(n_e), rng.randrange(n_o)
    else:
        i, j = init
    all_e, all_o = np.arange(n_e), np.arange(n_o)
    evals = 0
    converged = False
    for _ in range(max_rounds):
        new_i = int(tab.ego_rewards(all_e, [j])[:, 0].argmax())
        new_j = int(tab.opp_rewards([new_i], all_o)[0].argmax())
        evals += n_e + n_o
        changed = (new_i, new_j) != (i, j)
        i, j = new_i, new_j
        if not changed:
            converged = True
            break
    return SolverOutcome("abr", tab.ego_sequence(i), tab.opp_sequence(j), tab.pair(i, j),
                         evals, time.perf_counter() - start, converged)


def _from_plan(name: str, result: PlanResult, iterations: int, elapsed: float) -> SolverOutcome:
    return SolverOutcome(name, result.ego_completed, result.opp_completed, result.rewards,
                         iterations, elapsed, True, result)


def general_mcts(x0: JointState, scenario: Scenario, ego_params: RewardParams,
                 opp_params: RewardParams, config: SearchConfig) -> SolverOutcome:
    """The search engine with confidence weights off and uniform roll-outs."""
    cfg = SearchConfig.general(iterations=config.iterations, exploration_c=config.exploration_c,
                               seed=config.seed, stats_stride=config.stats_stride,
                               initial_accel=config.initial_accel)
    start = time.perf_counter()
    result = plan(x0, None, scenario, ego_params, opp_params, cfg)
    return _from_plan("general", result, cfg.iterations, time.perf_counter() - start)


def proposed_mcts(x0: JointState, preds: PredictionSet, scenario: Scenario,
                  ego_params: RewardParams, opp_params: RewardParams,
                  config: SearchConfig) -> SolverOutcome:
    start = time.perf_counter()
    result = plan(x0, preds, scenario, ego_params, opp_params, config)
    return _from_plan("proposed", result, config.iterations, time.perf_counter() - start)

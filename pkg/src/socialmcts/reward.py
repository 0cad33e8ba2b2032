"""Egoism and courtesy rewards and their courtesy-parameter blend."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .scenario import JointState, Scenario, advance, is_unsafe, rollout_joint

AGENTS = ("ego", "opp")


@dataclass(frozen=True)
class RewardParams:
    """Per-agent reward configuration.

    ``gamma`` blends the agent's own egoism (1.0) with the other agent's
    egoism (0.0).  ``theta`` weights the (comfort, efficiency) features.
    """
    gamma: float = 1.0
    theta: tuple[float, float] = (1.0, 1.0)
    alpha: float = 0.1
    beta: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if len(self.theta) != 2 or min(self.theta) < 0:
            raise ValueError("theta must be two non-negative weights")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")

    def max_reward(self, horizon: int) -> float:
        """Upper bound of any egoism or social reward over ``horizon`` steps."""
        return horizon * (self.theta[0] + self.theta[1])

    def with_gamma(self, gamma: float) -> "RewardParams":
        return RewardParams(gamma, self.theta, self.alpha, self.beta)

    def to_document(self) -> dict:
        return {"gamma": self.gamma, "theta": list(self.theta), "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_document(cls, doc: dict) -> "RewardParams":
        unknown = set(doc) - {"gamma", "theta", "alpha", "beta"}
        if unknown:
            raise ValueError(f"rewards: unknown field(s) {sorted(unknown)}")
        d = cls()
        return cls(float(doc.get("gamma", d.gamma)), tuple(doc.get("theta", d.theta)),
                   float(doc.get("alpha", d.alpha)), float(doc.get("beta", d.beta)))


@dataclass(frozen=True)
class RewardBreakdown:
    egoism_ego: float
    egoism_opp: float
    courtesy: float
    total: float


def features(accelerations: Sequence[float], speeds_next: Sequence[float], alpha: float, beta: float):
    """Summed (comfort, efficiency) features of one agent."""
    comfort = sum(math.exp(-alpha * a * a) for a in accelerations)
    efficiency = sum(1.0 - math.exp(-beta * v * v) for v in speeds_next)
    return comfort, efficiency


def egoism_from_profile(accelerations, speeds_next, params: RewardParams) -> float:
    c, e = features(accelerations, speeds_next, params.alpha, params.beta)
    return params.theta[0] * c + params.theta[1] * e


def _speeds(x0: JointState, U: Sequence[float], agent: str, scenario: Scenario) -> list[float]:
    st = x0.ego if agent == "ego" else x0.opp
    path = scenario.path(agent)
    s, v = st.s, st.v
    out = []
    for a in U:
        s, v, _ = advance(s, v, a, scenario.dt, path.l_ref, path.v_max)
        out.append(v)
    return out


def _check(U_a, U_b):
    if len(U_a) != len(U_b):
        raise ValueError(f"action sequences differ in length: {len(U_a)} vs {len(U_b)}")


def egoism_reward(x0: JointState, U_self: Sequence[float], U_other: Sequence[float],
                  params: RewardParams, agent: str, scenario: Scenario) -> float:
    """Egoism of ``agent`` along the joint rollout of the two sequences."""
    _check(U_self, U_other)
    if agent not in AGENTS:
        raise ValueError(f"unknown agent {agent!r}")
    # each agent's own features only depend on its own actions
    return egoism_from_profile(U_self, _speeds(x0, U_self, agent, scenario), params)


def social_reward(x0: JointState, U_E: Sequence[float], U_O: Sequence[float],
                  params: RewardParams, agent: str, scenario: Scenario) -> RewardBreakdown:
    """Courtesy-blended reward of ``agent``; the courtesy term is the other
    agent's egoism evaluated with the same parameters."""
    _check(U_E, U_O)
    e_ego = egoism_reward(x0, U_E, U_O, params, "ego", scenario)
    e_opp = egoism_reward(x0, U_O, U_E, params, "opp", scenario)
    own, other = (e_ego, e_opp) if agent == "ego" else (e_opp, e_ego)
    total = params.gamma * own + (1.0 - params.gamma) * other
    return RewardBreakdown(e_ego, e_opp, other, total)


def joint_payoff(x0: JointState, U_E: Sequence[float], U_O: Sequence[float],
                 ego_params: RewardParams, opp_params: RewardParams,
                 scenario: Scenario) -> tuple[float, float]:
    """Social rewards of both agents, zeroed when the joint trajectory is unsafe."""
    traj = [x0] + rollout_joint(x0, U_E, U_O, scenario)
    if is_unsafe(traj, scenario):
        return 0.0, 0.0
    return (social_reward(x0, U_E, U_O, ego_params, "ego", scenario).total,
            social_reward(x0, U_E, U_O, opp_params, "opp", scenario).total)

"""Closed-loop two-agent simulation.

Both agents plan with the prediction-heuristic search, each as the leader
of its own tree, and apply the first planned acceleration (held between
replans).  The opponent knows the ego's true reward parameters; the ego
models the opponent with the current courtesy estimate from the belief
tracker.  Predictions handed to each planner are the other agent's
constant-speed intent from its current state plus Gaussian noise.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .inference import (DEFAULT_SAMPLES, DEFAULT_WINDOW, BeliefRecord, BeliefTracker,
                        convergence_step, write_belief_trace)
from .prediction import synthetic_predict
from .reward import RewardParams
from .scenario import (AgentState, JointState, PathSpec, Scenario, ScenarioError, advance,
                       point_unsafe, segment_unsafe)
from .search import RefusePlanning, SearchConfig, plan

TRACE_COLUMNS = ("t", "s_ego", "v_ego", "a_ego", "s_opp", "v_opp", "a_opp", "gamma_hat")


@dataclass(frozen=True)
class SimConfig:
    ego_params: RewardParams = RewardParams()
    opp_params: RewardParams = RewardParams()
    dt_sim: float = 0.1
    duration: float = 10.0
    replan_stride: int = 1          # sim steps between replans
    iterations: int = 2000
    exploration_c: float = 1.0 / math.sqrt(2.0)
    sigma: float = 0.4
    seed: int = 0
    inference: bool = True
    # opponent courtesy the ego assumes when inference is off (None: the truth)
    assumed_gamma: float | None = None
    symmetric_inference: bool = False
    window: int = DEFAULT_WINDOW
    samples: int = DEFAULT_SAMPLES
    inference_stride: int = 1       # sim steps between belief updates
    interactive_only: bool = True

    def validate(self, scenario: Scenario) -> None:
        if self.dt_sim <= 0 or self.duration < 0:
            raise ScenarioError("dt_sim must be positive and duration non-negative")
        ratio = scenario.dt / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9:
            raise ScenarioError("dt_sim must divide the planning step")
        if self.replan_stride < 1 or self.inference_stride < 1:
            raise ScenarioError("replan_stride and inference_stride must be >= 1")

    def to_document(self) -> dict:
        return {"ego_params": self.ego_params.to_document(),
                "opp_params": self.opp_params.to_document(),
                "dt_sim": self.dt_sim, "duration": self.duration,
                "replan_stride": self.replan_stride, "iterations": self.iterations,
                "exploration_c": self.exploration_c, "sigma": self.sigma, "seed": self.seed,
                "inference": self.inference, "assumed_gamma": self.assumed_gamma,
                "symmetric_inference": self.symmetric_inference, "window": self.window,
                "samples": self.samples, "inference_stride": self.inference_stride,
                "interactive_only": self.interactive_only}

    @classmethod
    def from_document(cls, doc: dict) -> "SimConfig":
        doc = dict(doc)
        for key in ("ego_params", "opp_params"):
            if key in doc:
                doc[key] = RewardParams.from_document(doc[key])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ScenarioError(f"simulation config: unknown field(s) {sorted(unknown)}")
        return cls(**doc)


@dataclass
class ReplanRecord:
    time: float
    ego_actions: tuple[float, ...]
    opp_model_actions: tuple[float, ...]
    ego_rewards: tuple[float, float]
    gamma_used: float
    # opponent positions at planning steps 1..N: ego planner's inference and
    # the noisy prediction it was given
    inferred_opp: tuple[float, ...]
    predicted_opp: tuple[float, ...]
    opp_actions: tuple[float, ...] = ()

    def to_document(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class SimTrace:
    scenario: Scenario
    config: SimConfig
    times: list[float] = field(default_factory=list)
    states: list[JointState] = field(default_factory=list)
    # acceleration applied from times[k] to times[k + 1]
    applied: list[tuple[float, float]] = field(default_factory=list)
    gamma_hat: list[float] = field(default_factory=list)
    replans: list[ReplanRecord] = field(default_factory=list)
    beliefs: list[BeliefRecord] = field(default_factory=list)
    failure: str | None = None


def interaction_scenario(ego_speed: float = 6.0, opp_speed: float = 7.0,
                         ego_gap: float = 16.0, opp_gap: float = 18.0,
                         horizon: int = 5) -> Scenario:
    """Symmetric crossing; ``*_gap`` is the distance from each vehicle's
    front to its conflict zone."""
    front = rear = 2.0
    c = 40.0
    half = 2.0
    path = PathSpec(c + 40.0, 10.0, (c - half, c + half))
    init = JointState(AgentState(c - half - front - ego_gap, ego_speed),
                      AgentState(c - half - front - opp_gap, opp_speed))
    return Scenario(path, path, init, horizon=horizon, front_len=front, rear_len=rear)


def swap_roles(sc: Scenario) -> Scenario:
    """The same scene seen from the opponent's seat."""
    return replace(sc, ego_path=sc.opp_path, opp_path=sc.ego_path,
                   init=JointState(sc.init.opp, sc.init.ego))


def intent(state: AgentState, path: PathSpec, dt: float, n: int) -> np.ndarray:
    """Constant-speed positions at planning steps ``1..n``."""
    return np.minimum(state.s + state.v * dt * np.arange(1, n + 1), path.l_ref)


def _seed(root: int, step: int, role: int) -> int:
    return int(np.random.SeedSequence([root, step, role]).generate_state(1)[0])


def _passed(state: AgentState, path: PathSpec, rear: float) -> bool:
    return state.s - rear >= path.conflict[1]


def run_closed_loop(scenario: Scenario, config: SimConfig) -> SimTrace:
    config.validate(scenario)
    sc = scenario
    n_steps = int(round(config.duration / config.dt_sim))
    ego_view, opp_view = sc, swap_roles(sc)
    pE, pO = config.ego_params, config.opp_params
    trace = SimTrace(sc, config)
    stride = config.inference_stride * config.dt_sim / sc.dt

    def tracker_for(view, params):
        return BeliefTracker(view, params, config.window, stride, config.samples,
                             interactive_only=config.interactive_only)

    tracker = tracker_for(sc, pO) if config.inference else None
    opp_tracker = tracker_for(opp_view, pE) if config.symmetric_inference else None
    x = sc.init
    a_prev = (0.0, 0.0)
    a_cmd = (0.0, 0.0)
    t = 0.0
    if n_steps == 0:
        return trace
    if point_unsafe(x.ego.s, x.opp.s, sc):
        raise ScenarioError("initial state is already unsafe")

    def gamma_for_opp():
        if tracker is not None:
            return tracker.gamma_hat
        return pO.gamma if config.assumed_gamma is None else config.assumed_gamma

    for k in range(n_steps + 1):
        trace.times.append(t)
        trace.states.append(x)
        if tracker is not None:
            rec = tracker.observe(t, x)
            if rec is not None:
                trace.beliefs.append(rec)
        if opp_tracker is not None:
            opp_tracker.observe(t, JointState(x.opp, x.ego))
        trace.gamma_hat.append(gamma_for_opp())
        done = _passed(x.ego, sc.ego_path, sc.rear_len) and _passed(x.opp, sc.opp_path, sc.rear_len)
        if k == n_steps or done:
            break
        if k % config.replan_stride == 0:
            try:
                a_cmd = _replan(trace, x, t, k, ego_view, opp_view, config, gamma_for_opp(),
                                opp_tracker, a_prev)
            except RefusePlanning as exc:
                trace.failure = f"planner refused at t={t:.2f}: {exc}"
                break
        xe = advance(x.ego.s, x.ego.v, a_cmd[0], config.dt_sim, sc.ego_path.l_ref, sc.ego_path.v_max)
        xo = advance(x.opp.s, x.opp.v, a_cmd[1], config.dt_sim, sc.opp_path.l_ref, sc.opp_path.v_max)
        trace.applied.append(a_cmd)
        a_prev = a_cmd
        x = JointState(AgentState(xe[0], xe[1]), AgentState(xo[0], xo[1]))
        t = (k + 1) * config.dt_sim
    return trace


def _replan(trace, x, t, k, ego_view, opp_view, config, gamma_opp, opp_tracker, a_prev):
    N, dt = ego_view.horizon, ego_view.dt
    pE, pO = config.ego_params, config.opp_params
    # ego plans as leader, modelling the opponent with the estimate
    pred_o = synthetic_predict(intent(x.opp, ego_view.opp_path, dt, N), config.sigma,
                               seed=_seed(config.seed, k, 0))
    cfg = SearchConfig(iterations=config.iterations, exploration_c=config.exploration_c,
                       seed=_seed(config.seed, k, 1), stats_stride=0, initial_accel=a_prev)
    ego_plan = plan(x, pred_o, ego_view, pE, pO.with_gamma(gamma_opp), cfg)
    # the opponent plans as leader of its own tree and knows the ego's params
    xs = JointState(x.opp, x.ego)
    pred_e = synthetic_predict(intent(x.ego, opp_view.opp_path, dt, N), config.sigma,
                               seed=_seed(config.seed, k, 2))
    gamma_ego = opp_tracker.gamma_hat if opp_tracker is not None else pE.gamma
    cfg_o = replace(cfg, seed=_seed(config.seed, k, 3), initial_accel=(a_prev[1], a_prev[0]))
    opp_plan = plan(xs, pred_e, opp_view, pO, pE.with_gamma(gamma_ego), cfg_o)
    a_ego = ego_plan.ego_actions[0] if ego_plan.ego_actions else 0.0
    a_opp = opp_plan.ego_actions[0] if opp_plan.ego_actions else 0.0
    trace.replans.append(ReplanRecord(
        t, ego_plan.ego_completed, ego_plan.opp_completed, ego_plan.rewards, gamma_opp,
        tuple(st.opp.s for st in ego_plan.trajectory),
        tuple(float(p) for p in pred_o.trajectories[0].points),
        opp_plan.ego_completed))
    return a_ego, a_opp


def inferred_opponent_trajectory(trace: SimTrace, index: int) -> tuple[float, ...]:
    """Opponent positions the ego planner expected at replan ``index``."""
    if not 0 <= index < len(trace.replans):
        raise IndexError(f"replan index {index} outside 0..{len(trace.replans) - 1}")
    return trace.replans[index].inferred_opp


def executed_opponent_positions(trace: SimTrace, index: int) -> tuple[float, ...]:
    """Opponent positions actually reached at the planning steps following
    replan ``index``; shorter than the horizon if the run ended first."""
    t0 = trace.replans[index].time
    dt = trace.scenario.dt
    out = []
    for j in range(1, trace.scenario.horizon + 1):
        target = t0 + j * dt
        k = int(round(target / trace.config.dt_sim))
        if k >= len(trace.states) or abs(trace.times[k] - target) > 1e-6:
            break
        out.append(trace.states[k].opp.s)
    return tuple(out)


def _rmse(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def recovery_errors(trace: SimTrace) -> tuple[float, float] | None:
    """Mean RMSE over replans of the inferred and of the predicted opponent
    trajectory against the executed one, using only replans with at least
    one executed step."""
    inf_e, pred_e = [], []
    for i, rec in enumerate(trace.replans):
        truth = executed_opponent_positions(trace, i)
        if not truth:
            continue
        n = len(truth)
        inf_e.append(_rmse(rec.inferred_opp[:n], truth))
        pred_e.append(_rmse(rec.predicted_opp[:n], truth))
    if not inf_e:
        return None
    return float(np.mean(inf_e)), float(np.mean(pred_e))


def _footprint_clearance(s, path: PathSpec, front, rear) -> float:
    s_in, s_out = path.conflict
    return max(s_in - (s + front), (s - rear) - s_out, 0.0)


def _crossing_time(trace: SimTrace, agent: str) -> float | None:
    path = trace.scenario.path(agent)
    mid = 0.5 * (path.conflict[0] + path.conflict[1])
    for t, x in zip(trace.times, trace.states):
        if (x.ego if agent == "ego" else x.opp).s >= mid:
            return t
    return None


def crossing_order(trace: SimTrace) -> str | None:
    te, to = _crossing_time(trace, "ego"), _crossing_time(trace, "opp")
    if te is None and to is None:
        return None
    if to is None or (te is not None and te < to):
        return "ego"
    if te is None or to < te:
        return "opp"
    return "tie"


def collided(trace: SimTrace) -> bool:
    sc = trace.scenario
    for a, b in zip(trace.states, trace.states[1:]):
        if segment_unsafe(a.ego.s, b.ego.s, a.opp.s, b.opp.s, sc):
            return True
    return bool(trace.states) and point_unsafe(trace.states[-1].ego.s, trace.states[-1].opp.s, sc)


def metrics(trace: SimTrace) -> dict:
    """Summary of one run; every field is ``None`` for an empty trace."""
    keys = ("crossing_order", "min_gap", "egoism_ego", "egoism_opp", "convergence_step",
            "convergence_step_from_start", "collision", "final_gamma_hat", "failure", "steps")
    if len(trace.states) < 2:
        out = dict.fromkeys(keys)
        out["failure"] = trace.failure
        return out
    sc, cfg = trace.scenario, trace.config
    gap = min(_footprint_clearance(x.ego.s, sc.ego_path, sc.front_len, sc.rear_len)
              + _footprint_clearance(x.opp.s, sc.opp_path, sc.front_len, sc.rear_len)
              for x in trace.states)
    scale = cfg.dt_sim / sc.dt

    def egoism(params, idx, agent):
        total = 0.0
        for (a_pair, x) in zip(trace.applied, trace.states[1:]):
            a = a_pair[idx]
            v = (x.ego if agent == "ego" else x.opp).v
            total += scale * (params.theta[0] * math.exp(-params.alpha * a * a)
                              + params.theta[1] * (1.0 - math.exp(-params.beta * v * v)))
        return total

    conv = conv_start = None
    if cfg.inference and trace.beliefs:
        conv = convergence_step(trace.beliefs, cfg.opp_params.gamma, sc.dt)
        conv_start = convergence_step(trace.beliefs, cfg.opp_params.gamma, sc.dt, from_start=True)
    return {
        "crossing_order": crossing_order(trace),
        "min_gap": gap,
        "egoism_ego": egoism(cfg.ego_params, 0, "ego"),
        "egoism_opp": egoism(cfg.opp_params, 1, "opp"),
        "convergence_step": None if conv is None else round(conv, 6),
        "convergence_step_from_start": None if conv_start is None else round(conv_start, 6),
        "collision": collided(trace),
        "final_gamma_hat": trace.gamma_hat[-1] if trace.gamma_hat else None,
        "failure": trace.failure,
        "steps": len(trace.applied),
    }


def replay_states(trace: SimTrace) -> list[JointState]:
    """Re-integrate the applied accelerations from the first state."""
    sc, dt = trace.scenario, trace.config.dt_sim
    if not trace.states:
        return []
    x = trace.states[0]
    out = [x]
    for ae, ao in trace.applied:
        xe = advance(x.ego.s, x.ego.v, ae, dt, sc.ego_path.l_ref, sc.ego_path.v_max)
        xo = advance(x.opp.s, x.opp.v, ao, dt, sc.opp_path.l_ref, sc.opp_path.v_max)
        x = JointState(AgentState(xe[0], xe[1]), AgentState(xo[0], xo[1]))
        out.append(x)
    return out


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def write_trace(trace: SimTrace, path) -> None:
    """Tab-separated trace; the last row has no applied acceleration."""
    with open(path, "w") as f:
        f.write("\t".join(TRACE_COLUMNS) + "\n")
        for k, (t, x) in enumerate(zip(trace.times, trace.states)):
            ae, ao = trace.applied[k] if k < len(trace.applied) else (math.nan, math.nan)
            g = trace.gamma_hat[k] if k < len(trace.gamma_hat) else math.nan
            row = (t, x.ego.s, x.ego.v, ae, x.opp.s, x.opp.v, ao, g)
            f.write("\t".join(repr(float(v)) for v in row) + "\n")


def read_trace(path) -> tuple[list[float], list[JointState], list[tuple[float, float]], list[float]]:
    times, states, applied, gammas = [], [], [], []
    with open(path) as f:
        header = f.readline().rstrip("\n").split("\t")
        if tuple(header) != TRACE_COLUMNS:
            raise ScenarioError(f"unexpected trace header {header}")
        for line in f:
            if not line.strip():
                continue
            t, se, ve, ae, so, vo, ao, g = (float(v) for v in line.rstrip("\n").split("\t"))
            times.append(t)
            states.append(JointState(AgentState(se, ve), AgentState(so, vo)))
            if not (math.isnan(ae) or math.isnan(ao)):
                applied.append((ae, ao))
            gammas.append(g)
    return times, states, applied, gammas


def write_sidecars(trace: SimTrace, out_dir, stem: str = "sim") -> dict[str, str]:
    """Plans, belief trace and metrics next to the main trace file."""
    paths = {
        "trace": os.path.join(out_dir, f"{stem}_trace.tsv"),
        "plans": os.path.join(out_dir, f"{stem}_plans.json"),
        "beliefs": os.path.join(out_dir, f"{stem}_beliefs.tsv"),
        "metrics": os.path.join(out_dir, f"{stem}_metrics.json"),
    }
    write_trace(trace, paths["trace"])
    with open(paths["plans"], "w") as f:
        json.dump([r.to_document() for r in trace.replans], f, indent=1)
    write_belief_trace(trace.beliefs, paths["beliefs"])
    with open(paths["metrics"], "w") as f:
        json.dump(metrics(trace), f, indent=2)
    return paths


# (ego gamma, opponent gamma) presets
COURTEOUS = 0.2
BEHAVIOR_CONFIGS = {
    "courteous_ego": (COURTEOUS, 1.0),
    "courteous_opp": (1.0, COURTEOUS),
    "less_egoistic_opp": (1.0, 0.8),
}


def behavior_config(name: str, **kw) -> SimConfig:
    g_e, g_o = BEHAVIOR_CONFIGS[name]
    return SimConfig(ego_params=RewardParams(g_e), opp_params=RewardParams(g_o), **kw)

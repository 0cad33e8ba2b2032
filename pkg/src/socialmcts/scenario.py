"""Reference paths, longitudinal dynamics and the conflict-zone collision test.

Both agents move along fixed reference paths that cross at a single
interaction point.  Each path carries a conflict interval ``[s_in, s_out]``
around that point; two vehicles collide when both occupy their own conflict
interval at the same instant.
"""
from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

DEFAULT_ACTIONS = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0)
SCHEMA_VERSION = 1
_EPS = 1e-9


class ScenarioError(ValueError):
    """A scenario document or value failed validation."""


@dataclass(frozen=True)
class AgentState:
    s: float
    v: float


@dataclass(frozen=True)
class JointState:
    ego: AgentState
    opp: AgentState
    t: int = 0
    # set when reaching this state needed a speed above v_max to be clipped
    overspeed: bool = False

    def __post_init__(self):
        if self.t < 0:
            raise ScenarioError("t must be non-negative")


@dataclass(frozen=True)
class ActionSet:
    accelerations: tuple[float, ...] = DEFAULT_ACTIONS

    def __post_init__(self):
        acc = tuple(float(a) for a in self.accelerations)
        object.__setattr__(self, "accelerations", acc)
        if not acc:
            raise ScenarioError("actions: must be non-empty")
        if any(b <= a for a, b in zip(acc, acc[1:])):
            raise ScenarioError("actions: must be strictly increasing")
        if 0.0 not in acc:
            raise ScenarioError("actions: must contain 0")

    def __len__(self):
        return len(self.accelerations)

    def __getitem__(self, i):
        return self.accelerations[i]

    def __iter__(self):
        return iter(self.accelerations)

    @property
    def zero_index(self) -> int:
        return self.accelerations.index(0.0)

    def snap(self, a: float) -> int:
        """Index of the nearest acceleration; ties go to the lower index."""
        best, best_d = 0, math.inf
        for i, ai in enumerate(self.accelerations):
            d = abs(ai - a)
            if d < best_d - 1e-12:
                best, best_d = i, d
        return best


@dataclass(frozen=True)
class PathSpec:
    l_ref: float
    v_max: float
    conflict: tuple[float, float]

    def __post_init__(self):
        s_in, s_out = (float(x) for x in self.conflict)
        object.__setattr__(self, "conflict", (s_in, s_out))
        if self.l_ref <= 0:
            raise ScenarioError("l_ref: must be positive")
        if self.v_max <= 0:
            raise ScenarioError("v_max: must be positive")
        if not 0.0 <= s_in < s_out <= self.l_ref:
            raise ScenarioError("conflict: need 0 <= s_in < s_out <= l_ref")


@dataclass(frozen=True)
class Scenario:
    ego_path: PathSpec
    opp_path: PathSpec
    init: JointState
    dt: float = 0.5
    horizon: int = 5
    jerk_comfort: float = 2.0
    actions: ActionSet = field(default_factory=ActionSet)
    front_len: float = 2.0
    rear_len: float = 2.0
    # interpolation points per step used by the collision test
    collision_substeps: int = 5

    def __post_init__(self):
        if self.dt <= 0:
            raise ScenarioError("dt: must be positive")
        if self.horizon < 1:
            raise ScenarioError("horizon: must be >= 1")
        if self.jerk_comfort <= 0:
            raise ScenarioError("jerk_comfort: must be positive")
        if self.front_len < 0 or self.rear_len < 0:
            raise ScenarioError("vehicle: lengths must be non-negative")
        if self.collision_substeps < 1:
            raise ScenarioError("collision_substeps: must be >= 1")
        for name, st, path in (("ego", self.init.ego, self.ego_path),
                               ("opp", self.init.opp, self.opp_path)):
            if not (0.0 <= st.s <= path.l_ref and 0.0 <= st.v <= path.v_max):
                raise ScenarioError(f"init.{name}: state outside path bounds")

    def path(self, agent: str) -> PathSpec:
        return self.ego_path if agent == "ego" else self.opp_path

    def with_init(self, init: JointState) -> "Scenario":
        return replace(self, init=init)


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------

def advance(s, v, a, dt, l_ref, v_max):
    """Raw-float kinematics step; returns ``(s', v', overspeed)``."""
    v_raw = v + a * dt
    v_new = 0.0 if v_raw < 0.0 else (v_max if v_raw > v_max else v_raw)
    s_raw = s + v * dt + 0.5 * a * dt * dt
    s_new = s if s_raw < s else (l_ref if s_raw > l_ref else s_raw)
    return s_new, v_new, v_raw > v_max + _EPS


def step_dynamics(state: AgentState, a: float, dt: float, path: PathSpec) -> AgentState:
    s, v, _ = advance(state.s, state.v, a, dt, path.l_ref, path.v_max)
    return AgentState(s, v)


def rollout_joint(x0: JointState, U_E: Sequence[float], U_O: Sequence[float],
                  scenario: Scenario) -> list[JointState]:
    """Step both agents simultaneously; returns ``x_1 .. x_n``."""
    if len(U_E) != len(U_O):
        raise ValueError(f"action sequences differ in length: {len(U_E)} vs {len(U_O)}")
    pe, po, dt = scenario.ego_path, scenario.opp_path, scenario.dt
    se, ve, so, vo = x0.ego.s, x0.ego.v, x0.opp.s, x0.opp.v
    out = []
    flagged = x0.overspeed
    for k, (ae, ao) in enumerate(zip(U_E, U_O)):
        se, ve, fe = advance(se, ve, ae, dt, pe.l_ref, pe.v_max)
        so, vo, fo = advance(so, vo, ao, dt, po.l_ref, po.v_max)
        flagged = flagged or fe or fo
        out.append(JointState(AgentState(se, ve), AgentState(so, vo), x0.t + k + 1, flagged))
    return out


# --------------------------------------------------------------------------
# collision predicate
# --------------------------------------------------------------------------

def occupies_conflict(s, path: PathSpec, front_len: float, rear_len: float):
    """True when the footprint ``[s - rear, s + front]`` overlaps the conflict
    interval.  Touching ``s_in`` with the front bumper does not count.

    Works elementwise on numpy arrays.
    """
    s_in, s_out = path.conflict
    return (s + front_len > s_in) & (s - rear_len < s_out)


def segment_unsafe(se0, se1, so0, so1, scenario: Scenario) -> bool:
    """Collision test over one step, sampled at ``collision_substeps`` points.

    The sample at fraction 0 is included, the end point is not.
    """
    pe, po = scenario.ego_path, scenario.opp_path
    fl, rl = scenario.front_len, scenario.rear_len
    # cheap rejection: the segments never touch their conflict zones
    if se1 + fl <= pe.conflict[0] or se0 - rl >= pe.conflict[1]:
        return False
    if so1 + fl <= po.conflict[0] or so0 - rl >= po.conflict[1]:
        return False
    m = scenario.collision_substeps
    de, do = se1 - se0, so1 - so0
    for j in range(m):
        f = j / m
        if occupies_conflict(se0 + f * de, pe, fl, rl) and occupies_conflict(so0 + f * do, po, fl, rl):
            return True
    return False


def point_unsafe(se, so, scenario: Scenario) -> bool:
    return bool(occupies_conflict(se, scenario.ego_path, scenario.front_len, scenario.rear_len)
                and occupies_conflict(so, scenario.opp_path, scenario.front_len, scenario.rear_len))


def is_unsafe(trajectory: Sequence[JointState], scenario: Scenario) -> bool:
    """Safety indicator over a trajectory of joint states.

    Unsafe when any state was flagged for overspeed, or when both agents sit
    inside their conflict intervals at a sampled instant.  Consecutive states
    are linearly interpolated so that fast crossings are not skipped.
    """
    if not trajectory:
        raise ValueError("empty trajectory")
    for x in trajectory:
        if x.overspeed:
            return True
    for a, b in zip(trajectory, trajectory[1:]):
        if segment_unsafe(a.ego.s, b.ego.s, a.opp.s, b.opp.s, scenario):
            return True
    last = trajectory[-1]
    return point_unsafe(last.ego.s, last.opp.s, scenario)


# --------------------------------------------------------------------------
# enumeration helpers shared by the exhaustive solvers and inference
# --------------------------------------------------------------------------

@dataclass
class SequenceTable:
    """All action sequences of one agent rolled out from a fixed start state.

    Row ``i`` corresponds to ``itertools.product(range(|A|), repeat=n)`` order,
    so row order equals lexicographic order of action indices.
    """
    indices: np.ndarray      # (M, n) int
    accelerations: np.ndarray  # (M, n)
    positions: np.ndarray    # (M, n + 1) including the start
    speeds: np.ndarray       # (M, n + 1)
    overspeed: np.ndarray    # (M,) bool

    def conflict_samples(self, path: PathSpec, scenario: Scenario) -> np.ndarray:
        """Boolean occupancy at the same sample instants ``is_unsafe`` uses."""
        pos = self.positions
        m = scenario.collision_substeps
        n = pos.shape[1] - 1
        cols = []
        for k in range(n):
            d = pos[:, k + 1] - pos[:, k]
            for j in range(m):
                cols.append(pos[:, k] + (j / m) * d)
        cols.append(pos[:, n])
        samples = np.stack(cols, axis=1)
        return occupies_conflict(samples, path, scenario.front_len, scenario.rear_len)


def sequence_table(state: AgentState, path: PathSpec, scenario: Scenario, n: int,
                   indices: np.ndarray | None = None) -> SequenceTable:
    acc_values = np.asarray(scenario.actions.accelerations)
    if indices is None:
        k = len(acc_values)
        indices = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64).reshape(-1, n)
    acc = acc_values[indices]
    count = acc.shape[0]
    pos = np.empty((count, n + 1))
    vel = np.empty((count, n + 1))
    pos[:, 0], vel[:, 0] = state.s, state.v
    over = np.zeros(count, dtype=bool)
    dt = scenario.dt
    for k in range(n):
        a = acc[:, k]
        v_raw = vel[:, k] + a * dt
        over |= v_raw > path.v_max + _EPS
        vel[:, k + 1] = np.clip(v_raw, 0.0, path.v_max)
        s_raw = pos[:, k] + vel[:, k] * dt + 0.5 * a * dt * dt
        pos[:, k + 1] = np.minimum(np.maximum(s_raw, pos[:, k]), path.l_ref)
    return SequenceTable(indices, acc, pos, vel, over)


# --------------------------------------------------------------------------
# documents
# --------------------------------------------------------------------------

_PATH_SCHEMA = {
    "type": "object",
    "required": ["l_ref", "v_max", "conflict"],
    "additionalProperties": False,
    "properties": {
        "l_ref": {"type": "number", "exclusiveMinimum": 0},
        "v_max": {"type": "number", "exclusiveMinimum": 0},
        "conflict": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    },
}
_AGENT_SCHEMA = {
    "type": "object",
    "required": ["s", "v"],
    "additionalProperties": False,
    "properties": {"s": {"type": "number"}, "v": {"type": "number"}},
}
SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["version", "dt", "horizon", "jerk_comfort", "actions", "ego_path",
                 "opp_path", "vehicle", "init"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "integer", "minimum": 1},
        "jerk_comfort": {"type": "number", "exclusiveMinimum": 0},
        "actions": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "ego_path": _PATH_SCHEMA,
        "opp_path": _PATH_SCHEMA,
        "vehicle": {
            "type": "object",
            "required": ["front_len", "rear_len"],
            "additionalProperties": False,
            "properties": {"front_len": {"type": "number", "minimum": 0},
                           "rear_len": {"type": "number", "minimum": 0}},
        },
        "init": {
            "type": "object",
            "required": ["ego", "opp"],
            "additionalProperties": False,
            "properties": {"ego": _AGENT_SCHEMA, "opp": _AGENT_SCHEMA},
        },
        "collision_substeps": {"type": "integer", "minimum": 1},
        # consumed by the CLI, not by the Scenario itself
        "rewards": {"type": "object"},
        "ground_truth": {"type": "object"},
    },
}


def _validate(doc, schema):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as e:
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ScenarioError(f"{where}: {e.message}") from None


def load_scenario(document) -> Scenario:
    """Build a Scenario from a parsed document (dict), JSON string or path."""
    doc = _as_document(document)
    _validate(doc, SCENARIO_SCHEMA)

    def path(d):
        return PathSpec(float(d["l_ref"]), float(d["v_max"]), tuple(d["conflict"]))

    init = JointState(AgentState(float(doc["init"]["ego"]["s"]), float(doc["init"]["ego"]["v"])),
                      AgentState(float(doc["init"]["opp"]["s"]), float(doc["init"]["opp"]["v"])))
    return Scenario(
        ego_path=path(doc["ego_path"]),
        opp_path=path(doc["opp_path"]),
        init=init,
        dt=float(doc["dt"]),
        horizon=int(doc["horizon"]),
        jerk_comfort=float(doc["jerk_comfort"]),
        actions=ActionSet(tuple(doc["actions"])),
        front_len=float(doc["vehicle"]["front_len"]),
        rear_len=float(doc["vehicle"]["rear_len"]),
        collision_substeps=int(doc.get("collision_substeps", 5)),
    )


def scenario_to_document(sc: Scenario) -> dict:
    def path(p):
        return {"l_ref": p.l_ref, "v_max": p.v_max, "conflict": list(p.conflict)}

    return {
        "version": SCHEMA_VERSION,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "jerk_comfort": sc.jerk_comfort,
        "actions": list(sc.actions.accelerations),
        "ego_path": path(sc.ego_path),
        "opp_path": path(sc.opp_path),
        "vehicle": {"front_len": sc.front_len, "rear_len": sc.rear_len},
        "init": {"ego": {"s": sc.init.ego.s, "v": sc.init.ego.v},
                 "opp": {"s": sc.init.opp.s, "v": sc.init.opp.v}},
        "collision_substeps": sc.collision_substeps,
    }


def _as_document(document):
    if isinstance(document, dict):
        return document
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        with open(document) as f:
            return json.load(f)
    try:
        return json.loads(document)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"<root>: not valid JSON ({e})") from None


# --------------------------------------------------------------------------
# synthetic scenarios
# --------------------------------------------------------------------------

def make_synthetic_scenario(seed: int, horizon: int = 5, actions=DEFAULT_ACTIONS, dt: float = 0.5,
                            v_max: float = 10.0, speed_range=(5.0, 8.0), arrival_range=(0.4, 0.9),
                            ego_lag_range=(-0.5, 0.5), conflict_half_width: float = 2.0,
                            jerk_comfort: float = 2.0, vehicle_len: float = 2.0):
    """Random crossing scenario plus a ground-truth opponent trajectory.

    ``arrival_range`` is the opponent's time to reach its conflict zone as a
    fraction of the planning horizon; the ego reaches its own zone
    ``ego_lag_range`` seconds later (negative: earlier).  Returns
    ``(scenario, ground_truth)`` where ``ground_truth`` holds opponent
    positions at steps ``1..horizon``.
    """
    rng = random.Random(seed)
    span = horizon * dt
    act = ActionSet(tuple(actions))

    def place(c, v, t_arr):
        s_entry = c - conflict_half_width - vehicle_len
        return max(0.0, s_entry - v * t_arr)

    c_e, c_o = rng.uniform(30.0, 40.0), rng.uniform(30.0, 40.0)
    v_e, v_o = rng.uniform(*speed_range), rng.uniform(*speed_range)
    t_o = rng.uniform(*arrival_range) * span
    t_e = max(0.05 * span, t_o + rng.uniform(*ego_lag_range))
    ego_path = PathSpec(c_e + 40.0, v_max, (c_e - conflict_half_width, c_e + conflict_half_width))
    opp_path = PathSpec(c_o + 40.0, v_max, (c_o - conflict_half_width, c_o + conflict_half_width))
    init = JointState(AgentState(place(c_e, v_e, t_e), v_e), AgentState(place(c_o, v_o, t_o), v_o))
    sc = Scenario(ego_path, opp_path, init, dt=dt, horizon=horizon, jerk_comfort=jerk_comfort,
                  actions=act, front_len=vehicle_len, rear_len=vehicle_len)
    return sc, synthetic_ground_truth(sc, rng)


REFERENCE_SEED = 0
REFERENCE_EGO_LAG = (0.3, 0.9)


def reference_scenario(horizon: int = 5, actions=DEFAULT_ACTIONS):
    """The benchmark crossing: the opponent reaches the conflict zone first
    and the ego trails by 0.3 to 0.9 s, so a free-driving opponent ground
    truth is also a plausible joint outcome."""
    return make_synthetic_scenario(REFERENCE_SEED, horizon=horizon, actions=actions,
                                   ego_lag_range=REFERENCE_EGO_LAG)


def synthetic_ground_truth(sc: Scenario, rng: random.Random, rationality: float = 20.0,
                           alpha: float = 0.1, beta: float = 0.02) -> tuple[float, ...]:
    """Opponent positions of a noisy-rational free driver.

    A sequence is drawn from a softmax over the opponent's own comfort plus
    efficiency score, restricted to jerk-feasible sequences that stay safe
    against a stationary ego and enter the conflict zone within the horizon.
    """
    n = sc.horizon
    tab = sequence_table(sc.init.opp, sc.opp_path, sc, n)
    acc = tab.accelerations
    jerk = np.abs(np.diff(np.concatenate([np.zeros((len(acc), 1)), acc], axis=1), axis=1))
    ok = (jerk <= sc.jerk_comfort + _EPS).all(axis=1) & ~tab.overspeed
    ego_still = occupies_conflict(np.full(tab.positions.shape[1], sc.init.ego.s), sc.ego_path,
                                  sc.front_len, sc.rear_len)
    if ego_still.any():
        ok &= ~tab.conflict_samples(sc.opp_path, sc).any(axis=1)
    reach = ok & (tab.positions[:, -1] + sc.front_len > sc.opp_path.conflict[0])
    if reach.any():
        ok = reach
    if not ok.any():
        return tuple(float(x) for x in tab.positions[np.argmax((acc == 0).all(axis=1)), 1:])
    score = (np.exp(-alpha * acc ** 2).sum(axis=1)
             + (1.0 - np.exp(-beta * tab.speeds[:, 1:] ** 2)).sum(axis=1))
    logits = np.where(ok, rationality * score, -np.inf)
    w = np.exp(logits - logits.max())
    i = rng.choices(range(len(w)), weights=w.tolist())[0]
    return tuple(float(x) for x in tab.positions[i, 1:])

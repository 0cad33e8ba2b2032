"""Online Bayesian estimation of the opponent's courtesy parameter.

Each candidate gamma scores an observed window of ``r`` planning steps by
a softmax over every opponent action sequence of length ``r``.  The ego's
observed actions stay fixed, and sequences that are unsafe against them
score zero.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselines import AgentTable
from .reward import RewardParams
from .scenario import JointState, Scenario

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 21
DEFAULT_WINDOW = 5
DEFAULT_CAP = 10 ** 6
CONVERGENCE_TOL = 0.1


class InfeasibleWindow(ValueError):
    """Too many opponent sequences to enumerate for this window length."""


@dataclass(frozen=True)
class Belief:
    samples: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(float(x) for x in self.samples))
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        if len(self.samples) < 2:
            raise ValueError("need at least two candidate samples")
        if len(self.samples) != len(self.weights):
            raise ValueError("samples and weights differ in length")
        if len(set(self.samples)) != len(self.samples):
            raise ValueError("samples must be distinct")
        if not all(0.0 <= g <= 1.0 for g in self.samples):
            raise ValueError("samples must lie in [0, 1]")
        if min(self.weights) < 0 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must be a probability vector")

    @classmethod
    def uniform(cls, m: int = DEFAULT_SAMPLES) -> "Belief":
        return cls(tuple(np.linspace(0.0, 1.0, m)), (1.0 / m,) * m)

    @property
    def mean(self) -> float:
        return float(np.dot(self.samples, self.weights))

    @property
    def entropy(self) -> float:
        w = np.asarray(self.weights)
        w = w[w > 0]
        return float(-(w * np.log(w)).sum())


@dataclass(frozen=True)
class ObservationWindow:
    """``r + 1`` observed joint states one planning step apart and the
    snapped actions that connect them."""
    states: tuple[JointState, ...]
    ego_actions: tuple[float, ...]
    opp_actions: tuple[float, ...]
    start_time: float = 0.0
    end_time: float = 0.0

    def __post_init__(self):
        r = len(self.states) - 1
        if r < 1:
            raise ValueError("a window needs at least two states")
        if len(self.ego_actions) != r or len(self.opp_actions) != r:
            raise ValueError("one action per agent per window step is required")

    @property
    def r(self) -> int:
        return len(self.states) - 1

    @classmethod
    def from_states(cls, states: Sequence[JointState], scenario: Scenario,
                    start_time: float = 0.0, end_time: float = 0.0) -> "ObservationWindow":
        """Reconstruct accelerations from speed differences and snap them."""
        dt = scenario.dt
        acts = scenario.actions

        def snapped(dv):
            return acts[acts.snap(dv / dt)]

        ego = tuple(snapped(b.ego.v - a.ego.v) for a, b in zip(states, states[1:]))
        opp = tuple(snapped(b.opp.v - a.opp.v) for a, b in zip(states, states[1:]))
        return cls(tuple(states), ego, opp, start_time, end_time)


def _check_size(scenario: Scenario, r: int, cap: int) -> None:
    size = len(scenario.actions.accelerations) ** r
    if size > cap:
        raise InfeasibleWindow(f"|A|^r = {size} exceeds the cap {cap}; use a shorter window")


def _window_tables(window: ObservationWindow, params: RewardParams, scenario: Scenario, cap: int):
    r = window.r
    _check_size(scenario, r, cap)
    acc = scenario.actions.accelerations
    x0 = window.states[0]
    ego_row = np.array([[acc.index(a) for a in window.ego_actions]], dtype=np.int64)
    ego = AgentTable(x0.ego, scenario.ego_path, scenario, r, params.alpha, params.beta, ego_row)
    opp = AgentTable(x0.opp, scenario.opp_path, scenario, r, params.alpha, params.beta)
    observed = 0
    for a in window.opp_actions:
        observed = observed * len(acc) + acc.index(a)
    conflict = np.maximum(ego.first[0], opp.first) <= np.minimum(ego.last[0], opp.last)
    return ego, opp, conflict, observed


def is_interactive(window: ObservationWindow, params: RewardParams, scenario: Scenario,
                   cap: int = DEFAULT_CAP) -> bool:
    """Whether the ego's observed actions rule out some opponent sequence
    by conflict, so that the opponent's choice could reflect courtesy."""
    return bool(_window_tables(window, params, scenario, cap)[2].any())


def log_softmax(R: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction."""
    R = np.asarray(R, dtype=float)
    top = R.max(axis=-1, keepdims=True)
    return R - top - np.log(np.exp(R - top).sum(axis=-1, keepdims=True))


def log_likelihoods(window: ObservationWindow, gammas: Sequence[float], params: RewardParams,
                    scenario: Scenario, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Log-probability of the observed opponent sequence for each gamma.

    ``params`` supplies the opponent's theta, alpha and beta; its own gamma
    is ignored.
    """
    ego, opp, conflict, observed = _window_tables(window, params, scenario, cap)
    unsafe = conflict | ego.overspeed[0] | opp.overspeed
    own = opp.egoism(params)
    other = float(ego.egoism(params)[0])
    g = np.asarray(gammas, dtype=float)[:, None]
    R = np.where(unsafe[None, :], 0.0, g * own[None, :] + (1.0 - g) * other)
    return log_softmax(R)[:, observed]


def likelihood(window: ObservationWindow, gamma: float, params: RewardParams,
               scenario: Scenario, cap: int = DEFAULT_CAP) -> float:
    return float(math.exp(log_likelihoods(window, [gamma], params, scenario, cap)[0]))


def update_belief(belief: Belief, window: ObservationWindow, params: RewardParams,
                  scenario: Scenario, cap: int = DEFAULT_CAP) -> tuple[Belief, float]:
    """Multiply in the window likelihood and return the posterior and its mean."""
    ll = log_likelihoods(window, belief.samples, params, scenario, cap)
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(belief.weights)) + ll
    if not np.isfinite(logw).any():
        log.warning("all candidate likelihoods underflowed; resetting to a uniform belief")
        m = len(belief.samples)
        new = Belief(belief.samples, (1.0 / m,) * m)
        return new, new.mean
    w = np.exp(logw - logw[np.isfinite(logw)].max())
    w = np.where(np.isfinite(logw), w, 0.0)
    w /= w.sum()
    new = Belief(belief.samples, tuple(w))
    return new, new.mean


@dataclass(frozen=True)
class BeliefRecord:
    sim_time: float
    gamma_hat: float
    weight_entropy: float
    window_start: float
    window_end: float
    interactive: bool = True


class BeliefTracker:
    """Feeds observed joint states into the belief.

    States arrive at the simulation rate; every ``stride`` planning steps
    (fractions allowed) the last ``r + 1`` states spaced one planning step apart form a window.
    With ``interactive_only`` the belief only moves on windows in which the
    ego constrained the opponent; other windows are recorded unchanged.
    """

    def __init__(self, scenario: Scenario, params: RewardParams, r: int = DEFAULT_WINDOW,
                 stride: float = 1, samples: int = DEFAULT_SAMPLES, cap: int = DEFAULT_CAP,
                 interactive_only: bool = True):
        if r < 1 or stride <= 0:
            raise ValueError("window length must be >= 1 and stride positive")
        _check_size(scenario, r, cap)
        self.scenario, self.params = scenario, params
        self.r, self.stride, self.cap = r, stride, cap
        self.interactive_only = interactive_only
        self.belief = Belief.uniform(samples)
        self.history: list[tuple[float, JointState]] = []
        self.records: list[BeliefRecord] = []
        self._next_end = None

    @property
    def gamma_hat(self) -> float:
        return self.belief.mean

    def observe(self, sim_time: float, state: JointState) -> BeliefRecord | None:
        """Record a state; returns a belief record when a window completes."""
        self.history.append((sim_time, state))
        dt = self.scenario.dt
        t0 = self.history[0][0]
        span = self.r * dt
        if self._next_end is None:
            self._next_end = t0 + span
        if sim_time + 1e-9 < self._next_end:
            return None
        picks = []
        for k in range(self.r + 1):
            target = sim_time - (self.r - k) * dt
            picks.append(min(self.history, key=lambda p: abs(p[0] - target)))
        window = ObservationWindow.from_states([p[1] for p in picks], self.scenario,
                                               picks[0][0], picks[-1][0])
        active = is_interactive(window, self.params, self.scenario, self.cap)
        if active or not self.interactive_only:
            self.belief, _ = update_belief(self.belief, window, self.params, self.scenario, self.cap)
        rec = BeliefRecord(sim_time, self.belief.mean, self.belief.entropy, window.start_time,
                           window.end_time, active)
        self.records.append(rec)
        self._next_end = sim_time + self.stride * dt
        return rec


def replay(times: Sequence[float], states: Sequence[JointState], scenario: Scenario,
           params: RewardParams, r: int = DEFAULT_WINDOW, stride: int = 1,
           samples: int = DEFAULT_SAMPLES, interactive_only: bool = True) -> list[BeliefRecord]:
    """Run the tracker offline over a recorded state sequence."""
    tracker = BeliefTracker(scenario, params, r, stride, samples, interactive_only=interactive_only)
    for t, x in zip(times, states):
        tracker.observe(t, x)
    return tracker.records


def convergence_step(records: Sequence[BeliefRecord], truth: float, dt: float,
                     tol: float = CONVERGENCE_TOL, from_start: bool = False) -> float | None:
    """Planning steps (of length ``dt``) until the estimate enters ``tol`` of
    ``truth`` for good.

    By default the count starts at the first interactive window, which
    counts as step 1; with ``from_start`` it is the settling time measured
    from simulation time zero.  ``None`` if the estimate never settles or,
    in the default mode, no window was interactive.
    """
    first = next((rec for rec in records if rec.interactive), None)
    if first is None and not from_start:
        return None
    settled = None
    for rec in records:
        if not from_start and rec.sim_time < first.sim_time:
            continue
        if abs(rec.gamma_hat - truth) <= tol:
            if settled is None:
                settled = rec
        else:
            settled = None
    if settled is None:
        return None
    if from_start:
        return settled.sim_time / dt
    return (settled.sim_time - first.sim_time) / dt + 1.0


BELIEF_COLUMNS = ("sim_time", "gamma_hat", "weight_entropy", "window_start", "window_end",
                  "interactive")


def write_belief_trace(records: Sequence[BeliefRecord], path) -> None:
    with open(path, "w") as f:
        f.write("\t".join(BELIEF_COLUMNS) + "\n")
        for rec in records:
            f.write("\t".join(repr(float(getattr(rec, c))) for c in BELIEF_COLUMNS) + "\n")


def read_belief_trace(path) -> list[BeliefRecord]:
    with open(path) as f:
        header = f.readline().rstrip("\n").split("\t")
        if tuple(header) != BELIEF_COLUMNS:
            raise ValueError(f"unexpected belief trace header {header}")
        out = []
        for line in f:
            if line.strip():
                *vals, flag = (float(x) for x in line.rstrip("\n").split("\t"))
                out.append(BeliefRecord(*vals, bool(flag)))
        return out

"""Prediction-heuristic Monte Carlo tree search over the Stackelberg game tree.

The tree alternates ego and opponent decisions, ego first.  An ego node at
depth ``2t`` holds the joint state ``x_t`` and ``t`` actions per agent; its
children are opponent nodes that add the ego action for step ``t`` without
moving the state; their children step both agents to ``x_{t+1}``.  Nodes at
depth ``2N`` are terminal.

Selection uses the confidence-weighted "searching" rewards ``Qs`` while plan
extraction uses the unweighted totals ``Q``.  With the heuristic switched off
every weight is 1 and the search reduces to plain UCT.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .prediction import PredictionSet, confidence_weight, containing
from .reward import RewardParams, joint_payoff
from .scenario import (AgentState, JointState, Scenario, advance, point_unsafe,
                       rollout_joint, segment_unsafe)

EGO, OPP, TERMINAL = "ego", "opponent", "terminal"
_JERK_EPS = 1e-9


class RefusePlanning(RuntimeError):
    """The planner cannot produce a plan from the given state."""


@dataclass
class SearchConfig:
    iterations: int = 1000
    exploration_c: float = 1.0 / math.sqrt(2.0)
    seed: int = 0
    heuristic: bool = True
    rollout: str = "heuristic"   # or "uniform"
    stats_stride: int = 100      # 0 disables the reward curve
    weight_all_nodes: bool = False
    initial_accel: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.exploration_c < 0:
            raise ValueError("exploration_c must be >= 0")
        if self.rollout not in ("heuristic", "uniform"):
            raise ValueError(f"unknown rollout policy {self.rollout!r}")

    @classmethod
    def general(cls, **kw) -> "SearchConfig":
        """Plain UCT settings: no confidence weights, unguided roll-outs."""
        kw.setdefault("heuristic", False)
        kw.setdefault("rollout", "uniform")
        return cls(**kw)

    def to_document(self) -> dict:
        return {"iterations": self.iterations, "exploration_c": self.exploration_c,
                "seed": self.seed, "heuristic": "on" if self.heuristic else "off",
                "rollout": self.rollout, "stats_stride": self.stats_stride}


class GameNode:
    __slots__ = ("kind", "depth", "t", "se", "ve", "so", "vo", "U_E", "U_O", "parent",
                 "children", "untried", "C", "Q_E", "Q_O", "Qs_E", "Qs_O", "w_conf",
                 "dead", "feats", "payoff")

    def __init__(self, kind, depth, t, se, ve, so, vo, U_E, U_O, parent, untried, feats):
        self.kind = kind
        self.depth = depth
        self.t = t
        self.se, self.ve, self.so, self.vo = se, ve, so, vo
        self.U_E = U_E   # tuples of action indices
        self.U_O = U_O
        self.parent = parent
        self.children: dict[int, GameNode] = {}
        self.untried = untried
        self.C = 0
        self.Q_E = self.Q_O = self.Qs_E = self.Qs_O = 0.0
        self.w_conf = 1.0
        self.dead = False
        # summed (comfort_E, efficiency_E, comfort_O, efficiency_O) up to x_t
        self.feats = feats
        self.payoff = None

    @property
    def state(self) -> JointState:
        return JointState(AgentState(self.se, self.ve), AgentState(self.so, self.vo), self.t)

    @property
    def terminal(self) -> bool:
        return self.kind == TERMINAL

    def iter_nodes(self):
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(n.children.values())

    def __repr__(self):
        return f"GameNode({self.kind}, depth={self.depth}, C={self.C}, U_E={self.U_E}, U_O={self.U_O})"


@dataclass
class SearchStats:
    # (v_max, v_other) for depth 1..2N
    depth_visits: list[tuple[int, int]] = field(default_factory=list)
    max_depth: int = 0
    node_count: int = 0
    # (iteration, extracted ego reward, extracted opponent reward)
    curve: list[tuple[int, float, float]] = field(default_factory=list)
    iterations: int = 0

    def ratio(self, depth: int) -> float:
        v_max, v_other = self.depth_visits[depth - 1]
        return v_max / max(v_other, 1)


@dataclass
class PlanResult:
    ego_actions: tuple[float, ...]
    opp_actions: tuple[float, ...]
    # full-horizon sequences: the extracted prefix held at zero acceleration
    ego_completed: tuple[float, ...]
    opp_completed: tuple[float, ...]
    trajectory: list[JointState]
    rewards: tuple[float, float]
    depth: int
    stats: SearchStats | None = None

    @property
    def complete(self) -> bool:
        return len(self.ego_actions) == len(self.ego_completed) == len(self.opp_actions)


def ucb_score(q_sum: float, visits: int, parent_visits: int, c: float, scale: float = 1.0) -> float:
    """Mean reward (divided by ``scale``) plus the UCT exploration bonus."""
    return q_sum / (visits * scale) + c * math.sqrt(2.0 * math.log(parent_visits) / visits)


class PredictionHeuristicMCTS:
    """One search tree.  Not safe to mutate from several threads."""

    def __init__(self, x0: JointState, preds: PredictionSet | None, scenario: Scenario,
                 ego_params: RewardParams, opp_params: RewardParams, config: SearchConfig):
        if (ego_params.alpha, ego_params.beta) != (opp_params.alpha, opp_params.beta):
            raise ValueError("both agents must share alpha and beta")
        guided = config.heuristic or config.rollout == "heuristic"
        if guided and preds is None:
            raise ValueError("the prediction heuristic needs a PredictionSet")
        if guided and preds.horizon < scenario.horizon:
            raise ValueError(f"prediction horizon {preds.horizon} < planning horizon {scenario.horizon}")
        if x0.overspeed or point_unsafe(x0.ego.s, x0.opp.s, scenario):
            raise RefusePlanning("initial state is already unsafe")
        self.x0 = x0
        self.preds = preds
        self.scenario = scenario
        self.ego_params, self.opp_params = ego_params, opp_params
        self.config = config
        self.rng = random.Random(config.seed)
        self.N = scenario.horizon
        self.acc = scenario.actions.accelerations
        self.n_act = len(self.acc)
        self.alpha, self.beta = ego_params.alpha, ego_params.beta
        self.comfort = [math.exp(-self.alpha * a * a) for a in self.acc]
        self.rmax_E = ego_params.max_reward(self.N) or 1.0
        self.rmax_O = opp_params.max_reward(self.N) or 1.0
        j = scenario.jerk_comfort
        self.jerk_ok = [[k for k, b in enumerate(self.acc) if abs(b - a) <= j + _JERK_EPS]
                        for a in self.acc]
        self.seam = [self._feasible_from(a) for a in config.initial_accel]
        if preds is not None:
            self.bounds = [[(p - math.sqrt(preds.rho * v), p + math.sqrt(preds.rho * v))
                            for p, v in zip(tr.points, tr.variances)] for tr in preds.trajectories]
            self.probs = [tr.probability for tr in preds.trajectories]
        # (trajectory, step, s_opp, v_opp, last action) -> actions that keep
        # every remaining opponent position inside that trajectory's ranges
        self._inside_memo: dict[tuple, tuple[int, ...]] = {}
        self.iterations = 0
        self.curve: list[tuple[int, float, float]] = []
        self.root = GameNode(EGO, 0, 0, x0.ego.s, x0.ego.v, x0.opp.s, x0.opp.v, (), (), None,
                             list(range(self.n_act)), (0.0, 0.0, 0.0, 0.0))

    def _feasible_from(self, a_prev: float) -> list[int]:
        ok = [k for k, b in enumerate(self.acc) if abs(b - a_prev) <= self.scenario.jerk_comfort + _JERK_EPS]
        if ok:
            return ok
        # measured acceleration far outside the set: nearest action only
        return [min(range(self.n_act), key=lambda k: abs(self.acc[k] - a_prev))]

    # ------------------------------------------------------------------
    # tree construction
    # ------------------------------------------------------------------

    def _weight(self, kind, t, so) -> float:
        if not self.config.heuristic or t == 0:
            return 1.0
        if kind == OPP and not self.config.weight_all_nodes:
            return 1.0
        return confidence_weight(so, t, self.preds)

    def _make_child(self, node: GameNode, i: int) -> GameNode | None:
        """Child reached by action ``i``; ``None`` if its prefix is unsafe."""
        if node.kind == EGO:
            child = GameNode(OPP, node.depth + 1, node.t, node.se, node.ve, node.so, node.vo,
                             node.U_E + (i,), node.U_O, node, list(range(self.n_act)), node.feats)
        else:
            sc = self.scenario
            pe, po, dt = sc.ego_path, sc.opp_path, sc.dt
            ie = node.U_E[-1]
            se, ve, fe = advance(node.se, node.ve, self.acc[ie], dt, pe.l_ref, pe.v_max)
            so, vo, fo = advance(node.so, node.vo, self.acc[i], dt, po.l_ref, po.v_max)
            if fe or fo or segment_unsafe(node.se, se, node.so, so, sc) or point_unsafe(se, so, sc):
                return None
            t = node.t + 1
            cE, eE, cO, eO = node.feats
            feats = (cE + self.comfort[ie], eE + 1.0 - math.exp(-self.beta * ve * ve),
                     cO + self.comfort[i], eO + 1.0 - math.exp(-self.beta * vo * vo))
            terminal = t == self.N
            child = GameNode(TERMINAL if terminal else EGO, node.depth + 1, t, se, ve, so, vo,
                             node.U_E, node.U_O + (i,), node, [] if terminal else list(range(self.n_act)),
                             feats)
            if terminal:
                child.payoff = self._payoff(feats)
        child.w_conf = self._weight(child.kind, child.t, child.so)
        return child

    def _expand(self, node: GameNode) -> GameNode | None:
        untried = node.untried
        while untried:
            i = untried.pop(self.rng.randrange(len(untried)))
            child = self._make_child(node, i)
            if child is not None:
                node.children[i] = child
                return child
        return None

    def _best_child(self, node: GameNode) -> GameNode | None:
        ego = node.kind == EGO
        rmax = self.rmax_E if ego else self.rmax_O
        c = self.config.exploration_c
        two_ln = 2.0 * math.log(node.C)
        best, best_score, best_i = None, -math.inf, -1
        for i, ch in node.children.items():
            if ch.dead:
                continue
            q = ch.Qs_E if ego else ch.Qs_O
            score = q / (ch.C * rmax) + c * math.sqrt(two_ln / ch.C)
            if score > best_score or (score == best_score and i < best_i):
                best, best_score, best_i = ch, score, i
        return best

    def selection(self, node: GameNode | None = None) -> GameNode:
        """Descend by UCT on searching rewards; expand the first node that
        still has untried actions.  Nodes whose expansions are all unsafe are
        marked dead and the descent restarts from the root."""
        root = self.root if node is None else node
        node = root
        while node.kind != TERMINAL:
            if node.untried:
                child = self._expand(node)
                if child is not None:
                    return child
            nxt = self._best_child(node)
            if nxt is None:
                node.dead = True
                if node is root:
                    raise RefusePlanning("every action from the root leads to an unsafe state")
                node = root
                continue
            node = nxt
        return node

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def _payoff(self, feats) -> tuple[float, float]:
        cE, eE, cO, eO = feats
        pE, pO = self.ego_params, self.opp_params
        egoE_E = pE.theta[0] * cE + pE.theta[1] * eE
        egoO_E = pE.theta[0] * cO + pE.theta[1] * eO
        egoE_O = pO.theta[0] * cE + pO.theta[1] * eE
        egoO_O = pO.theta[0] * cO + pO.theta[1] * eO
        return (pE.gamma * egoE_E + (1.0 - pE.gamma) * egoO_E,
                pO.gamma * egoO_O + (1.0 - pO.gamma) * egoE_O)

    def _governing(self, t: int, so: float) -> int | None:
        if t == 0:
            # the current opponent state is known exactly; every prediction
            # starts from it
            cand = list(range(len(self.probs)))
        else:
            cand = containing(so, t, self.preds)
        if not cand:
            return None
        weights = [self.probs[i] for i in cand]
        if sum(weights) <= 0:
            return self.rng.choice(cand)
        return self.rng.choices(cand, weights)[0]

    def _keep_inside(self, g: int, tau: int, so: float, vo: float, last: int | None) -> tuple[int, ...]:
        """Jerk-feasible opponent actions at step ``tau`` from which the rest
        of the horizon can stay inside trajectory ``g``'s ranges."""
        key = (g, tau, so, vo, last)
        hit = self._inside_memo.get(key)
        if hit is not None:
            return hit
        po, dt = self.scenario.opp_path, self.scenario.dt
        lo, hi = self.bounds[g][tau]
        good = []
        for k in (self.jerk_ok[last] if last is not None else self.seam[1]):
            s1, v1, over = advance(so, vo, self.acc[k], dt, po.l_ref, po.v_max)
            if over or not lo <= s1 <= hi:
                continue
            if tau + 1 == self.N or self._keep_inside(g, tau + 1, s1, v1, k):
                good.append(k)
        out = tuple(good)
        self._inside_memo[key] = out
        return out

    def rollout(self, leaf: GameNode):
        """Complete both sequences to the horizon.

        Returns ``(final JointState, U_E, U_O, unsafe)`` with index tuples.
        Terminal leaves are returned as stored.
        """
        if leaf.kind == TERMINAL:
            return leaf.state, leaf.U_E, leaf.U_O, False
        return self._simulate(leaf)[:4]

    def _simulate(self, leaf: GameNode):
        sc = self.scenario
        pe, po, dt = sc.ego_path, sc.opp_path, sc.dt
        acc, rng, jerk_ok = self.acc, self.rng, self.jerk_ok
        UE, UO = list(leaf.U_E), list(leaf.U_O)
        se, ve, so, vo = leaf.se, leaf.ve, leaf.so, leaf.vo
        t = leaf.t
        gov = self._governing(t, so) if self.config.rollout == "heuristic" else None
        cE, eE, cO, eO = leaf.feats
        unsafe = False
        beta = self.beta
        for tau in range(t, self.N):
            if len(UE) == tau:
                opts = jerk_ok[UE[-1]] if UE else self.seam[0]
                UE.append(opts[rng.randrange(len(opts))] if len(opts) > 1 else opts[0])
            opts = jerk_ok[UO[-1]] if UO else self.seam[1]
            if gov is not None:
                keep = self._keep_inside(gov, tau, so, vo, UO[-1] if UO else None)
                if keep:
                    opts = keep
                else:
                    lo, hi = self.bounds[gov][tau]
                    inside = [k for k in opts
                              if lo <= advance(so, vo, acc[k], dt, po.l_ref, po.v_max)[0] <= hi]
                    if inside:
                        opts = inside
            io = opts[rng.randrange(len(opts))] if len(opts) > 1 else opts[0]
            UO.append(io)
            ie = UE[tau]
            se1, ve, fe = advance(se, ve, acc[ie], dt, pe.l_ref, pe.v_max)
            so1, vo, fo = advance(so, vo, acc[io], dt, po.l_ref, po.v_max)
            if not unsafe and (fe or fo or segment_unsafe(se, se1, so, so1, sc)):
                unsafe = True
            se, so = se1, so1
            cE += self.comfort[ie]
            eE += 1.0 - math.exp(-beta * ve * ve)
            cO += self.comfort[io]
            eO += 1.0 - math.exp(-beta * vo * vo)
        if not unsafe and point_unsafe(se, so, sc):
            unsafe = True
        final = JointState(AgentState(se, ve), AgentState(so, vo), self.N)
        return final, tuple(UE), tuple(UO), unsafe, (cE, eE, cO, eO)

    def evaluate(self, leaf: GameNode) -> tuple[float, float]:
        if leaf.kind == TERMINAL:
            return leaf.payoff
        _, _, _, unsafe, feats = self._simulate(leaf)
        if unsafe:
            return 0.0, 0.0
        return self._payoff(feats)

    @staticmethod
    def backpropagate(leaf: GameNode, q_E: float, q_O: float) -> None:
        node = leaf
        while node is not None:
            node.C += 1
            node.Q_E += q_E
            node.Q_O += q_O
            w = node.w_conf
            node.Qs_E += w * q_E
            node.Qs_O += w * q_O
            node = node.parent

    # ------------------------------------------------------------------
    # driver
    # ------------------------------------------------------------------

    def run(self, iterations: int | None = None) -> GameNode:
        n = self.config.iterations if iterations is None else iterations
        stride = self.config.stats_stride
        for _ in range(n):
            leaf = self.selection()
            q_E, q_O = self.evaluate(leaf)
            self.backpropagate(leaf, q_E, q_O)
            self.iterations += 1
            if stride and self.iterations % stride == 0:
                plan = self.extract()
                self.curve.append((self.iterations, plan.rewards[0], plan.rewards[1]))
        return self.root

    def extract(self) -> PlanResult:
        return extract_plan(self.root, self.scenario, self.ego_params, self.opp_params)

    def stats(self) -> SearchStats:
        st = collect_stats(self.root, self.N)
        st.curve = list(self.curve)
        st.iterations = self.iterations
        return st


def search(x0: JointState, preds: PredictionSet | None, scenario: Scenario,
           ego_params: RewardParams, opp_params: RewardParams,
           config: SearchConfig) -> tuple[GameNode, SearchStats]:
    """Run ``config.iterations`` iterations and return the root and statistics."""
    engine = PredictionHeuristicMCTS(x0, preds, scenario, ego_params, opp_params, config)
    engine.run()
    return engine.root, engine.stats()


def plan(x0, preds, scenario, ego_params, opp_params, config) -> PlanResult:
    engine = PredictionHeuristicMCTS(x0, preds, scenario, ego_params, opp_params, config)
    engine.run()
    result = engine.extract()
    result.stats = engine.stats()
    return result


def extract_plan(root: GameNode, scenario: Scenario, ego_params: RewardParams,
                 opp_params: RewardParams) -> PlanResult:
    """Greedy descent by unweighted mean reward of the deciding agent."""
    node = root
    while node.kind != TERMINAL:
        ego = node.kind == EGO
        best, best_val, best_i = None, -math.inf, -1
        live = [(i, ch) for i, ch in node.children.items() if ch.C > 0 and not ch.dead]
        if not live:
            live = [(i, ch) for i, ch in node.children.items() if ch.C > 0]
        for i, ch in live:
            val = (ch.Q_E if ego else ch.Q_O) / ch.C
            if val > best_val or (val == best_val and i < best_i):
                best, best_val, best_i = ch, val, i
        if best is None:
            break
        node = best
    if node is root:
        raise RefusePlanning("the root has no visited children")
    acc = scenario.actions.accelerations
    UE = tuple(acc[i] for i in node.U_E)
    UO = tuple(acc[i] for i in node.U_O)
    N = scenario.horizon
    UE_full = UE + (0.0,) * (N - len(UE))
    UO_full = UO + (0.0,) * (N - len(UO))
    x0 = root.state
    rewards = joint_payoff(x0, UE_full, UO_full, ego_params, opp_params, scenario)
    traj = rollout_joint(x0, UE_full, UO_full, scenario)
    return PlanResult(UE, UO, UE_full, UO_full, traj, rewards, node.depth)


def collect_stats(root: GameNode, horizon: int | None = None) -> SearchStats:
    per_depth: dict[int, list[int]] = {}
    count = 0
    max_depth = 0
    for n in root.iter_nodes():
        count += 1
        if n.depth > 0:
            per_depth.setdefault(n.depth, []).append(n.C)
        if n.C >= 1:
            max_depth = max(max_depth, n.depth)
    deepest = 2 * horizon if horizon is not None else max(per_depth, default=0)
    visits = []
    for d in range(1, deepest + 1):
        cs = sorted(per_depth.get(d, []), reverse=True)
        v_max = cs[0] if cs else 0
        v_other = cs[1] if len(cs) > 1 else 0
        visits.append((v_max, v_other))
    return SearchStats(visits, max_depth, count)


def tree_signature(root: GameNode) -> list[tuple]:
    """Canonical node-by-node description, for reduction checks."""
    out = []
    for n in root.iter_nodes():
        out.append((n.depth, n.U_E, n.U_O, n.C, n.Q_E, n.Q_O, n.Qs_E, n.Qs_O, n.dead))
    out.sort(key=lambda r: (r[0], r[1], r[2]))
    return out

"""Command-line entry point: ``socialmcts {plan,benchmark,simulate,infer}``.

Exit codes: 0 success, 2 configuration error, 3 infeasible instance,
4 planner refusal.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor

import jsonschema
import numpy as np

from . import __version__
from .baselines import (InfeasibleInstance, alternating_best_response, exhaustive_stackelberg,
                        general_mcts, proposed_mcts, subgame_perfect)
from .inference import InfeasibleWindow, replay, write_belief_trace
from .prediction import load_predictions, synthetic_predict
from .reward import RewardParams
from .scenario import (Scenario, ScenarioError, _as_document, load_scenario, make_synthetic_scenario,
                       reference_scenario, scenario_to_document)
from .search import RefusePlanning, SearchConfig, plan
from .simulator import (BEHAVIOR_CONFIGS, SimConfig, interaction_scenario, read_trace,
                        run_closed_loop, write_sidecars)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_REFUSED = 0, 2, 3, 4
SOLVERS = ("proposed", "general", "abr", "oracle", "subgame_perfect")
_BUDGETLESS = ("abr", "oracle", "subgame_perfect")

log = logging.getLogger("socialmcts")
_ARGV: list[str] = []


def derive_seed(root: int, *path: int) -> int:
    """Deterministic child seed of ``root`` for one consumer."""
    return int(np.random.SeedSequence([root, *path]).generate_state(1)[0])


# --------------------------------------------------------------------------
# scenario sources
# --------------------------------------------------------------------------

def builtin_scenarios() -> dict[str, tuple[Scenario, tuple[float, ...] | None]]:
    ref, gt = reference_scenario()
    small, small_gt = make_synthetic_scenario(17, horizon=2, actions=(-2.0, 0.0, 2.0))
    return {"reference": (ref, gt), "interaction": (interaction_scenario(), None),
            "small": (small, small_gt)}


def scenario_document(sc: Scenario, ground_truth=None, rewards=None) -> dict:
    doc = scenario_to_document(sc)
    if ground_truth is not None:
        doc["ground_truth"] = {"opp": [float(x) for x in ground_truth]}
    if rewards is not None:
        doc["rewards"] = {k: v.to_document() for k, v in rewards.items()}
    return doc


def resolve_scenario(spec: str):
    """Built-in name or scenario file; returns ``(scenario, ground_truth, rewards, doc)``."""
    named = builtin_scenarios()
    if spec in named:
        sc, gt = named[spec]
        return sc, gt, {}, scenario_document(sc, gt)
    if not os.path.exists(spec):
        raise ScenarioError(f"scenario {spec!r} is neither a file nor one of {sorted(named)}")
    doc = _as_document(spec)
    sc = load_scenario(doc)
    gt = None
    if "ground_truth" in doc:
        pts = doc["ground_truth"].get("opp")
        if not isinstance(pts, list) or len(pts) < sc.horizon:
            raise ScenarioError(f"ground_truth.opp: need at least {sc.horizon} positions")
        gt = tuple(float(x) for x in pts)
    rewards = {}
    for agent, sub in doc.get("rewards", {}).items():
        if agent not in ("ego", "opp"):
            raise ScenarioError(f"rewards: unknown agent {agent!r}")
        try:
            rewards[agent] = RewardParams.from_document(sub)
        except (ValueError, TypeError) as e:
            raise ScenarioError(f"rewards.{agent}: {e}") from None
    return sc, gt, rewards, doc


def _predictions(args, sc: Scenario, gt, seed: int):
    if args.predictions:
        return load_predictions(args.predictions, horizon=sc.horizon)
    if gt is None:
        raise ScenarioError("--synthetic-sigma needs a scenario with ground_truth.opp")
    return synthetic_predict(gt[:sc.horizon], args.synthetic_sigma, seed=seed)


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------

def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(inputs: dict) -> str:
    blob = json.dumps(inputs, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(out_dir, command: str, inputs: dict, seeds: dict, outputs: dict) -> str:
    manifest = {
        "command": command,
        "argv": list(_ARGV),
        "config_digest": config_digest(inputs),
        "inputs": inputs,
        "seeds": seeds,
        "outputs": {k: {"path": os.path.relpath(p, out_dir), "sha256": _sha256_file(p)}
                    for k, p in outputs.items()},
        "versions": {"socialmcts": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _dump(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)


def _write_table(path, header, rows) -> None:
    with open(path, "w") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _search_config(args, seed: int) -> SearchConfig:
    return SearchConfig(iterations=args.iterations, exploration_c=args.exploration_c, seed=seed,
                        heuristic=args.heuristic == "on",
                        rollout="heuristic" if args.heuristic == "on" else "uniform",
                        stats_stride=args.stats_stride)


def _params(rewards: dict, args):
    pE = rewards.get("ego", RewardParams())
    pO = rewards.get("opp", RewardParams())
    if getattr(args, "gamma_ego", None) is not None:
        pE = pE.with_gamma(args.gamma_ego)
    if getattr(args, "gamma_opp", None) is not None:
        pO = pO.with_gamma(args.gamma_opp)
    return pE, pO


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_plan(args) -> int:
    sc, gt, rewards, doc = resolve_scenario(args.scenario)
    pE, pO = _params(rewards, args)
    os.makedirs(args.out_dir, exist_ok=True)
    seeds = {"root": args.seed, "search": args.seed, "predictions": derive_seed(args.seed, 0)}
    outputs = {}
    solver = args.solver
    if solver in ("proposed", "general"):
        heuristic = args.heuristic if solver == "proposed" else "off"
        cfg = _search_config(argparse.Namespace(**{**vars(args), "heuristic": heuristic}), args.seed)
        guided = cfg.heuristic or cfg.rollout == "heuristic"
        preds = _predictions(args, sc, gt, seeds["predictions"]) if guided else None
        result = plan(sc.init, preds, sc, pE, pO, cfg)
        doc_out = {"solver": solver, "ego_actions": list(result.ego_actions),
                   "opp_actions": list(result.opp_actions),
                   "ego_completed": list(result.ego_completed),
                   "opp_completed": list(result.opp_completed),
                   "rewards": list(result.rewards), "depth": result.depth,
                   "complete": result.complete,
                   "trajectory": [[x.ego.s, x.ego.v, x.opp.s, x.opp.v] for x in result.trajectory],
                   "search": cfg.to_document()}
        stats = result.stats
        outputs["stats"] = os.path.join(args.out_dir, "stats.tsv")
        _write_table(outputs["stats"], ("depth", "v_max", "v_other"),
                     [(d, vm, vo) for d, (vm, vo) in enumerate(stats.depth_visits, start=1)])
        outputs["curve"] = os.path.join(args.out_dir, "curve.tsv")
        _write_table(outputs["curve"], ("iteration", "extracted_reward_ego", "extracted_reward_opp"),
                     stats.curve)
        doc_out["max_depth"] = stats.max_depth
        doc_out["node_count"] = stats.node_count
    else:
        outcome = _run_budgetless(solver, sc, pE, pO, args.seed)
        doc_out = outcome.to_document()
        doc_out.pop("wall_time")
    outputs["plan"] = os.path.join(args.out_dir, "plan.json")
    _dump(doc_out, outputs["plan"])
    inputs = {"scenario": doc, "solver": solver, "iterations": args.iterations,
              "exploration_c": args.exploration_c, "heuristic": args.heuristic,
              "predictions": _as_document(args.predictions) if args.predictions else None,
              "synthetic_sigma": args.synthetic_sigma,
              "rewards": {"ego": pE.to_document(), "opp": pO.to_document()}}
    write_manifest(args.out_dir, "plan", inputs, seeds, outputs)
    print(json.dumps({"rewards": doc_out["rewards"], "ego_actions": doc_out["ego_actions"]}))
    return EXIT_OK


def _run_budgetless(solver, sc, pE, pO, seed):
    if solver == "abr":
        return alternating_best_response(sc.init, sc, pE, pO, seed=seed)
    if solver == "oracle":
        return exhaustive_stackelberg(sc.init, sc, pE, pO)
    return subgame_perfect(sc.init, sc, pE, pO)


def _benchmark_job(job):
    """One (scenario, solver, budget, seed) run; failures become rows."""
    name, sc, gt, pE, pO, solver, budget, seed, pred_seed, sigma, pred_doc, c = job
    try:
        if solver in _BUDGETLESS:
            out = _run_budgetless(solver, sc, pE, pO, seed)
            depth = None
        else:
            cfg = SearchConfig(iterations=budget, exploration_c=c, seed=seed, stats_stride=0)
            if solver == "general":
                out = general_mcts(sc.init, sc, pE, pO, cfg)
            else:
                preds = (load_predictions(pred_doc, sc.horizon) if pred_doc is not None
                         else synthetic_predict(gt[:sc.horizon], sigma, seed=pred_seed))
                out = proposed_mcts(sc.init, preds, sc, pE, pO, cfg)
            depth = out.plan.stats.max_depth
        return {"ok": True, "reward": out.rewards[0], "wall": out.wall_time, "depth": depth}
    except (RefusePlanning, InfeasibleInstance, ScenarioError, ValueError) as e:
        return {"ok": False, "error": f"{type(e).__name__}: {e}"}


def cmd_benchmark(args) -> int:
    solvers = [s.strip() for s in args.solver.split(",") if s.strip()]
    bad = [s for s in solvers if s not in SOLVERS]
    if not solvers or bad:
        raise ScenarioError(f"--solver: unknown solver(s) {bad}; choose from {SOLVERS}")
    budgets = [int(b) for b in args.budgets.split(",")] if args.budgets else [args.iterations]
    if any(b < 1 for b in budgets):
        raise ScenarioError("--budgets: must be positive integers")
    corpus = [resolve_scenario(s) for s in args.scenario]
    pred_doc = _as_document(args.predictions) if args.predictions else None
    pred_seed = derive_seed(args.seed, 0)
    jobs, keys = [], []
    for (sc, gt, rewards, _), spec in zip(corpus, args.scenario):
        pE, pO = _params(rewards, args)
        if "proposed" in solvers and pred_doc is None and gt is None:
            raise ScenarioError(f"{spec}: the proposed solver needs predictions or ground_truth.opp")
        for solver in solvers:
            for budget in ([None] if solver in _BUDGETLESS else budgets):
                for k in range(args.seeds):
                    seed = args.seed + k
                    jobs.append((spec, sc, gt, pE, pO, solver, budget, seed, pred_seed,
                                 args.synthetic_sigma, pred_doc, args.exploration_c))
                    keys.append((solver, budget))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_benchmark_job, jobs))
    else:
        results = [_benchmark_job(j) for j in jobs]
    rows = []
    for solver in solvers:
        for budget in ([None] if solver in _BUDGETLESS else budgets):
            rs = [r for key, r in zip(keys, results) if key == (solver, budget)]
            ok = [r for r in rs if r["ok"]]
            rewards = [r["reward"] for r in ok]
            depths = [r["depth"] for r in ok if r["depth"] is not None]
            errors = sorted({r["error"] for r in rs if not r["ok"]})
            rows.append((solver, "final" if budget is None else budget, len(ok),
                         statistics.fmean(rewards) if rewards else None,
                         statistics.pstdev(rewards) if rewards else None,
                         statistics.fmean(r["wall"] for r in ok) if ok else None,
                         statistics.fmean(depths) if depths else None,
                         len(rs) - len(ok), "; ".join(errors)))
    os.makedirs(args.out_dir, exist_ok=True)
    table = os.path.join(args.out_dir, "benchmark.tsv")
    _write_table(table, ("solver", "budget", "runs", "mean_reward_ego", "std_reward_ego",
                         "mean_wall_time", "mean_max_depth", "failures", "errors"), rows)
    inputs = {"scenarios": [c[3] for c in corpus], "solvers": solvers, "budgets": budgets,
              "seeds": args.seeds, "synthetic_sigma": args.synthetic_sigma,
              "predictions": pred_doc, "exploration_c": args.exploration_c}
    write_manifest(args.out_dir, "benchmark", inputs,
                   {"root": args.seed, "predictions": pred_seed,
                    "search": [args.seed + k for k in range(args.seeds)]},
                   {"table": table})
    for row in rows:
        print("\t".join(_cell(v) for v in row))
    return EXIT_OK


def cmd_simulate(args) -> int:
    doc = _as_document(args.config) if args.config else {}
    doc = dict(doc)
    scenario_spec = doc.pop("scenario", None)
    behavior = doc.pop("behavior", None) or args.behavior
    if behavior is not None and behavior not in BEHAVIOR_CONFIGS:
        raise ScenarioError(f"behavior: choose from {sorted(BEHAVIOR_CONFIGS)}")
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.duration is not None:
        doc["duration"] = args.duration
    if args.iterations_given:
        doc["iterations"] = args.iterations
    try:
        base = SimConfig.from_document(doc)
    except TypeError as e:
        raise ScenarioError(f"simulation config: {e}") from None
    if behavior is not None:
        g_e, g_o = BEHAVIOR_CONFIGS[behavior]
        base = SimConfig.from_document({**base.to_document(),
                                        "ego_params": base.ego_params.with_gamma(g_e).to_document(),
                                        "opp_params": base.opp_params.with_gamma(g_o).to_document()})
    if args.scenario:
        scenario_spec = args.scenario
    if isinstance(scenario_spec, dict):
        sc, scen_doc = load_scenario(scenario_spec), scenario_spec
    else:
        sc, _, _, scen_doc = resolve_scenario(scenario_spec or "interaction")
    trace = run_closed_loop(sc, base)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = write_sidecars(trace, args.out_dir)
    outputs["scenario"] = os.path.join(args.out_dir, "sim_scenario.json")
    _dump(scen_doc, outputs["scenario"])
    outputs["config"] = os.path.join(args.out_dir, "sim_config.json")
    _dump(base.to_document(), outputs["config"])
    write_manifest(args.out_dir, "simulate", {"scenario": scen_doc, "config": base.to_document()},
                   {"root": base.seed}, outputs)
    with open(outputs["metrics"]) as f:
        print(f.read().strip())
    return EXIT_REFUSED if trace.failure else EXIT_OK


def cmd_infer(args) -> int:
    sc, _, rewards, scen_doc = resolve_scenario(args.scenario)
    if args.rewards:
        try:
            params = RewardParams.from_document(_as_document(args.rewards))
        except (ValueError, TypeError) as e:
            raise ScenarioError(f"rewards: {e}") from None
    else:
        params = rewards.get("opp", RewardParams())
    times, states, _, _ = read_trace(args.trace)
    if len(times) >= 2:
        dt_sim = times[1] - times[0]
        stride = args.stride * dt_sim / sc.dt
    else:
        stride = 1.0
    records = replay(times, states, sc, params, r=args.window, stride=stride,
                     interactive_only=not args.all_windows)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "beliefs.tsv")
    write_belief_trace(records, out)
    write_manifest(args.out_dir, "infer",
                   {"scenario": scen_doc, "trace_sha256": _sha256_file(args.trace),
                    "rewards": params.to_document(), "window": args.window, "stride": args.stride,
                    "all_windows": args.all_windows},
                   {"root": args.seed}, {"beliefs": out})
    final = records[-1].gamma_hat if records else None
    print(json.dumps({"updates": len(records), "final_gamma_hat": final}))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socialmcts", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def search_flags(q, scenario_nargs=None):
        q.add_argument("--scenario", required=True, nargs=scenario_nargs,
                       help="scenario file or built-in name (reference, interaction, small)")
        src = q.add_mutually_exclusive_group()
        src.add_argument("--predictions", help="prediction file")
        src.add_argument("--synthetic-sigma", type=float, default=0.4,
                         help="noise std (m) for predictions built from the scenario ground truth")
        q.add_argument("--iterations", type=_positive_int, default=30000)
        q.add_argument("--exploration-c", type=float, default=SearchConfig.exploration_c)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--gamma-ego", type=float)
        q.add_argument("--gamma-opp", type=float)
        q.add_argument("--out-dir", default="out")

    q = sub.add_parser("plan", help="plan once from a scenario")
    search_flags(q)
    q.add_argument("--heuristic", choices=("on", "off"), default="on")
    q.add_argument("--solver", choices=SOLVERS, default="proposed")
    q.add_argument("--stats-stride", type=int, default=100)
    q.set_defaults(func=cmd_plan)

    q = sub.add_parser("benchmark", help="compare solvers over seeds and budgets")
    search_flags(q, scenario_nargs="+")
    q.add_argument("--solver", default="proposed,general,abr",
                   help=f"comma-separated subset of {','.join(SOLVERS)}")
    q.add_argument("--budgets", help="comma-separated iteration budgets (default: --iterations)")
    q.add_argument("--seeds", type=_positive_int, default=10)
    q.add_argument("--jobs", type=_positive_int, default=1)
    q.set_defaults(func=cmd_benchmark)

    q = sub.add_parser("simulate", help="closed-loop two-agent simulation")
    q.add_argument("--config", help="simulation config file (JSON)")
    q.add_argument("--scenario", help="scenario file or built-in name (default: interaction)")
    q.add_argument("--behavior", choices=sorted(BEHAVIOR_CONFIGS))
    q.add_argument("--seed", type=int)
    q.add_argument("--duration", type=float)
    q.add_argument("--iterations", type=_positive_int)
    q.add_argument("--out-dir", default="out")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("infer", help="replay courtesy inference over a recorded trace")
    q.add_argument("--trace", required=True)
    q.add_argument("--scenario", required=True)
    q.add_argument("--rewards", help="opponent reward parameters (JSON file or string)")
    q.add_argument("--window", type=_positive_int, default=5)
    q.add_argument("--stride", type=_positive_int, default=1, help="sim steps between updates")
    q.add_argument("--all-windows", action="store_true",
                   help="also update on windows without interaction")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out-dir", default="out")
    q.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    _ARGV[:] = argv
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate":
        args.iterations_given = args.iterations is not None
    try:
        return args.func(args)
    except (InfeasibleInstance, InfeasibleWindow) as e:
        print(f"infeasible instance: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except RefusePlanning as e:
        print(f"planner refused: {e}", file=sys.stderr)
        return EXIT_REFUSED
    except (ScenarioError, jsonschema.ValidationError, json.JSONDecodeError, FileNotFoundError,
            ValueError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

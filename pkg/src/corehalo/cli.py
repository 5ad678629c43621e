"""Command-line entrypoint: config-driven experiment runs and a fast selftest."""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import bias, experiments
from .gossip import SpeedupConditionInputs, check_speedup_conditions
from .gridworlds import GridSpec, build_prop3_grid, build_wall_grid_16, square_partition
from .mdp import (
    StatePartition,
    averaged_bellman,
    bellman_optimality,
    build_successor_halos,
    check_block_closure,
    solve_q_star,
)
from .operators import averaged_apply, check_compatibility
from .pagerank import (
    SbmSpec,
    build_predecessor_halos,
    block_partition,
    delta_i,
    delta_i_bruteforce,
    pagerank_operator,
    pagerank_operator_instance,
    sbm_graph,
    solve_pagerank,
)
from .smartgrid import SarsaConfig

__all__ = ["main", "cmd_run", "cmd_selftest"]

EXIT_OK = 0
EXIT_UNKNOWN_EXPERIMENT = 2
EXIT_INVALID_CONFIG = 3
EXIT_DIVERGED = 4

EXPERIMENTS = ("speedup", "pagerank", "minigrid", "smartgrid", "prop3", "conditions")


class ConfigError(ValueError):
    pass


def load_default_config(experiment: str) -> dict:
    text = resources.files("corehalo.configs").joinpath(f"{experiment}.yaml").read_text()
    return yaml.safe_load(text)


def resolve_config(experiment: str, config_path, seed) -> dict:
    """Merge the checked-in defaults with a user config; unknown keys are errors."""
    cfg = load_default_config(experiment)
    if config_path is not None:
        loaded = yaml.safe_load(Path(config_path).read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config key: {sorted(unknown)[0]!r}")
        cfg.update(loaded)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def _run_experiment(experiment: str, cfg: dict, out_dir) -> int:
    if experiment == "speedup":
        summary = experiments.run_speedup_experiment(out_dir=out_dir, **cfg)
        return EXIT_DIVERGED if summary.diverged else EXIT_OK
    if experiment == "pagerank":
        cfg = dict(cfg)
        cfg["block_sizes"] = tuple(cfg["block_sizes"])
        result = experiments.run_pagerank_files(out_dir=out_dir, **cfg)
        if any(rec.diverged for rec in result.records.values()):
            return EXIT_DIVERGED
        return EXIT_OK
    if experiment == "minigrid":
        cfg = dict(cfg)
        cfg["ms"] = tuple(cfg["ms"])
        experiments.run_minigrid_experiment(out_dir=out_dir, **cfg)
        return EXIT_OK
    if experiment == "smartgrid":
        cfg = dict(cfg)
        system = cfg.pop("system")
        variants = tuple(cfg.pop("variants"))
        cfg["actions"] = tuple(cfg["actions"])
        experiments.run_smartgrid_experiment(system, variants, SarsaConfig(**cfg), out_dir=out_dir)
        return EXIT_OK
    if experiment == "prop3":
        cfg = dict(cfg)
        cfg["ms"] = tuple(cfg["ms"])
        cfg.pop("seed", None)
        experiments.run_prop3_experiment(out_dir=out_dir, **cfg)
        return EXIT_OK
    if experiment == "conditions":
        cfg = dict(cfg)
        cfg.pop("seed", None)
        experiments.run_conditions_experiment(out_dir=out_dir, **cfg)
        return EXIT_OK
    raise AssertionError(experiment)


def cmd_run(experiment: str, config_path, out_dir, seed, quiet: bool = False) -> int:
    if experiment not in EXPERIMENTS:
        print(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}",
              file=sys.stderr)
        return EXIT_UNKNOWN_EXPERIMENT
    try:
        cfg = resolve_config(experiment, config_path, seed)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    try:
        status = _run_experiment(experiment, cfg, out_dir)
    except (TypeError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    experiments.write_metadata(out_dir, experiment, cfg)
    if status == EXIT_DIVERGED:
        print("run diverged; partial records written", file=sys.stderr)
    elif not quiet:
        print(f"{experiment}: wrote artifacts to {out_dir}")
    return status


def _selftest_checks():
    """Fast deterministic invariant suite; yields (name, passed)."""
    rng = np.random.default_rng(0)

    # relaxation identity + compatibility on a small PageRank instance
    spec = SbmSpec(block_sizes=(10, 10, 10, 10), seed=1)
    g = sbm_graph(spec)
    p = block_partition(spec.block_sizes)
    ch = build_predecessor_halos(g, p)
    op = pagerank_operator_instance(g)
    x = rng.random(g.n)
    lhs = averaged_apply(op, ch, x)
    rhs = (1.0 - 1.0 / ch.m) * x + pagerank_operator(g, x) / ch.m
    yield "pagerank-relaxation-identity", float(np.max(np.abs(lhs - rhs))) <= 1e-12
    yield "pagerank-compatibility", check_compatibility(op, ch, trials=10) is None
    x_star = solve_pagerank(g)
    yield "pagerank-residual", float(np.sum(np.abs(pagerank_operator(g, x_star) - x_star))) <= 1e-12

    # relaxation identity for the Bellman instance with successor halos
    gspec = GridSpec(n=6, q=2, gamma=0.9)
    mdp = build_prop3_grid(gspec)
    sp = build_successor_halos(mdp, square_partition(6, 2))
    Q = rng.random((mdp.n_states, mdp.n_actions))
    lhs = averaged_bellman(mdp, sp, Q)
    rhs = (1.0 - 1.0 / sp.m) * Q + bellman_optimality(mdp, Q) / sp.m
    yield "bellman-relaxation-identity", float(np.max(np.abs(lhs - rhs))) <= 1e-12

    # contraction of the optimality backup
    Q2 = rng.random((mdp.n_states, mdp.n_actions))
    lhs_gap = np.max(np.abs(bellman_optimality(mdp, Q) - bellman_optimality(mdp, Q2)))
    yield "bellman-contraction", float(lhs_gap) <= mdp.gamma * float(np.max(np.abs(Q - Q2)))

    # closure checks: wall grid closed, connected-grid partition not closed
    wall_mdp, wall_sp, _ = build_wall_grid_16()
    yield "wall-grid-closure", check_block_closure(wall_mdp, wall_sp) is None
    yield "grid-partition-open", check_block_closure(mdp, square_partition(6, 2)) is not None

    # diameter closed forms versus brute force on tiny instances
    tiny_spec = SbmSpec(block_sizes=(3, 3), p_in=0.6, p_out=0.3, seed=2)
    tiny = sbm_graph(tiny_spec)
    tiny_p = block_partition((3, 3))
    ok = all(
        abs(delta_i(tiny, tiny_p, i) - delta_i_bruteforce(tiny, tiny_p, i)) <= 1e-12
        for i in range(tiny_p.m)
    )
    yield "pagerank-delta-bruteforce", ok
    chain = GridSpec(n=2, q=2, gamma=0.5)
    cm = build_prop3_grid(chain)
    csp = StatePartition(((0, 1), (2, 3)), 4)
    ok = all(
        abs(bias.mdp_delta_i(cm, csp, i) - bias.mdp_delta_bruteforce(cm, csp, i)) <= 1e-10
        for i in range(2)
    )
    yield "mdp-delta-bruteforce", ok

    # stepsize condition arithmetic; evaluate just inside the admissible
    # endpoint, where the single-agent coefficient equals one exactly
    probe = check_speedup_conditions(SpeedupConditionInputs(0.01, 0.01, 0.9, 1.0, 1.0, 4, 0.0))
    a1 = probe.alpha1_max * (1.0 - 1e-12)
    rep = check_speedup_conditions(SpeedupConditionInputs(a1, 0.01, 0.9, 1.0, 1.0, 4, 0.0))
    yield "stepsize-conditions", rep.sa_ok and rep.dsa_stepsize_ok and rep.rho_ok


def cmd_selftest(quiet: bool = False) -> int:
    failures = []
    for name, passed in _selftest_checks():
        if not quiet:
            print(f"{'PASS' if passed else 'FAIL'} {name}")
        if not passed:
            failures.append(name)
    if failures:
        print("selftest failures: " + ", ".join(failures), file=sys.stderr)
        return 1
    if not quiet:
        print("selftest: all checks passed")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="corehalo",
        description="Decentralized fixed-point experiments with core-halo decompositions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment end-to-end")
    run_p.add_argument("--experiment", required=True)
    run_p.add_argument("--config", default=None, help="YAML overriding the checked-in defaults")
    run_p.add_argument("--out", required=True, help="output directory for CSVs and metadata")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--quiet", action="store_true")

    self_p = sub.add_parser("selftest", help="run the fast invariant suite")
    self_p.add_argument("--quiet", action="store_true")

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.experiment, args.config, args.out, args.seed, args.quiet)
    return cmd_selftest(args.quiet)


if __name__ == "__main__":
    raise SystemExit(main())

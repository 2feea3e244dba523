"""Command-line entry point: ``planopt {gen-problems,train,evaluate,oracle-check}``."""
from __future__ import annotations

import argparse
import csv
import os
import sys

from .algorithms import UniformGenerator, evaluate
from .domain import create_problem_set, load_problem_set, save_problem_set
from .grid2d import parse_domain
from .oracles import run_oracle_suite
from .runs import (
    CheckpointMismatch,
    TrainConfig,
    cem_train,
    gc_train,
    git_describe,
    load_generator,
    save_generator,
    write_manifest,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3


class ConfigError(Exception):
    pass


def _domain(spec):
    try:
        return parse_domain(spec)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def default_workers():
    return max(1, min(os.cpu_count() or 1, 16))


def cmd_gen_problems(args):
    domain = _domain(args.domain)
    ps = create_problem_set(domain, args.split, args.seed, args.count)
    try:
        crc = save_problem_set(ps, args.out)
    except OSError as e:
        raise ConfigError(f"cannot write {args.out}: {e}") from None
    print(f"{domain.identifier} {args.split} seed={args.seed}: {len(ps)} instances, crc32={crc:08x}")
    return EXIT_OK


def cmd_train(args):
    domain = _domain(args.domain)
    try:
        config = TrainConfig(
            budget=args.budget, eval_interval=args.eval_interval, eval_samples=args.eval_samples,
            lr_gen=args.lr_gen, lr_critic=args.lr_critic, buffer_cap=args.buffer_cap,
            entropy_coeff=args.entropy_coeff, population=args.population, elite_frac=args.elite_frac,
            workers=args.workers, seed=args.seed,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    os.makedirs(args.out, exist_ok=True)
    verbose = 0 if args.quiet else 1
    try:
        if args.algo == "gc":
            est = gc_train(domain, config, args.out, verbose=verbose)
        elif args.algo == "cem":
            est = cem_train(domain, config, args.out, verbose=verbose)
        else:
            est = _uniform_run(domain, config, args.out)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    print(f"final (mean of last 5 checkpoints): {est.final_score_:.6f}")
    return EXIT_OK


def _uniform_run(domain, config, out):
    est = UniformGenerator(domain, random_state=config.seed).fit()
    test = domain.create_problem_set("test", config.seed)
    m, s, _ = evaluate(est, test, n=config.eval_samples, seed=config.seed, workers=config.workers)
    est.history_ = [{
        "planner_calls": 0, "wall_seconds": 0.0, "train_objective_mean": None,
        "eval_objective_mean": m, "eval_objective_std": s,
        "critic_loss": None, "generator_loss": None, "skipped_steps": 0,
    }]
    est.final_score_ = m
    write_metrics_csv(est.history_, os.path.join(out, "metrics.csv"))
    save_generator(est, os.path.join(out, "generator.popnn"))
    write_manifest(os.path.join(out, "manifest.txt"), {
        "domain": domain.identifier, "algo": "uniform", "seed": config.seed,
        "eval_samples": config.eval_samples, "final_report": repr(m), "planner_calls": 0,
        "git": git_describe(),
    })
    return est


def cmd_evaluate(args):
    try:
        est = load_generator(args.checkpoint)
        ps = load_problem_set(args.problems, domain=est.domain)
    except (CheckpointMismatch, ValueError, OSError) as e:
        raise ConfigError(str(e)) from None
    m, s, objs = evaluate(est, ps, seed=args.seed, workers=args.workers)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["instance", "objective"])
            for i, o in enumerate(objs):
                w.writerow([i, repr(float(o))])
    print(f"{est.domain.identifier} n={len(objs)} mean={m:.6f} std={s:.6f}")
    return EXIT_OK


def cmd_oracle_check(args):
    domain = _domain(args.domain)
    size = domain.size if domain.size % 2 else domain.size + 1
    results = run_oracle_suite(
        size=size, seeds=args.seeds, mc_pairs=args.mc_pairs, mc_runs=args.mc_runs,
        seed=args.seed, inject_tie_break_bug=args.inject_tie_break_bug,
    )
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<20} {r.seconds:8.3f}s  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def build_parser():
    p = argparse.ArgumentParser(prog="planopt", description="Planner optimization on grid-world domains.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-problems", help="write a problem-set file")
    g.add_argument("--domain", required=True)
    g.add_argument("--split", choices=("train", "test"), default="train")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_problems)

    t = sub.add_parser("train", help="train a generator")
    t.add_argument("--domain", required=True)
    t.add_argument("--algo", choices=("gc", "cem", "uniform"), default="gc")
    t.add_argument("--budget", type=int, default=50_000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--workers", type=int, default=default_workers())
    t.add_argument("--out", required=True)
    t.add_argument("--eval-interval", type=int, default=2_500)
    t.add_argument("--eval-samples", type=int, default=1000)
    t.add_argument("--population", type=int, default=16)
    t.add_argument("--elite-frac", type=float, default=0.25)
    t.add_argument("--lr-gen", type=float, default=1e-3)
    t.add_argument("--lr-critic", type=float, default=1e-3)
    t.add_argument("--entropy-coeff", type=float, default=1e-3)
    t.add_argument("--buffer-cap", type=int, default=10_000)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a problem set")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--problems", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--workers", type=int, default=default_workers())
    e.add_argument("--csv", help="per-instance objectives")
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("oracle-check", help="cross-check simulators against exact oracles")
    o.add_argument("--domain", default="Maze2D[5]")
    o.add_argument("--seeds", type=int, default=200)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--mc-pairs", type=int, default=5)
    o.add_argument("--mc-runs", type=int, default=20_000)
    o.add_argument("--inject-tie-break-bug", action="store_true", help=argparse.SUPPRESS)
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

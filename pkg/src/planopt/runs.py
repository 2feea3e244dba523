"""Run artifacts: generator checkpoints, metrics CSV and run manifests."""
from __future__ import annotations

import csv
import os
import subprocess
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .algorithms import (
    METRIC_COLUMNS,
    CEMOptimizer,
    GeneratorCritic,
    GeneratorPolicy,
    UniformGenerator,
)
from .grid2d import parse_domain


class CheckpointMismatch(ValueError):
    pass


def save_generator(est, path):
    meta = {"domain": est.domain.identifier}
    if isinstance(est, GeneratorCritic):
        gen = est.generator_
        meta.update(kind="gc", hidden=str(est.hidden))
        ad.save_weights(path, [gen.encoder.sizes], [gen.encoder.get_flat()], tail=gen.log_std.data, meta=meta)
    elif isinstance(est, CEMOptimizer):
        meta.update(kind="cem")
        ad.save_weights(path, [], [], tail=est.mean_, meta=meta)
    elif isinstance(est, UniformGenerator):
        meta.update(kind="uniform")
        ad.save_weights(path, [], [], meta=meta)
    else:
        raise TypeError(f"cannot checkpoint {type(est).__name__}")


def save_critic(est, path):
    net = est.critic_.net
    ad.save_weights(path, [net.sizes], [net.get_flat()], meta={"domain": est.domain.identifier, "kind": "critic"})


def load_generator(path, domain=None):
    """Rebuild a fitted generator estimator from a POPNN1 checkpoint."""
    sizes_list, weights, tail, meta = ad.load_weights(path)
    saved = parse_domain(meta["domain"])
    if domain is not None and domain != saved:
        raise CheckpointMismatch(f"checkpoint is for {saved.identifier}, not {domain.identifier}")
    kind = meta.get("kind")
    if kind == "gc":
        est = GeneratorCritic(domain=saved, hidden=int(meta["hidden"]))
        gen = GeneratorPolicy(saved.space, saved.instance_dim, np.random.default_rng(0), est.hidden)
        if tuple(sizes_list[0]) != gen.encoder.sizes:
            raise CheckpointMismatch(f"encoder sizes {sizes_list[0]} do not fit {saved.identifier}")
        gen.encoder.set_flat(weights[0])
        gen.log_std.data = tail.copy()
        est.generator_ = gen
    elif kind == "cem":
        est = CEMOptimizer(domain=saved)
        est.mean_ = tail.copy()
        est.best_ = saved.space.project(est.mean_)
    elif kind == "uniform":
        est = UniformGenerator(domain=saved).fit()
    else:
        raise CheckpointMismatch(f"{path}: unknown generator kind {kind!r}")
    return est


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        for row in history:
            w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])


def read_metrics_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(path, items):
    with open(path, "w") as f:
        for k, v in items.items():
            f.write(f"{k}={v}\n")


def read_manifest(path):
    with open(path) as f:
        return dict(line.rstrip("\n").split("=", 1) for line in f if "=" in line)


@dataclass
class TrainConfig:
    budget: int = 50_000
    eval_interval: int = 2_500
    eval_samples: int = 1000
    lr_gen: float = 1e-3
    lr_critic: float = 1e-3
    buffer_cap: int = 10_000
    entropy_coeff: float = 1e-3
    batch_size: int = 64
    population: int = 16
    elite_frac: float = 0.25
    workers: int = 1
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.budget < 1 or not 1 <= self.eval_interval <= self.budget:
            raise ValueError("need budget >= eval_interval >= 1")


def _prepare(out_dir):
    ckpt = None
    if out_dir is not None:
        ckpt = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt, exist_ok=True)
    return ckpt


def _finish(est, algo, domain, config, out_dir):
    if out_dir is None:
        return
    write_metrics_csv(est.history_, os.path.join(out_dir, "metrics.csv"))
    save_generator(est, os.path.join(out_dir, "generator.popnn"))
    if isinstance(est, GeneratorCritic):
        save_critic(est, os.path.join(out_dir, "critic.popnn"))
    items = {"domain": domain.identifier, "algo": algo, "seed": config.seed}
    items.update({k: v for k, v in asdict(config).items() if k not in ("seed", "extra")})
    items.update(config.extra)
    items.update(final_report=repr(est.final_score_), planner_calls=est.planner_calls_)
    if isinstance(est, CEMOptimizer):
        items.update(iterations=est.iterations_)
    items.update(git=git_describe())
    write_manifest(os.path.join(out_dir, "manifest.txt"), items)


def gc_train(domain, config, out_dir=None, train_set=None, eval_set=None, verbose=0):
    est = GeneratorCritic(
        domain=domain, budget=config.budget, eval_interval=config.eval_interval,
        eval_samples=config.eval_samples, lr_gen=config.lr_gen, lr_critic=config.lr_critic,
        batch_size=config.batch_size, buffer_cap=config.buffer_cap,
        entropy_coeff=config.entropy_coeff, workers=config.workers, random_state=config.seed,
        checkpoint_dir=_prepare(out_dir), verbose=verbose, **config.extra,
    )
    est.fit(train_set, eval_set=eval_set)
    _finish(est, "gc", domain, config, out_dir)
    return est


def cem_train(domain, config, out_dir=None, train_set=None, eval_set=None, verbose=0):
    est = CEMOptimizer(
        domain=domain, budget=config.budget, population=config.population,
        elite_frac=config.elite_frac, eval_interval=config.eval_interval,
        eval_samples=config.eval_samples, workers=config.workers, random_state=config.seed,
        checkpoint_dir=_prepare(out_dir), verbose=verbose, **config.extra,
    )
    est.fit(train_set, eval_set=eval_set)
    _finish(est, "cem", domain, config, out_dir)
    return est

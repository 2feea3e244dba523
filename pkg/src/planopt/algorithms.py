"""Generator training algorithms with a scikit-learn style interface.

All three estimators take the domain as a constructor parameter, are fitted on a
set of training instances and expose ``sample(X)`` (one parameter draw per
instance) and ``predict(X)`` (the deterministic/mean parameters).
"""
from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .domain import ProblemSet, planner_call, stream_rng
from .spaces import IntervalBlock

METRIC_COLUMNS = (
    "planner_calls",
    "wall_seconds",
    "train_objective_mean",
    "eval_objective_mean",
    "eval_objective_std",
    "critic_loss",
    "generator_loss",
    "skipped_steps",
)


# -- input validation -------------------------------------------------------------


def check_domain(domain):
    if domain is None or getattr(domain, "space", None) is None:
        raise ValueError("estimator needs a domain, e.g. RandomWalk2D(5)")
    return domain


def check_instances(X, domain):
    """Normalize ``X`` to a list of instances of ``domain``."""
    if isinstance(X, ProblemSet):
        if X.domain_name != domain.name or X.size != domain.size:
            raise ValueError(f"problem set is {X.domain_name}[{X.size}], estimator domain is {domain.identifier}")
        return list(X.instances)
    if hasattr(X, "occupancy"):
        return [X]
    X = list(X)
    if not X:
        raise ValueError("need at least one instance")
    return X


def check_encoded(E, domain):
    E = check_array(E, dtype=np.float64, ensure_2d=True)
    if E.shape[1] != domain.instance_dim:
        raise ValueError(f"encoded instances need {domain.instance_dim} features, got {E.shape[1]}")
    return E


# -- evaluation ---------------------------------------------------------------------


def _map(fn, items, workers):
    if workers is None or workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate(generator, problem_set, n=None, seed=0, workers=1, domain=None):
    """Mean and std of one planner call per instance with a generator sample.

    ``generator`` is anything with ``sample(instances, random_state)``; returns
    ``(mean, std, objectives)``. Each call draws from its own indexed stream, so
    results do not depend on ``workers``.
    """
    domain = domain or generator.domain
    instances = check_instances(problem_set, domain)
    n = len(instances) if n is None else int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    instances = [instances[i % len(instances)] for i in range(n)]
    xs = generator.sample(instances, random_state=stream_rng(seed, "eval-generator"))

    def run(i):
        return planner_call(domain, instances[i], xs[i], stream_rng(seed, "eval-planner", i)).objective

    objs = np.array(_map(run, range(n), workers))
    return float(objs.mean()), float(objs.std()), objs


def last_k_mean(history, k=5):
    vals = [row["eval_objective_mean"] for row in history if row.get("eval_objective_mean") is not None]
    if not vals:
        return float("nan")
    return float(np.mean(vals[-k:]))


# -- differentiable projection ----------------------------------------------------------


def project_tensor(space, raw, unit=False):
    """Autodiff version of ``space.project``; ``unit`` rescales intervals to [0, 1]."""
    parts = []
    for block, s in zip(space.blocks, space.slices):
        piece = ad.take(raw, (slice(None), s))
        if isinstance(block, IntervalBlock):
            p = ad.sigmoid(piece)
            if not unit:
                p = p * (block.high - block.low) + block.low
        else:
            p = ad.softmax(piece)
        parts.append(p)
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)


def project_unit(space, raw):
    """``space.project`` with intervals rescaled to [0, 1] (critic input scale)."""
    out = space.project(raw)
    for block, s in zip(space.blocks, space.slices):
        if isinstance(block, IntervalBlock):
            out[..., s] = (out[..., s] - block.low) / (block.high - block.low)
    return out


# -- networks -----------------------------------------------------------------------------


def _clamp_log_std(t):
    return ad.clamp(t, ad.LOG_STD_MIN, ad.LOG_STD_MAX)


class GeneratorPolicy:
    """Instance encoding -> Gaussian over raw parameters -> projection into the space."""

    def __init__(self, space, instance_dim, rng, hidden=64, init_log_std=0.0):
        self.space = space
        self.encoder = ad.MLP([instance_dim, hidden, hidden, space.flat_dim], rng, out_scale=0.1)
        self.log_std = ad.Tensor(np.full(space.flat_dim, float(init_log_std)), requires_grad=True)

    def parameters(self):
        return self.encoder.parameters() + [self.log_std]

    def std(self):
        return np.exp(np.clip(self.log_std.data, ad.LOG_STD_MIN, ad.LOG_STD_MAX))

    def mean_raw(self, enc):
        return self.encoder.forward_numpy(enc)

    def sample_raw(self, enc, eps):
        return self.mean_raw(enc) + self.std() * eps

    def raw_tensor(self, enc, eps):
        return ad.gaussian_reparam(self.encoder(enc), _clamp_log_std(self.log_std), eps)


class Critic:
    """(instance encoding, unit-scaled parameters) -> Gaussian (mu, log std) of the objective."""

    def __init__(self, instance_dim, flat_dim, rng, hidden=64):
        self.net = ad.MLP([instance_dim + flat_dim, hidden, hidden, 2], rng)

    def parameters(self):
        return self.net.parameters()

    def __call__(self, enc, x_unit):
        out = self.net(ad.concat([ad.Tensor(enc) if not isinstance(enc, ad.Tensor) else enc, x_unit], axis=-1))
        mu = ad.take(out, (slice(None), 0))
        log_std = _clamp_log_std(ad.take(out, (slice(None), 1)))
        return mu, log_std

    def predict(self, enc, x_unit):
        out = self.net.forward_numpy(np.concatenate([enc, x_unit], axis=-1))
        return out[:, 0], np.clip(out[:, 1], ad.LOG_STD_MIN, ad.LOG_STD_MAX)


class ReplayBuffer:
    def __init__(self, capacity, enc_dim, raw_dim):
        self.capacity = int(capacity)
        self.enc = np.zeros((self.capacity, enc_dim))
        self.raw = np.zeros((self.capacity, raw_dim))
        self.y = np.zeros(self.capacity)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, enc, raw, y):
        i = self._next
        self.enc[i], self.raw[i], self.y[i] = enc, raw, y
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch, rng):
        idx = rng.integers(self.size, size=batch)
        return self.enc[idx], self.raw[idx], self.y[idx]


# -- Generator-Critic ------------------------------------------------------------------------


@dataclass
class GCState:
    generator: GeneratorPolicy
    critic: Critic
    gen_opt: ad.Adam
    critic_opt: ad.Adam
    buffer: ReplayBuffer
    planner_calls: int = 0
    skipped_steps: int = 0


def critic_update(state, space, batch, critic_loss="nll"):
    enc, raw, y = batch
    x_unit = ad.Tensor(project_unit(space, raw))
    mu, log_std = state.critic(enc, x_unit)
    if critic_loss == "nll":
        loss = ad.mean(ad.gaussian_nll(y, mu, log_std))
    elif critic_loss == "mse":
        loss = ad.mean((mu - y) ** 2)
    else:
        raise ValueError(f"unknown critic loss {critic_loss!r}")
    return _apply(loss, state.critic_opt, state)


def generator_update(state, enc, eps, critic_fn, entropy_coeff=0.0):
    """One step on ``-mean(critic_fn(enc, raw)) - entropy_coeff * sum(log std)``.

    ``critic_fn`` receives the raw-parameter tensor so gradients reach the
    generator through the reparameterization.
    """
    raw = state.generator.raw_tensor(enc, eps)
    loss = -ad.mean(critic_fn(enc, raw))
    if entropy_coeff:
        loss = loss - entropy_coeff * ad.tsum(_clamp_log_std(state.generator.log_std))
    return _apply(loss, state.gen_opt, state)


def _apply(loss, opt, state):
    value = float(loss.data)
    if not math.isfinite(value):
        state.skipped_steps += 1
        return value
    opt.zero_grad()
    ad.backward(loss)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if not opt.step():
            state.skipped_steps += 1
    return value


def gc_step(domain, instances, encodings, state, rng, *, batch_size=64, entropy_coeff=1e-3,
            critic_loss="nll", warmup=64, seed=0):
    """Probe the planner once, then update critic and generator.

    Returns a metrics dict; exactly one planner call is consumed.
    """
    space = domain.space
    gen = state.generator
    i = int(rng.integers(len(instances)))
    enc = encodings[i]
    eps = rng.standard_normal(space.flat_dim)
    raw = gen.sample_raw(enc[None, :], eps[None, :])[0]
    y = planner_call(domain, instances[i], space.project(raw), stream_rng(seed, "gc-planner", state.planner_calls))
    state.planner_calls += 1
    state.buffer.push(enc, raw, y.objective)

    metrics = {"objective": y.objective, "critic_loss": None, "generator_loss": None}
    if len(state.buffer) < warmup:
        return metrics
    batch = state.buffer.sample(batch_size, rng)
    metrics["critic_loss"] = critic_update(state, space, batch, critic_loss)

    def critic_mu(e, raw_t):
        mu, _ = state.critic(e, project_tensor(space, raw_t, unit=True))
        return mu

    eps_b = rng.standard_normal((batch_size, space.flat_dim))
    metrics["generator_loss"] = generator_update(state, batch[0], eps_b, critic_mu, entropy_coeff)
    return metrics


class _Tracker:
    """Collects metric rows; the first row is the untrained evaluation."""

    def __init__(self, estimator, eval_set):
        self.est = estimator
        self.eval_set = eval_set
        self.rows = []
        self.t0 = time.perf_counter()
        self.objs = []
        self.critic_losses = []
        self.gen_losses = []

    def record(self, calls, skipped):
        est = self.est
        eval_seed = stream_rng(est.random_state, "eval").integers(2**63)
        m, s, _ = evaluate(est, self.eval_set, n=est.eval_samples, seed=int(eval_seed), workers=est.workers)

        def avg(v):
            return float(np.mean(v)) if v else None

        row = {
            "planner_calls": calls,
            "wall_seconds": time.perf_counter() - self.t0,
            "train_objective_mean": avg(self.objs),
            "eval_objective_mean": m,
            "eval_objective_std": s,
            "critic_loss": avg([c for c in self.critic_losses if c is not None]),
            "generator_loss": avg([g for g in self.gen_losses if g is not None]),
            "skipped_steps": skipped,
        }
        self.rows.append(row)
        self.objs, self.critic_losses, self.gen_losses = [], [], []
        if est.checkpoint_dir is not None:
            from .runs import save_generator

            save_generator(est, f"{est.checkpoint_dir}/ckpt_{calls:09d}.popnn")
        if est.verbose:
            print(f"[{type(est).__name__}] calls={calls} eval={m:.4f}±{s:.4f}", flush=True)
        return row


def _default_sets(domain, X, eval_set, seed):
    train = domain.create_problem_set("train", seed) if X is None else X
    test = domain.create_problem_set("test", seed) if eval_set is None else eval_set
    return check_instances(train, domain), check_instances(test, domain)


class GeneratorCritic(BaseEstimator):
    """Conditional stochastic generator trained through a learned critic.

    Parameters mirror the training configuration: ``budget`` planner calls in
    total, an evaluation (and checkpoint) every ``eval_interval`` calls on
    ``eval_samples`` held-out instances.
    """

    def __init__(self, domain=None, budget=50_000, eval_interval=2_500, eval_samples=1000,
                 lr_gen=1e-3, lr_critic=1e-3, batch_size=64, buffer_cap=10_000,
                 entropy_coeff=1e-3, hidden=64, init_log_std=-1.0, critic_loss="nll",
                 warmup=1000, workers=1, random_state=0, checkpoint_dir=None, verbose=0):
        self.domain = domain
        self.budget = budget
        self.eval_interval = eval_interval
        self.eval_samples = eval_samples
        self.lr_gen = lr_gen
        self.lr_critic = lr_critic
        self.batch_size = batch_size
        self.buffer_cap = buffer_cap
        self.entropy_coeff = entropy_coeff
        self.hidden = hidden
        self.init_log_std = init_log_std
        self.critic_loss = critic_loss
        self.warmup = warmup
        self.workers = workers
        self.random_state = random_state
        self.checkpoint_dir = checkpoint_dir
        self.verbose = verbose

    def _check_params(self):
        domain = check_domain(self.domain)
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 1 <= self.eval_interval <= self.budget:
            raise ValueError("need 1 <= eval_interval <= budget")
        if self.critic_loss not in ("nll", "mse"):
            raise ValueError(f"critic_loss must be 'nll' or 'mse', got {self.critic_loss!r}")
        return domain

    def init_state(self):
        domain = self._check_params()
        init_rng = stream_rng(self.random_state, "gc-init")
        gen = GeneratorPolicy(domain.space, domain.instance_dim, init_rng, self.hidden, self.init_log_std)
        critic = Critic(domain.instance_dim, domain.space.flat_dim, init_rng, self.hidden)
        return GCState(
            generator=gen,
            critic=critic,
            gen_opt=ad.Adam(gen.parameters(), lr=self.lr_gen),
            critic_opt=ad.Adam(critic.parameters(), lr=self.lr_critic),
            buffer=ReplayBuffer(self.buffer_cap, domain.instance_dim, domain.space.flat_dim),
        )

    def fit(self, X=None, y=None, eval_set=None):
        domain = self._check_params()
        train, test = _default_sets(domain, X, eval_set, self.random_state)
        encodings = domain.encode_many(train)
        state = self.init_state()
        self.state_ = state
        self.generator_ = state.generator
        self.critic_ = state.critic
        rng = stream_rng(self.random_state, "gc-train")
        tracker = _Tracker(self, test)
        tracker.record(0, 0)
        while state.planner_calls < self.budget:
            m = gc_step(
                domain, train, encodings, state, rng,
                batch_size=self.batch_size, entropy_coeff=self.entropy_coeff,
                critic_loss=self.critic_loss, warmup=self.warmup, seed=self.random_state,
            )
            tracker.objs.append(m["objective"])
            tracker.critic_losses.append(m["critic_loss"])
            tracker.gen_losses.append(m["generator_loss"])
            if state.planner_calls % self.eval_interval == 0 or state.planner_calls == self.budget:
                tracker.record(state.planner_calls, state.skipped_steps)
        self.history_ = tracker.rows
        self.planner_calls_ = state.planner_calls
        self.final_score_ = last_k_mean(self.history_)
        return self

    def sample(self, X, random_state=None):
        check_is_fitted(self, "generator_")
        enc = self.domain.encode_many(check_instances(X, self.domain))
        rng = np.random.default_rng(random_state)
        eps = rng.standard_normal((len(enc), self.domain.space.flat_dim))
        return self.domain.space.project(self.generator_.sample_raw(enc, eps))

    def predict(self, X):
        check_is_fitted(self, "generator_")
        enc = self.domain.encode_many(check_instances(X, self.domain))
        return self.predict_encoded(enc)

    def predict_encoded(self, E):
        check_is_fitted(self, "generator_")
        E = check_encoded(E, self.domain)
        return self.domain.space.project(self.generator_.mean_raw(E))

    def score(self, X, y=None):
        return evaluate(self, X, seed=self.random_state, workers=self.workers)[0]


# -- unconditional baselines ------------------------------------------------------------------


class CEMOptimizer(BaseEstimator):
    """Cross-entropy method over one instance-independent parameter vector.

    Candidates live in raw space; each is scored by the mean objective over
    ``n_instances`` freshly drawn training instances. The mean is refit to the
    elites outright while the std moves a fraction ``std_lr`` of the way, which
    keeps a 16-member population from collapsing before it reaches the optimum
    (``std_lr=1`` is the plain refit).
    """

    def __init__(self, domain=None, budget=40_000, population=16, elite_frac=0.25, n_instances=50,
                 init_std=1.0, std_floor=1e-3, std_lr=0.3, eval_interval=2_400, eval_samples=1000,
                 workers=1, random_state=0, checkpoint_dir=None, verbose=0):
        self.domain = domain
        self.budget = budget
        self.population = population
        self.elite_frac = elite_frac
        self.n_instances = n_instances
        self.init_std = init_std
        self.std_floor = std_floor
        self.std_lr = std_lr
        self.eval_interval = eval_interval
        self.eval_samples = eval_samples
        self.workers = workers
        self.random_state = random_state
        self.checkpoint_dir = checkpoint_dir
        self.verbose = verbose

    @property
    def calls_per_iteration(self):
        return self.population * self.n_instances

    def _check_params(self):
        domain = check_domain(self.domain)
        per_iter = self.calls_per_iteration
        if self.population < 2 or self.n_instances < 1:
            raise ValueError("need population >= 2 and n_instances >= 1")
        if not 0 < self.elite_frac <= 1:
            raise ValueError("elite_frac must be in (0, 1]")
        if not 0 < self.std_lr <= 1:
            raise ValueError("std_lr must be in (0, 1]")
        if self.budget < per_iter or self.budget % per_iter:
            raise ValueError(f"budget must be a positive multiple of population * n_instances = {per_iter}")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        return domain

    def fit(self, X=None, y=None, eval_set=None):
        domain = self._check_params()
        train, test = _default_sets(domain, X, eval_set, self.random_state)
        d = domain.space.flat_dim
        rng = stream_rng(self.random_state, "cem")
        self.mean_ = np.zeros(d)
        self.std_ = np.full(d, float(self.init_std))
        self.best_ = domain.space.project(self.mean_)
        n_elite = max(1, int(math.ceil(self.elite_frac * self.population)))
        calls = 0
        tracker = _Tracker(self, test)
        tracker.record(0, 0)
        next_eval = self.eval_interval
        self.iterations_ = 0
        while calls < self.budget:
            cands = self.mean_ + self.std_ * rng.standard_normal((self.population, d))
            xs = domain.space.project(cands)
            picks = [rng.choice(len(train), size=self.n_instances, replace=self.n_instances > len(train))
                     for _ in range(self.population)]
            base = calls

            def run(job):
                k, j = divmod(job, self.n_instances)
                return planner_call(
                    domain, train[picks[k][j]], xs[k], stream_rng(self.random_state, "cem-planner", base + job)
                ).objective

            objs = np.array(_map(run, range(self.calls_per_iteration), self.workers))
            calls += self.calls_per_iteration
            scores = objs.reshape(self.population, self.n_instances).mean(axis=1)
            elite = cands[np.argsort(-scores, kind="stable")[:n_elite]]
            self.mean_ = elite.mean(axis=0)
            std = self.std_lr * elite.std(axis=0) + (1 - self.std_lr) * self.std_
            self.std_ = np.maximum(std, self.std_floor)
            self.best_ = domain.space.project(self.mean_)
            self.iterations_ += 1
            tracker.objs.extend(objs.tolist())
            if calls >= next_eval or calls == self.budget:
                tracker.record(calls, 0)
                while next_eval <= calls:
                    next_eval += self.eval_interval
        self.history_ = tracker.rows
        self.planner_calls_ = calls
        self.final_score_ = last_k_mean(self.history_)
        return self

    def predict(self, X):
        check_is_fitted(self, "best_")
        n = len(check_instances(X, self.domain))
        return np.tile(self.best_, (n, 1))

    def sample(self, X, random_state=None):
        return self.predict(X)

    def score(self, X, y=None):
        return evaluate(self, X, seed=self.random_state, workers=self.workers)[0]


class UniformGenerator(BaseEstimator):
    """Draws parameters uniformly from the space, ignoring the instance."""

    def __init__(self, domain=None, random_state=0):
        self.domain = domain
        self.random_state = random_state

    def fit(self, X=None, y=None):
        check_domain(self.domain)
        self.space_ = self.domain.space
        return self

    def sample(self, X, random_state=None):
        check_is_fitted(self, "space_")
        n = len(check_instances(X, self.domain))
        return self.space_.sample(n, np.random.default_rng(random_state))

    predict = sample

    def score(self, X, y=None):
        return evaluate(self, X, seed=self.random_state)[0]
